# %% [markdown]
# One episode of the multi-UAV environment under a fixed heuristic:
# fly straight at the charging station at a medium speed, SF9, 8 dBm.

# %%
import numpy as np

from uavlora.config import EnvConfig
from uavlora.env import ActionIndices, LoraUavEnv, action_sizes

cfg = EnvConfig(n_uavs=2, n_eds=30)
env = LoraUavEnv(cfg, record=True)
obs = env.reset(seed=7)
print("action sizes (direction, speed, SF, TP):", action_sizes(cfg))
print("observation shape:", obs.shape)

# %%
straight = ActionIndices(dir_idx=cfg.n_dir_intervals // 2, speed_idx=3, sf_idx=2, tp_idx=2)
total = np.zeros(cfg.n_uavs)
while True:
    res = env.step([straight] * cfg.n_uavs)
    total += res.rewards
    if res.info["t"] % 25 == 0:
        print(f"t={res.info['t']:3d}  d_cs={np.round(res.info['d_cs'], 1)}  assoc={res.info['associations']}"
              f"  EE_sys={res.info['ee_sys']:.3e}")
    if res.done:
        break

# %%
print("episode reward per UAV:", total)
print("arrived:", res.info["arrived"])

# %%
# the recorded history is plain JSON-ready data
state = env.state_dict()
first = state["steps"][0]["uavs"][0]
print({k: first[k] for k in ("id", "x", "y", "speed", "sf", "tp_dbm")}, len(first["associated_ed_ids"]), "EDs")
