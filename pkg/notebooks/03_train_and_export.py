# %% [markdown]
# Short MAPPO run at desk scale (2 UAVs, 10 EDs), compared with the
# independent-critic variant, then exported the way the experiment runner does.

# %%
import tempfile
from pathlib import Path

import numpy as np

from uavlora.config import RunConfig
from uavlora.experiment import execute_run
from uavlora.mappo import ippo_variant, train

cfg = RunConfig.from_dict({"env": {"n_eds": 10}, "episodes": 60, "seed": 7})

# %%
mappo = train(cfg)
ippo = ippo_variant(cfg)


def window(report, name="team_reward", n=10):
    x = report.column(name)
    return x[:n].mean(), x[-n:].mean()


print("MAPPO team reward first/last 10 episodes: %.0f / %.0f" % window(mappo))
print("IPPO  team reward first/last 10 episodes: %.0f / %.0f" % window(ippo))

# %%
print("update stats (last):", mappo.update_stats[-1])
print(mappo.csv_text().splitlines()[0])

# %%
# run directory with metrics.csv, manifest.json and a trajectory dump of the final episode
out = Path(tempfile.mkdtemp()) / "demo"
execute_run(cfg, out, dump_episodes=[-1])
print(sorted(p.name for p in out.iterdir()))
