import json
import math
from pathlib import Path

import numpy as np
import pytest

from uavlora.config import EnvConfig
from uavlora.energy import weighted_global_ee
from uavlora.env import (
    ED_FEATURES,
    OWN_FEATURES,
    ActionIndices,
    LoraUavEnv,
    action_sizes,
    compute_reward,
    decode_action,
    global_observation,
)

W = (10.0, 1e-5, 200.0, 2.0, 400.0)
FIXTURE = Path(__file__).parent / "fixtures" / "golden_obs_seed7.json"


def random_actions(rng, cfg):
    sizes = action_sizes(cfg)
    return [ActionIndices(*(int(rng.integers(n)) for n in sizes)) for _ in range(cfg.n_uavs)]


def test_defaults():
    cfg = EnvConfig()
    assert cfg.max_steps == 200 and cfg.dt == 2.0
    assert (cfg.n_speed_levels, cfg.n_dir_intervals) == (5, 16)
    assert cfg.cs_pos == (900.0, 900.0, 150.0)
    assert cfg.reward_weights == W
    assert action_sizes(cfg) == (17, 6, 6, 5)


def test_decode_direction_and_speed():
    cfg = EnvConfig()
    assert decode_action(ActionIndices(0, 0, 0, 0), cfg)[0].theta == pytest.approx(-math.pi / 3)
    assert decode_action(ActionIndices(16, 0, 0, 0), cfg)[0].theta == pytest.approx(math.pi / 3)
    assert decode_action(ActionIndices(8, 0, 0, 0), cfg)[0].theta == pytest.approx(0.0, abs=1e-15)
    motion, radio = decode_action(ActionIndices(8, 5, 5, 4), cfg)
    assert motion.speed == 30.0 and radio.sf == 12 and radio.tp_dbm == 14.0
    with pytest.raises(ValueError):
        decode_action(ActionIndices(17, 0, 0, 0), cfg)


def test_reward_examples():
    r, team = compute_reward([1], 1e5, [0], [100.0], False, [0], W)
    assert r.tolist() == [10 + 1 - 200] == [-189]
    assert team == -189
    r, team = compute_reward([0, 0], 0.0, [0, 0], [0.0, 0.0], False, [0, 0], W)
    assert r.tolist() == [0.0, 0.0] and team == 0.0
    r, _ = compute_reward([0], 0.0, [1], [0.0], True, [0], W)
    assert r.tolist() == [-600.0]


def test_reset_determinism_and_golden():
    env = LoraUavEnv(EnvConfig())
    a = env.reset(seed=7)
    eds = env.eds.copy()
    b = env.reset(seed=7)
    assert np.array_equal(a, b) and np.array_equal(eds, env.eds)
    golden = np.array(json.loads(FIXTURE.read_text())["observations"])
    assert np.array_equal(a, golden)


def test_no_eds_masks_everything():
    env = LoraUavEnv(EnvConfig(n_eds=0))
    obs = env.reset(seed=1)
    assert np.all(obs[:, OWN_FEATURES:] == 0)
    res = env.step([ActionIndices(8, 1, 0, 0)] * 2)
    assert np.all(res.observations[:, OWN_FEATURES:] == 0) and res.info["ee_sys"] == 0.0


def test_distance_shaping_only():
    cfg = EnvConfig(comm_range=1.0)  # nobody in range
    env = LoraUavEnv(cfg)
    env.reset(seed=3)
    res = env.step([ActionIndices(8, 0, 0, 0)] * 2)
    d = np.linalg.norm(env.uavs - np.array(cfg.cs_pos), axis=1)
    np.testing.assert_array_equal(res.rewards, -2.0 * d)
    assert res.info["associations"] == 0


def test_collision_penalty():
    cfg = EnvConfig(start_positions=((100.0, 100.0), (101.0, 100.0)), comm_range=1.0)
    env = LoraUavEnv(cfg)
    env.reset(seed=3)
    res = env.step([ActionIndices(8, 0, 0, 0)] * 2)
    d = res.info["d_cs"]
    np.testing.assert_allclose(res.rewards, -200.0 - 2.0 * d, rtol=0, atol=1e-12)
    assert res.info["collisions"] == 2


def test_terminal_penalty():
    cfg = EnvConfig(duration_s=2.0, comm_range=1.0, n_uavs=1)
    env = LoraUavEnv(cfg)
    env.reset(seed=3)
    res = env.step([ActionIndices(8, 0, 0, 0)])
    assert res.done
    assert res.rewards[0] == pytest.approx(-2.0 * res.info["d_cs"][0] - 400.0)
    with pytest.raises(RuntimeError):
        env.step([ActionIndices(8, 0, 0, 0)])


def test_arrival_removes_terminal_penalty():
    cfg = EnvConfig(duration_s=2.0, comm_range=1.0, n_uavs=1, start_positions=((880.0, 880.0),))
    env = LoraUavEnv(cfg)
    env.reset(seed=3)
    res = env.step([ActionIndices(8, 0, 0, 0)])
    assert res.info["arrivals"] == 1
    assert res.rewards[0] == pytest.approx(-2.0 * res.info["d_cs"][0])


def test_rollout_invariants():
    cfg = EnvConfig(n_uavs=3, n_eds=70, max_quota=10)
    env = LoraUavEnv(cfg, record=True)
    rng = np.random.default_rng(0)
    obs = env.reset(seed=11)
    for _ in range(cfg.max_steps):
        res = env.step(random_actions(rng, cfg))
        info = res.info
        assert res.observations.shape == obs.shape == (3, OWN_FEATURES + ED_FEATURES * 10)
        assert np.all(env.uavs[:, 0] >= 0) and np.all(env.uavs[:, 0] <= cfg.x_max)
        assert np.all(env.uavs[:, 1] >= 0) and np.all(env.uavs[:, 1] <= cfg.y_max)
        a = env.assoc.matrix
        assert np.all(a.sum(axis=0) <= 1) and np.all(a.sum(axis=1) <= cfg.max_quota)
        assert res.team_reward == float(np.sum(res.rewards))
        assert info["ee_sys"] == weighted_global_ee(info["per_uav_ee"])
        assert np.all(info["propulsion_power_w"] <= cfg.rotor.p_max)
        masks = res.observations[:, OWN_FEATURES + 3::ED_FEATURES]
        assert masks.sum() == info["associations"]
    assert len(env.state_dict()["steps"]) == cfg.max_steps


def test_step_determinism():
    cfg = EnvConfig(n_eds=20)
    runs = []
    for _ in range(2):
        env = LoraUavEnv(cfg)
        rng = np.random.default_rng(5)
        env.reset(seed=9)
        out = []
        for _ in range(30):
            r = env.step(random_actions(rng, cfg))
            out.append((r.observations.tobytes(), r.rewards.tobytes(), r.info["ee_sys"]))
        runs.append(out)
    assert runs[0] == runs[1]


def test_power_budget_repairs_speed():
    cfg = EnvConfig()
    cfg.rotor = type(cfg.rotor)(p_max=0.5 * (346.0 + 220.0))
    env = LoraUavEnv(cfg)
    env.reset(seed=1)
    res = env.step([ActionIndices(8, 5, 0, 0)] * 2)
    assert np.all(env.speed == 24.0)
    assert np.all(res.info["propulsion_power_w"] <= cfg.rotor.p_max)


def test_global_observation():
    obs = np.arange(6.0).reshape(2, 3)
    g = global_observation(obs)
    assert g.shape == (2, 8)
    np.testing.assert_array_equal(g[1], [0, 1, 2, 3, 4, 5, 0, 1])
    assert global_observation(obs[:1]).shape == (1, 3)


def test_wrong_action_count():
    env = LoraUavEnv(EnvConfig())
    env.reset(seed=1)
    with pytest.raises(ValueError):
        env.step([ActionIndices(0, 0, 0, 0)])
