"""Multi-UAV LoRa data-collection environment (partially observable, one agent per UAV)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from .association import AssociationMap, associate, build_gain_matrix, default_comm_range
from .config import EnvConfig
from .energy import enforce_power_budget, propulsion_power, uav_energy_efficiency, weighted_global_ee
from .geometry import KinematicLimits, MotionCommand, collision_flags, step_position
from .lora import SF_VALUES, TP_LEVELS_DBM, RadioSelection, dbm_to_watts, link_feasible

OWN_FEATURES = 11
ED_FEATURES = 4


@dataclass(frozen=True)
class ActionIndices:
    dir_idx: int
    speed_idx: int
    sf_idx: int
    tp_idx: int


def action_sizes(config: EnvConfig) -> tuple[int, int, int, int]:
    """Number of choices per action component: direction, speed, SF, TP."""
    return config.n_dir_intervals + 1, config.n_speed_levels + 1, len(SF_VALUES), len(TP_LEVELS_DBM)


def decode_action(idx: ActionIndices, config: EnvConfig) -> tuple[MotionCommand, RadioSelection]:
    sizes = action_sizes(config)
    for value, size in zip((idx.dir_idx, idx.speed_idx, idx.sf_idx, idx.tp_idx), sizes):
        if not 0 <= value < size:
            raise ValueError(f"action index {value} out of range [0, {size})")
    beta = config.beta
    theta = -beta / 2 + idx.dir_idx * (beta / config.n_dir_intervals)
    speed = idx.speed_idx * (config.s_max / config.n_speed_levels)
    return MotionCommand(theta, speed), RadioSelection(SF_VALUES[idx.sf_idx], TP_LEVELS_DBM[idx.tp_idx])


def compute_reward(assoc_flag, ee_sys, collided, d_cs, terminal, arrived, weights):
    """Per-agent step reward; returns ``(per_agent, team_total)``.

    ``assoc_flag``, ``collided`` and ``arrived`` are 0/1 per agent.
    """
    w1, w2, w3, w4, w5 = weights
    assoc_flag = np.asarray(assoc_flag, dtype=float)
    r = (
        w1 * assoc_flag
        + w2 * ee_sys
        - w3 * np.asarray(collided, dtype=float)
        - w4 * np.asarray(d_cs, dtype=float)
    )
    if terminal:
        r = r - w5 * (1.0 - np.asarray(arrived, dtype=float))
    return r, float(np.sum(r))


def gain_feature(gain):
    """Map linear gain to roughly [-1, 1]: 70 dB loss -> +1, 110 dB -> -1."""
    return (10.0 * np.log10(gain) + 90.0) / 20.0


@dataclass
class StepResult:
    observations: np.ndarray  # (U, obs_dim)
    rewards: np.ndarray  # (U,)
    team_reward: float
    done: bool
    info: dict = field(default_factory=dict)


class LoraUavEnv:
    """Single-writer environment; create one instance per worker."""

    def __init__(self, config: EnvConfig, record: bool = False):
        config.validate()
        self.config = config
        self.record = record
        self.limits = KinematicLimits(config.s_max, config.x_max, config.y_max, config.d_safe, config.dt)
        self.comm_range = config.comm_range if config.comm_range is not None else default_comm_range(
            config.altitude, config.channel
        )
        self.cs = np.array(config.cs_pos, dtype=float)
        self.obs_dim = OWN_FEATURES + ED_FEATURES * config.max_quota
        self._pos_scale = max(config.x_max, config.y_max)
        self._rng = np.random.default_rng(0)
        # speed levels are discrete, so the power-budget repair is a lookup
        levels = np.arange(config.n_speed_levels + 1) * (config.s_max / config.n_speed_levels)
        step = config.s_max / config.n_speed_levels
        self._allowed_speed = np.array([enforce_power_budget(v, config.rotor, step) for v in levels])
        self._allowed_power = np.asarray(propulsion_power(self._allowed_speed, config.rotor), dtype=float)
        self.t = 0
        self.done = True

    @property
    def n_agents(self) -> int:
        return self.config.n_uavs

    def reset(self, seed=None) -> np.ndarray:
        """Start an episode. ``seed=None`` continues the layout generator from the previous reset."""
        cfg = self.config
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self.eds = np.zeros((cfg.n_eds, 3))
        self.eds[:, 0] = self._rng.uniform(0.0, cfg.x_max, cfg.n_eds)
        self.eds[:, 1] = self._rng.uniform(0.0, cfg.y_max, cfg.n_eds)
        self.uavs = np.array([[x, y, cfg.altitude] for x, y in cfg.starts()], dtype=float)
        self.t = 0
        self.done = False
        self.theta = np.zeros(cfg.n_uavs)
        self.speed = np.zeros(cfg.n_uavs)
        self.sf_idx = np.zeros(cfg.n_uavs, dtype=int)
        self.tp_idx = np.zeros(cfg.n_uavs, dtype=int)
        self.prop_power = np.full(cfg.n_uavs, propulsion_power(0.0, cfg.rotor))
        self._associate()
        self.history = []
        return self._observe()

    def _associate(self) -> None:
        self.gain = build_gain_matrix(self.uavs, self.eds, self.config.channel)
        self.assoc: AssociationMap = associate(
            self.gain, self.uavs, self.eds, self.config.max_quota, self.comm_range
        )

    def _observe(self) -> np.ndarray:
        cfg = self.config
        obs = np.zeros((cfg.n_uavs, self.obs_dim))
        obs[:, 0] = self.sf_idx / (len(SF_VALUES) - 1)
        obs[:, 1] = self.tp_idx / (len(TP_LEVELS_DBM) - 1)
        obs[:, 2] = self.theta / (cfg.beta / 2)
        obs[:, 3] = self.speed / cfg.s_max
        obs[:, 4] = self.uavs[:, 0] / cfg.x_max
        obs[:, 5] = self.uavs[:, 1] / cfg.y_max
        obs[:, 6] = self.uavs[:, 2] / self._pos_scale
        obs[:, 7] = self.cs[0] / cfg.x_max
        obs[:, 8] = self.cs[1] / cfg.y_max
        obs[:, 9] = self.cs[2] / self._pos_scale
        obs[:, 10] = self.prop_power / cfg.rotor.p_max
        # serving is scanned in ascending ED order, so each UAV's blocks are ED-sorted
        feat = gain_feature(self.gain)
        for u in range(cfg.n_uavs):
            vs = np.flatnonzero(self.assoc.serving == u)
            block = obs[u, OWN_FEATURES:OWN_FEATURES + ED_FEATURES * len(vs)].reshape(-1, ED_FEATURES)
            block[:, 0] = self.eds[vs, 0] / cfg.x_max
            block[:, 1] = self.eds[vs, 1] / cfg.y_max
            block[:, 2] = feat[u, vs]
            block[:, 3] = 1.0
        return obs

    def step(self, actions) -> StepResult:
        if self.done:
            raise RuntimeError("episode finished; call reset() first")
        cfg = self.config
        actions = [a if isinstance(a, ActionIndices) else ActionIndices(*map(int, a)) for a in actions]
        if len(actions) != cfg.n_uavs:
            raise ValueError(f"expected {cfg.n_uavs} actions, got {len(actions)}")
        self.t += 1

        # decode, repair speed against the power budget, move (clamped)
        for u, a in enumerate(actions):
            motion, _ = decode_action(a, cfg)
            speed = self._allowed_speed[a.speed_idx]
            self.uavs[u] = step_position(self.uavs[u], MotionCommand(motion.theta, speed), self.cs, self.limits)
            self.theta[u] = motion.theta
            self.speed[u] = speed
            self.sf_idx[u] = a.sf_idx
            self.tp_idx[u] = a.tp_idx
            self.prop_power[u] = self._allowed_power[a.speed_idx]
        collided = collision_flags(self.uavs, cfg.d_safe)

        self._associate()
        metrics = self._link_metrics()

        d_cs = np.linalg.norm(self.uavs - self.cs, axis=1)
        arrived = (d_cs <= cfg.arrival_radius).astype(float)
        terminal = self.t >= cfg.max_steps
        rewards, team = compute_reward(
            metrics["uplink_flag"], metrics["ee_sys"], collided, d_cs, terminal, arrived, cfg.reward_weights
        )
        self.done = terminal
        obs = self._observe()
        info = {
            "t": self.t,
            "ee_sys": metrics["ee_sys"],
            "per_uav_ee": metrics["per_uav_ee"],
            "uplink_flag": metrics["uplink_flag"],
            "collisions": int(collided.sum()),
            "collided": collided,
            "associations": self.assoc.count,
            "arrivals": int(arrived.sum()),
            "arrived": arrived,
            "d_cs": d_cs,
            "tx_power_w": metrics["tx_power_w"],
            "propulsion_power_w": self.prop_power.copy(),
            "propulsion_energy_j": float(self.prop_power.sum() * cfg.dt),
        }
        if self.record:
            self.history.append(self._snapshot(info))
        return StepResult(obs, rewards, team, terminal, info)

    def _link_metrics(self) -> dict:
        cfg = self.config
        n_uav, n_ed = cfg.n_uavs, cfg.n_eds
        serving = self.assoc.serving
        active = serving >= 0
        sf = np.zeros(n_ed, dtype=int)
        tp_dbm = np.zeros(n_ed)
        snr_lin = np.zeros(n_ed)
        if active.any():
            srv = serving[active]
            sf[active] = np.asarray(SF_VALUES)[self.sf_idx[srv]]
            tp_dbm[active] = np.asarray(TP_LEVELS_DBM)[self.tp_idx[srv]]
            snr_lin[active] = ch.snr(tp_dbm[active], self.gain[srv, np.flatnonzero(active)], cfg.channel.noise_dbm)
        feasible = np.zeros(n_ed, dtype=bool)
        if active.any():
            feasible[active] = link_feasible(ch.linear_to_db(snr_lin[active]), sf[active])
        sinr = ch.co_sf_sinr(snr_lin, sf, active)
        rate = np.where(feasible, ch.achievable_rate(sinr, cfg.channel.bandwidth_hz), 0.0)
        tx_w = np.where(active, dbm_to_watts(tp_dbm), 0.0)
        per_uav = np.zeros(n_uav)
        uplink = np.zeros(n_uav)
        for u in range(n_uav):
            mine = serving == u
            per_uav[u] = uav_energy_efficiency(rate[mine], tx_w[mine], cfg.circuit_power_w)
            uplink[u] = float(np.any(feasible & mine))
        return {
            "per_uav_ee": per_uav,
            "ee_sys": weighted_global_ee(per_uav),
            "uplink_flag": uplink,
            "tx_power_w": float(tx_w.sum()),
            "rate": rate,
        }

    def _snapshot(self, info: dict) -> dict:
        return {
            "t": self.t,
            "uavs": [
                {
                    "id": u,
                    "x": float(self.uavs[u, 0]),
                    "y": float(self.uavs[u, 1]),
                    "z": float(self.uavs[u, 2]),
                    "speed": float(self.speed[u]),
                    "sf": int(SF_VALUES[self.sf_idx[u]]),
                    "tp_dbm": float(TP_LEVELS_DBM[self.tp_idx[u]]),
                    "associated_ed_ids": self.assoc.eds_of(u),
                }
                for u in range(self.config.n_uavs)
            ],
            "metrics": {
                "ee_sys": float(info["ee_sys"]),
                "collisions": info["collisions"],
                "associations": info["associations"],
                "arrivals": info["arrivals"],
                "tx_power_w": info["tx_power_w"],
            },
        }

    def state_dict(self) -> dict:
        """JSON-ready dump: ED layout, current UAV state, associations, recorded steps."""
        return {
            "t": self.t,
            "max_steps": self.config.max_steps,
            "max_quota": self.config.max_quota,
            "cs": self.cs.tolist(),
            "eds": self.eds.tolist(),
            "uavs": self.uavs.tolist(),
            "associations": [list(p) for p in self.assoc.pairs],
            "steps": list(self.history),
        }


def global_observation(obs: np.ndarray, agent_id: bool = True) -> np.ndarray:
    """Critic input per agent: all local observations concatenated (+ agent one-hot when U > 1)."""
    n = obs.shape[0]
    flat = np.broadcast_to(obs.reshape(1, -1), (n, obs.size))
    if agent_id and n > 1:
        return np.concatenate([flat, np.eye(n)], axis=1)
    return np.array(flat)

