"""Multi-agent PPO with recurrent actors and a centralized (or per-agent) critic."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .env import LoraUavEnv, action_sizes, global_observation
from .nn import (
    Adam,
    FrozenStack,
    RecurrentNet,
    Tensor,
    categorical_entropy,
    categorical_log_prob,
    maximum,
    minimum,
    sample_action,
)

log = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "episode",
    "step_count",
    "team_reward",
    "ee_sys",
    "total_tx_power",
    "propulsion_energy",
    "collisions",
    "arrivals",
]


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


# ----------------------------------------------------------------------------
# advantage estimation and losses


def compute_gae(rewards, values, dones, gamma: float, gae_lambda: float, last_value=0.0):
    """Generalized advantage estimates and returns.

    ``dones[t] = 1`` marks that the episode ends after step ``t``; the value
    after a terminal step is taken as 0. Arrays are (T,) or (T, N).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0])
    next_value = np.asarray(last_value, dtype=float) * np.ones_like(rewards[0])
    for t in reversed(range(T)):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * gae_lambda * live * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def _masked_mean(x: Tensor, mask) -> Tensor:
    if mask is None:
        return x.mean()
    mask = np.asarray(mask, dtype=float)
    return (x * mask).sum() * (1.0 / mask.sum())


def actor_loss(log_probs_new: Tensor, log_probs_old, advantages, clip: float,
               entropy: Tensor | None = None, entropy_coef: float = 0.0, mask=None) -> Tensor:
    """Negated clipped surrogate plus entropy bonus, averaged over the batch."""
    ratio = (log_probs_new - Tensor(log_probs_old)).exp()
    adv = np.asarray(advantages, dtype=float)
    objective = minimum(ratio * adv, ratio.clip(1.0 - clip, 1.0 + clip) * adv)
    if entropy is not None and entropy_coef:
        objective = objective + entropy * entropy_coef
    return -_masked_mean(objective, mask)


def critic_loss(values_new: Tensor, values_old, returns, clip: float, mask=None) -> Tensor:
    """Clipped value loss: the worse of the raw and the old-value-clipped squared errors."""
    old = np.asarray(values_old, dtype=float)
    ret = np.asarray(returns, dtype=float)
    clipped = (values_new - old).clip(-clip, clip) + old
    return _masked_mean(maximum((values_new - ret).square(), (clipped - ret).square()), mask)


class RunningNorm:
    """Running mean/variance of critic targets (merged batch statistics)."""

    def __init__(self):
        self.count = 0.0
        self.mean = 0.0
        self.var = 1.0

    def update(self, x) -> None:
        x = np.asarray(x, dtype=float).ravel()
        if x.size == 0:
            return
        n, m, v = float(x.size), float(x.mean()), float(x.var())
        total = self.count + n
        delta = m - self.mean
        self.var = (self.count * self.var + n * v + delta * delta * self.count * n / total) / total
        self.mean += delta * n / total
        self.count = total

    @property
    def std(self) -> float:
        return math.sqrt(max(self.var, 1e-8))

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def denormalize(self, x):
        return np.asarray(x, dtype=float) * self.std + self.mean


# ----------------------------------------------------------------------------
# rollout storage


@dataclass
class EpisodeRecord:
    obs: np.ndarray  # (T, U, obs_dim)
    gobs: np.ndarray  # (T, U, critic_dim)
    h_actor: np.ndarray  # (T, U, H) hidden state entering step t
    h_critic: np.ndarray  # (T, U, H)
    actions: np.ndarray  # (T, U, 4)
    log_probs: np.ndarray  # (T, U)
    rewards: np.ndarray  # (T, U)
    values: np.ndarray  # (T, U) critic output (normalised scale)
    dones: np.ndarray  # (T,)


class RolloutBuffer:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self.episodes: list[EpisodeRecord] = []

    def add(self, ep: EpisodeRecord) -> None:
        if self.full:
            raise RuntimeError("rollout buffer full; update before adding")
        self.episodes.append(ep)

    @property
    def full(self) -> bool:
        return len(self.episodes) >= self.capacity

    def __len__(self) -> int:
        return len(self.episodes)

    def flush(self) -> list[EpisodeRecord]:
        eps, self.episodes = self.episodes, []
        return eps


def _chunk(arr: np.ndarray, starts: np.ndarray, length: int) -> np.ndarray:
    """(T, ...) -> (length, n_chunks, ...), zero-padded past the end."""
    T = arr.shape[0]
    out = np.zeros((length, len(starts)) + arr.shape[1:], dtype=arr.dtype)
    for j, s in enumerate(starts):
        n = min(length, T - s)
        out[:n, j] = arr[s:s + n]
    return out


# ----------------------------------------------------------------------------
# training


@dataclass
class TrainingReport:
    config: dict
    seed: int
    n_agents: int
    rows: list[dict] = field(default_factory=list)
    update_stats: list[dict] = field(default_factory=list)
    trajectories: list[dict] = field(default_factory=list)

    @property
    def columns(self) -> list[str]:
        return METRIC_COLUMNS + [f"reward_agent_{u}" for u in range(self.n_agents)]

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=float)

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_fmt(row[c]) for c in self.columns])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


class MappoTrainer:
    """Owns the environment, networks and optimisers for one seeded run."""

    def __init__(self, config: RunConfig, record_episodes: set[int] | None = None):
        self.config = config.validate()
        env_cfg, ppo = config.env, config.ppo
        self.env = LoraUavEnv(env_cfg, record=bool(record_episodes))
        self.record_episodes = record_episodes or set()
        self.U = env_cfg.n_uavs
        self.H = ppo.hidden
        self.sizes = action_sizes(env_cfg)
        seq = np.random.SeedSequence(config.seed)
        env_seed, init_seed, sample_seed = seq.spawn(3)
        self.env_seed = int(env_seed.generate_state(1)[0])
        init_rng = np.random.default_rng(init_seed)
        self.rng = np.random.default_rng(sample_seed)

        obs_dim = self.env.obs_dim
        self.actor_in = obs_dim + (self.U if ppo.share_actor and self.U > 1 else 0)
        n_actor_nets = 1 if ppo.share_actor else self.U
        self.actors = [RecurrentNet(self.actor_in, self.H, self.sizes, init_rng, head_gain=0.01)
                       for _ in range(n_actor_nets)]
        if ppo.centralized_critic:
            self.critic_in = global_observation(np.zeros((self.U, obs_dim))).shape[1]
            self.critics = [RecurrentNet(self.critic_in, self.H, [1], init_rng)]
        else:
            self.critic_in = obs_dim
            self.critics = [RecurrentNet(obs_dim, self.H, [1], init_rng) for _ in range(self.U)]
        opt = dict(lr=ppo.lr, betas=ppo.adam_betas, eps=ppo.adam_eps, max_grad_norm=ppo.max_grad_norm)
        self.actor_opts = [Adam(a.parameters(), **opt) for a in self.actors]
        self.critic_opts = [Adam(c.parameters(), **opt) for c in self.critics]
        self.value_norm = RunningNorm() if ppo.value_norm else None
        self.buffer = RolloutBuffer(ppo.buffer_episodes)
        self.episode = 0
        self.refresh_snapshots()

    # -- policy evaluation -----------------------------------------------
    def _actor_input(self, obs: np.ndarray) -> np.ndarray:
        if self.actor_in == obs.shape[-1]:
            return obs
        return np.concatenate([obs, np.eye(self.U)], axis=1)

    def _critic_input(self, obs: np.ndarray) -> np.ndarray:
        return global_observation(obs) if self.config.ppo.centralized_critic else obs

    def refresh_snapshots(self) -> None:
        self._actor_snap = FrozenStack(self.actors)
        self._critic_snap = FrozenStack(self.critics)

    def act(self, obs: np.ndarray, h: np.ndarray):
        """Sample actions for all agents; returns (actions, log_probs, new hidden)."""
        x = self._actor_input(obs)
        if len(self.actors) == 1:
            logits, h_new = self._actor_snap.step(x[None], h[None])
        else:
            logits, h_new = self._actor_snap.step(x[:, None, :], h[:, None, :])
        actions, logp, _ = sample_action([lg.reshape(self.U, -1) for lg in logits], self.rng)
        return actions, logp, h_new.reshape(self.U, -1)

    def values(self, gobs: np.ndarray, h: np.ndarray):
        if len(self.critics) == 1:
            (v,), h_new = self._critic_snap.step(gobs[None], h[None])
        else:
            (v,), h_new = self._critic_snap.step(gobs[:, None, :], h[:, None, :])
        return v.reshape(self.U), h_new.reshape(self.U, -1)

    # -- rollout -----------------------------------------------------------
    def collect_episode(self) -> tuple[EpisodeRecord, dict]:
        env, U, H = self.env, self.U, self.H
        T = env.config.max_steps
        obs = env.reset(seed=self.env_seed if self.episode == 0 else None)
        rec = EpisodeRecord(
            obs=np.zeros((T, U, env.obs_dim)),
            gobs=np.zeros((T, U, self.critic_in)),
            h_actor=np.zeros((T, U, H)),
            h_critic=np.zeros((T, U, H)),
            actions=np.zeros((T, U, len(self.sizes)), dtype=np.int64),
            log_probs=np.zeros((T, U)),
            rewards=np.zeros((T, U)),
            values=np.zeros((T, U)),
            dones=np.zeros(T),
        )
        h_a = np.zeros((U, H))
        h_c = np.zeros((U, H))
        totals = dict(team_reward=0.0, ee_sys=0.0, total_tx_power=0.0, propulsion_energy=0.0, collisions=0)
        agent_rewards = np.zeros(U)
        info = {}
        for t in range(T):
            gobs = self._critic_input(obs)
            rec.obs[t], rec.gobs[t], rec.h_actor[t], rec.h_critic[t] = obs, gobs, h_a, h_c
            actions, logp, h_a = self.act(obs, h_a)
            value, h_c = self.values(gobs, h_c)
            result = env.step(actions)
            rec.actions[t], rec.log_probs[t], rec.values[t] = actions, logp, value
            rec.rewards[t] = result.rewards
            info = result.info
            totals["team_reward"] += result.team_reward
            totals["ee_sys"] += info["ee_sys"]
            totals["total_tx_power"] += info["tx_power_w"]
            totals["propulsion_energy"] += info["propulsion_energy_j"]
            totals["collisions"] += info["collisions"]
            agent_rewards += result.rewards
            obs = result.observations
        rec.dones[-1] = 1.0
        row = {"episode": self.episode, "step_count": T, **totals, "arrivals": int(info.get("arrivals", 0))}
        for u in range(U):
            row[f"reward_agent_{u}"] = float(agent_rewards[u])
        return rec, row

    # -- update ------------------------------------------------------------
    def update(self) -> dict:
        episodes = self.buffer.flush()
        if not episodes:
            raise RuntimeError("cannot update from an empty rollout buffer")
        ppo = self.config.ppo
        U, T = self.U, episodes[0].rewards.shape[0]

        rewards = np.stack([e.rewards for e in episodes])  # (E, T, U)
        if ppo.shared_reward:
            rewards = np.repeat(rewards.sum(axis=2, keepdims=True), U, axis=2)
        values_norm = np.stack([e.values for e in episodes])
        values = self.value_norm.denormalize(values_norm) if self.value_norm else values_norm
        adv = np.zeros_like(rewards)
        ret = np.zeros_like(rewards)
        for i, e in enumerate(episodes):
            adv[i], ret[i] = compute_gae(rewards[i], values[i], e.dones, ppo.gamma, ppo.gae_lambda)
        if self.value_norm:
            self.value_norm.update(ret)
            ret_target = self.value_norm.normalize(ret)
        else:
            ret_target = ret
        if ppo.normalize_advantages:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)

        L = ppo.chunk_len
        starts = np.arange(0, T, L)

        def chunks(per_episode):  # list of (T, U, ...) -> (L, E*C, U, ...)
            return np.concatenate([_chunk(x, starts, L) for x in per_episode], axis=1)

        mask = chunks([np.ones((T, U)) for _ in episodes])
        data = {
            "obs": chunks([e.obs for e in episodes]),
            "gobs": chunks([e.gobs for e in episodes]),
            "actions": chunks([e.actions for e in episodes]),
            "logp": chunks([e.log_probs for e in episodes]),
            "adv": chunks(list(adv)),
            "ret": chunks(list(ret_target)),
            "vold": chunks(list(values_norm)),
        }
        h0_a = np.concatenate([e.h_actor[starts] for e in episodes], axis=0)  # (E*C, U, H)
        h0_c = np.concatenate([e.h_critic[starts] for e in episodes], axis=0)
        n_chunks = h0_a.shape[0]

        stats = {"actor_loss": 0.0, "critic_loss": 0.0, "n_steps": 0}
        for _ in range(ppo.epochs):
            order = self.rng.permutation(n_chunks)
            for mb in np.array_split(order, ppo.minibatches):
                if mb.size == 0:
                    continue
                a_loss = self._actor_step(data, h0_a, mask, mb)
                c_loss = self._critic_step(data, h0_c, mask, mb)
                stats["actor_loss"] += a_loss
                stats["critic_loss"] += c_loss
                stats["n_steps"] += 1
        self.refresh_snapshots()
        if stats["n_steps"]:
            stats["actor_loss"] /= stats["n_steps"]
            stats["critic_loss"] /= stats["n_steps"]
        return stats

    def _agent_batch(self, data, h0, mask, mb, agents, obs_key):
        """Stack the chosen agents' chunks along the batch axis."""
        obs = data[obs_key][:, mb][:, :, agents]  # (L, b, k, D)
        L, b, k = obs.shape[:3]
        if obs_key == "obs" and self.actor_in != obs.shape[-1]:
            onehot = np.broadcast_to(np.eye(self.U)[agents], (L, b, k, self.U))
            obs = np.concatenate([obs, onehot], axis=-1)
        flat = lambda x: x[:, mb][:, :, agents].reshape((L, b * k) + x.shape[3:])  # noqa: E731
        return (
            obs.reshape(L, b * k, -1),
            h0[mb][:, agents].reshape(b * k, -1),
            flat(mask),
            flat,
        )

    def _actor_step(self, data, h0, mask, mb) -> float:
        ppo = self.config.ppo
        groups = [list(range(self.U))] if len(self.actors) == 1 else [[u] for u in range(self.U)]
        total = 0.0
        for net, opt, agents in zip(self.actors, self.actor_opts, groups):
            obs, h, m, flat = self._agent_batch(data, h0, mask, mb, agents, "obs")
            L, B = obs.shape[:2]
            logits = net.sequence(obs, h)
            acts = flat(data["actions"]).reshape(L * B, -1)
            logp = categorical_log_prob(logits, acts)
            ent = categorical_entropy(logits)
            loss = actor_loss(logp, flat(data["logp"]).reshape(-1), flat(data["adv"]).reshape(-1),
                              ppo.clip, ent, ppo.entropy_coef, m.reshape(-1))
            total += self._apply(loss, opt, "actor")
        return total / len(self.actors)

    def _critic_step(self, data, h0, mask, mb) -> float:
        ppo = self.config.ppo
        groups = [list(range(self.U))] if len(self.critics) == 1 else [[u] for u in range(self.U)]
        total = 0.0
        for net, opt, agents in zip(self.critics, self.critic_opts, groups):
            obs, h, m, flat = self._agent_batch(data, h0, mask, mb, agents, "gobs")
            (v,) = net.sequence(obs, h)
            loss = critic_loss(v.reshape(-1), flat(data["vold"]).reshape(-1), flat(data["ret"]).reshape(-1),
                               ppo.clip, m.reshape(-1))
            total += self._apply(loss, opt, "critic")
        return total / len(self.critics)

    def _apply(self, loss: Tensor, opt: Adam, which: str) -> float:
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(
                f"non-finite {which} loss at episode {self.episode}",
                {"episode": self.episode, "which": which, "loss": repr(value), "seed": self.config.seed},
            )
        opt.zero_grad()
        loss.backward()
        norm = opt.step()
        if not math.isfinite(norm):
            raise TrainingDiverged(
                f"non-finite {which} gradient at episode {self.episode}",
                {"episode": self.episode, "which": which, "grad_norm": repr(norm), "seed": self.config.seed},
            )
        return value

    # -- main loop ---------------------------------------------------------
    def train(self, episodes: int | None = None) -> TrainingReport:
        n_episodes = self.config.episodes if episodes is None else episodes
        report = TrainingReport(config=self.config.to_dict(), seed=self.config.seed, n_agents=self.U)
        for _ in range(n_episodes):
            rec, row = self.collect_episode()
            if self.episode in self.record_episodes:
                report.trajectories.append({"episode": self.episode, **self.env.state_dict()})
            report.rows.append(row)
            self.buffer.add(rec)
            self.episode += 1
            if self.buffer.full:
                report.update_stats.append({"episode": self.episode, **self.update()})
        if len(self.buffer):
            report.update_stats.append({"episode": self.episode, **self.update()})
        log.debug("seed %d finished %d episodes", self.config.seed, n_episodes)
        return report

    def modules(self) -> dict:
        mods = {f"actor{i}": a for i, a in enumerate(self.actors)}
        mods.update({f"critic{i}": c for i, c in enumerate(self.critics)})
        return mods


def train(config: RunConfig, record_episodes: set[int] | None = None) -> TrainingReport:
    """Train a fresh set of agents for ``config.episodes`` episodes."""
    return MappoTrainer(config, record_episodes).train()


def ippo_variant(config: RunConfig, record_episodes: set[int] | None = None) -> TrainingReport:
    """Same loop with per-agent critics on local observations (no centralized critic)."""
    cfg = RunConfig.from_dict(config.to_dict())
    cfg.ppo.centralized_critic = False
    return train(cfg, record_episodes)


def run_manifest(report: TrainingReport, code_version: str) -> str:
    return json.dumps(
        {"seed": report.seed, "config": report.config, "code_version": code_version, "columns": report.columns},
        indent=2,
        sort_keys=True,
    )
