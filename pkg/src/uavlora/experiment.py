"""Experiment runner: seed sweeps and grids, per-run CSV/JSON artifacts, summary aggregation.

A run directory holds ``metrics.csv`` (fixed column order, see
``mappo.METRIC_COLUMNS``), ``manifest.json`` (full config, seed, code
version) and, when requested, ``dumps/episode_NNNNN.json`` plus the derived
``trajectories.json``. ``manifest.json`` is itself a valid spec file, so
``python -m uavlora run <run_dir>/manifest.json`` repeats the run.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import os
import re
import subprocess
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, apply_overrides
from .mappo import METRIC_COLUMNS, MappoTrainer, TrainingReport, run_manifest
from .nn import save_checkpoint

log = logging.getLogger(__name__)

OUT_ENV_VAR = "UAVLORA_OUT"
SUMMARY_METRICS = [c for c in METRIC_COLUMNS if c not in ("episode", "step_count")]
# default sweep bounds for the convenience axes
ED_RANGE = (10, 70)
GW_RANGE = (2, 5)


@dataclass
class ExperimentSpec:
    base: dict = field(default_factory=dict)  # nested config dict (possibly loaded from a file)
    overrides: list = field(default_factory=list)
    seeds: list = field(default_factory=lambda: [7])
    sweep: dict = field(default_factory=dict)  # dotted key -> list of values
    out: str = "runs"
    episodes: int | None = None
    dump_trajectories: list = field(default_factory=list)  # episode indices; -1 means last
    save_checkpoint: bool = False
    strict_ranges: bool = True

    def validate(self) -> "ExperimentSpec":
        if not self.seeds:
            raise ConfigError("seed list must be nonempty")
        for key, values in self.sweep.items():
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep axis {key!r} needs a nonempty list")
        if self.strict_ranges:
            for key, (lo, hi) in (("env.n_eds", ED_RANGE), ("env.n_uavs", GW_RANGE)):
                bad = [v for v in self.sweep.get(key, []) if not lo <= v <= hi]
                if bad:
                    raise ConfigError(f"{key} values {bad} outside [{lo}, {hi}]; set strict_ranges false to allow")
        for point in self.points():
            self.config_for(point, self.seeds[0])
        return self

    def points(self) -> list[dict]:
        keys = sorted(self.sweep)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.sweep[k] for k in keys))]

    def config_for(self, point: dict, seed: int) -> RunConfig:
        items = list(self.overrides) + [f"{k}={json.dumps(v)}" for k, v in point.items()]
        data = apply_overrides(self.base, items)
        data["seed"] = int(seed)
        if self.episodes is not None:
            data["episodes"] = int(self.episodes)
        return RunConfig.from_dict(data).validate()


def point_name(point: dict) -> str:
    if not point:
        return "base"
    parts = [f"{k.split('.')[-1]}={v}" for k, v in sorted(point.items())]
    return re.sub(r"[^A-Za-z0-9_.=,+-]", "_", ",".join(parts))


def load_spec(path, base_dir=None) -> ExperimentSpec:
    """Read a JSON experiment spec or a run manifest.

    Recognised keys: ``base`` (inline dict or path to a config JSON),
    ``overrides``, ``seeds``, ``sweep``, ``ed_counts``, ``gw_counts``, ``out``,
    ``episodes``, ``dump_trajectories``, ``save_checkpoint``, ``strict_ranges``.
    A manifest (``config`` + ``seed``) becomes a single-run spec.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read spec {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("spec must be a JSON object")
    base_dir = Path(base_dir) if base_dir else path.parent
    if "config" in data and "seed" in data:
        return ExperimentSpec(base=data["config"], seeds=[data["seed"]], strict_ranges=False)
    data = dict(data)
    base = data.pop("base", {})
    if isinstance(base, str):
        try:
            base = json.loads((base_dir / base).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read base config {base}: {exc}") from None
    sweep = dict(data.pop("sweep", {}))
    if "ed_counts" in data:
        sweep["env.n_eds"] = data.pop("ed_counts")
    if "gw_counts" in data:
        sweep["env.n_uavs"] = data.pop("gw_counts")
    known = {"overrides", "seeds", "out", "episodes", "dump_trajectories", "save_checkpoint", "strict_ranges"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown spec keys {sorted(unknown)}")
    return ExperimentSpec(base=base, sweep=sweep, **data)


def code_version() -> str:
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    from importlib.metadata import PackageNotFoundError, version
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def resolve_out(out) -> Path:
    out = Path(out)
    root = os.environ.get(OUT_ENV_VAR)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


# ----------------------------------------------------------------------------
# single run


def _dump_set(requested, episodes: int) -> set[int]:
    return {episodes + e if e < 0 else e for e in requested if -episodes <= e < episodes}


def execute_run(config: RunConfig, run_dir, dump_episodes=(), checkpoint: bool = False,
                version: str | None = None) -> TrainingReport:
    """Train one seeded config and write its artifacts into ``run_dir``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    dumps = _dump_set(dump_episodes, config.episodes)
    trainer = MappoTrainer(config, record_episodes=dumps)
    report = trainer.train()
    report.write_csv(run_dir / "metrics.csv")
    (run_dir / "manifest.json").write_text(run_manifest(report, version or code_version()) + "\n")
    if report.trajectories:
        dump_dir = run_dir / "dumps"
        dump_dir.mkdir(exist_ok=True)
        for traj in report.trajectories:
            (dump_dir / f"episode_{traj['episode']:05d}.json").write_text(json.dumps(traj))
        emit_trajectories(run_dir)
    if checkpoint:
        save_checkpoint(run_dir / "checkpoint.npz", trainer.modules())
    return report


def rerun_manifest(path, run_dir) -> TrainingReport:
    """Repeat a run from its manifest alone."""
    spec = load_spec(path)
    return execute_run(spec.config_for({}, spec.seeds[0]), run_dir)


# ----------------------------------------------------------------------------
# trajectories


def trajectory_schema() -> dict:
    return json.loads(resources.files("uavlora").joinpath("trajectory_schema.json").read_text())


def emit_trajectories(run_dir, episode: int | None = None) -> Path:
    """Write ``trajectories.json`` (per-step UAV positions and associations) for one dumped episode.

    Defaults to the latest dumped episode. Without dumps a warning is issued
    and an empty file is written.
    """
    run_dir = Path(run_dir)
    target = run_dir / "trajectories.json"
    files = sorted((run_dir / "dumps").glob("episode_*.json"))
    if episode is not None:
        files = [f for f in files if f.name == f"episode_{episode:05d}.json"]
    if not files:
        warnings.warn(f"no trajectory dumps under {run_dir}; writing an empty file", RuntimeWarning, stacklevel=2)
        target.write_text("")
        return target
    dump = json.loads(files[-1].read_text())
    doc = {
        "episode": dump["episode"],
        "max_quota": dump["max_quota"],
        "cs": dump["cs"],
        "eds": dump["eds"],
        "steps": [
            {
                "t": s["t"],
                "uavs": [
                    {k: uav[k] for k in ("id", "x", "y", "z", "speed", "associated_ed_ids")}
                    for uav in s["uavs"]
                ],
            }
            for s in dump["steps"]
        ],
    }
    target.write_text(json.dumps(doc, indent=1))
    return target


# ----------------------------------------------------------------------------
# sweeps


def final_window_mean(values, fraction: float = 0.1) -> float:
    values = np.asarray(values, dtype=float)
    n = max(1, math.ceil(fraction * len(values)))
    return float(values[-n:].mean())


def _run_job(args):
    config_dict, run_dir, dumps, checkpoint, version = args
    try:
        report = execute_run(RunConfig.from_dict(config_dict), run_dir, dumps, checkpoint, version)
    except Exception as exc:  # one failed run must not sink the sweep
        Path(run_dir).mkdir(parents=True, exist_ok=True)
        (Path(run_dir) / "error.txt").write_text(f"{type(exc).__name__}: {exc}\n")
        log.error("run %s failed: %s", run_dir, exc)
        return run_dir, None
    return run_dir, {m: final_window_mean(report.column(m)) for m in SUMMARY_METRICS}


def run_experiment(spec: ExperimentSpec, jobs: int = 1) -> int:
    """Run every (sweep point, seed) pair; returns 0 if all succeeded, 1 otherwise."""
    spec.validate()
    out = resolve_out(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    version = code_version()
    points = spec.points()
    tasks = []
    for point in points:
        for seed in spec.seeds:
            cfg = spec.config_for(point, seed)
            run_dir = out / point_name(point) / f"seed_{seed}"
            tasks.append((cfg.to_dict(), str(run_dir), list(spec.dump_trajectories), spec.save_checkpoint, version))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(_run_job, tasks))
    else:
        results = dict(map(_run_job, tasks))
    failed = write_summary(out, points, spec.seeds, results)
    return 1 if failed else 0


def write_summary(out: Path, points, seeds, results: dict) -> int:
    """Aggregate final-window means as mean and population std across seeds; returns failure count."""
    header = ["point", "seeds_ok", "seeds_failed"]
    for m in SUMMARY_METRICS:
        header += [f"{m}_mean", f"{m}_std"]
    failed = 0
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for point in points:
            name = point_name(point)
            rows = [results[str(out / name / f"seed_{s}")] for s in seeds]
            ok = [r for r in rows if r is not None]
            failed += len(rows) - len(ok)
            line = [name, len(ok), len(rows) - len(ok)]
            for m in SUMMARY_METRICS:
                vals = np.array([r[m] for r in ok])
                line += [repr(float(vals.mean())), repr(float(vals.std()))] if len(vals) else ["", ""]
            writer.writerow(line)
    return failed


# ----------------------------------------------------------------------------
# command line


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uavlora", description="Train UAV-gateway agents and emit plot-ready data.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment spec (or repeat a run from its manifest.json)")
    run.add_argument("spec", help="JSON experiment spec or run manifest")
    run.add_argument("--seed", type=int, action="append", help="seed to run; repeat for several (replaces the spec list)")
    run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                     help="dotted config override, value parsed as JSON; wins over the spec file")
    run.add_argument("--out", help=f"output directory (relative paths go under ${OUT_ENV_VAR} when set)")
    run.add_argument("--episodes", type=int, help="episodes per run")
    run.add_argument("--dump-trajectories", nargs="*", type=int, metavar="EPISODE",
                     help="record these episodes (negative counts from the end; no value means the last)")
    run.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    traj = sub.add_parser("trajectories", help="re-emit trajectories.json for a run directory")
    traj.add_argument("run_dir")
    traj.add_argument("--episode", type=int)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    if args.command == "trajectories":
        emit_trajectories(args.run_dir, args.episode)
        return 0
    try:
        spec = load_spec(args.spec)
        if args.seed:
            spec.seeds = list(args.seed)
        spec.overrides = list(spec.overrides) + list(args.override)
        if args.out:
            spec.out = args.out
        if args.episodes is not None:
            spec.episodes = args.episodes
        if args.dump_trajectories is not None:
            spec.dump_trajectories = args.dump_trajectories or [-1]
        spec.validate()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return run_experiment(spec, jobs=args.jobs)
