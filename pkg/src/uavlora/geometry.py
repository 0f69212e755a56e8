"""UAV kinematics: cone-constrained heading, position updates, separation checks.

Positions are plain length-3 float arrays ``[x, y, z]`` in meters. UAVs fly at
a fixed altitude; end devices sit on the ground plane (z = 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np


@dataclass(frozen=True)
class MotionCommand:
    """Heading offset from the charging-station bearing, plus a speed."""

    theta: float  # radians, |theta| <= beta / 2
    speed: float  # m/s, 0 <= speed <= s_max

    def validate(self, beta: float, s_max: float) -> None:
        if abs(self.theta) > beta / 2 + 1e-12:
            raise ValueError(f"theta={self.theta} outside cone of width {beta}")
        if not 0.0 <= self.speed <= s_max + 1e-12:
            raise ValueError(f"speed={self.speed} outside [0, {s_max}]")


@dataclass(frozen=True)
class KinematicLimits:
    s_max: float = 30.0
    x_max: float = 1000.0
    y_max: float = 1000.0
    d_safe: float = 3.0
    dt: float = 2.0  # seconds per step, the inverse of the step rate

    def __post_init__(self):
        for name in ("s_max", "x_max", "y_max", "d_safe", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


def reference_angle(uav_pos, cs_pos, theta: float) -> float:
    """Absolute heading (from the x axis) for a move offset ``theta`` from the CS bearing.

    Uses the full-quadrant bearing so the charging station is reachable from
    anywhere. A UAV sitting exactly over the CS gets bearing 0.
    """
    dx = float(cs_pos[0]) - float(uav_pos[0])
    dy = float(cs_pos[1]) - float(uav_pos[1])
    bearing = 0.0 if dx == 0.0 and dy == 0.0 else math.atan2(dy, dx)
    return bearing - theta


def step_position(pos, cmd: MotionCommand, cs_pos, limits: KinematicLimits) -> np.ndarray:
    """Advance one step along the commanded heading and clamp to the service area."""
    heading = reference_angle(pos, cs_pos, cmd.theta)
    travel = cmd.speed * limits.dt
    x = float(pos[0]) + travel * math.cos(heading)
    y = float(pos[1]) + travel * math.sin(heading)
    return np.array(
        [min(max(x, 0.0), limits.x_max), min(max(y, 0.0), limits.y_max), float(pos[2])]
    )


def pairwise_distance(a, b, horizontal: bool = False) -> float:
    """Euclidean distance; ``horizontal=True`` drops z (UAV-UAV separation)."""
    dx = float(a[0]) - float(b[0])
    dy = float(a[1]) - float(b[1])
    if horizontal:
        return math.hypot(dx, dy)
    dz = float(a[2]) - float(b[2])
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def check_safety(positions, d_safe: float) -> set[tuple[int, int]]:
    """Unordered UAV index pairs closer than ``d_safe`` horizontally."""
    return {
        (i, j)
        for i, j in combinations(range(len(positions)), 2)
        if pairwise_distance(positions[i], positions[j], horizontal=True) < d_safe
    }


def collision_flags(positions: np.ndarray, d_safe: float) -> np.ndarray:
    """Per-UAV 0/1 flag: involved in at least one separation violation."""
    flags = np.zeros(len(positions))
    for i, j in check_safety(positions, d_safe):
        flags[i] = flags[j] = 1.0
    return flags
