"""Energy efficiency bookkeeping and rotary-wing propulsion power.

Rotor defaults are the widely used rotary-wing profile of Zeng, Xu & Zhang
(2019): 20 N airframe, 0.4 m rotor at 300 rad/s. They are configuration,
not measured values for any particular airframe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RotorParams:
    profile_drag: float = 0.012
    air_density: float = 1.225
    solidity: float = 0.05
    disc_area: float = 0.503
    blade_speed: float = 300.0  # rad/s
    rotor_radius: float = 0.4
    weight: float = 20.0  # N
    induced_correction: float = 0.1
    thrust_ratio: float = 1.0
    hover_induced_velocity: float = 4.03
    fuselage_area: float = 0.01509  # m^2, fuselage drag ratio 0.6 * solidity * disc area
    p_max: float = 400.0  # W

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"rotor parameter {name} must be strictly positive")


def hover_power(params: RotorParams = RotorParams()) -> tuple[float, float, float]:
    """Blade-profile, induced and total hover power (W)."""
    p = params
    p0 = p.profile_drag * p.air_density * p.solidity * p.disc_area * p.blade_speed**3 * p.rotor_radius**3 / 8.0
    pi = (1.0 + p.induced_correction) * p.weight**1.5 / math.sqrt(2.0 * p.air_density * p.disc_area)
    return p0, pi, p0 + pi


def propulsion_power(speed, params: RotorParams = RotorParams()):
    """Forward-flight power (W) at horizontal ``speed`` (m/s); vectorised."""
    v = np.asarray(speed, dtype=float)
    p = params
    p0, pi, _ = hover_power(p)
    tip2 = (p.blade_speed * p.rotor_radius) ** 2
    v0 = p.hover_induced_velocity
    k = p.thrust_ratio
    blade = p0 * (1.0 + 3.0 * v**2 / tip2)
    parasite = 0.5 * p.fuselage_area * p.air_density * v**3
    induced = pi * k * (np.sqrt(k**2 + v**4 / (4.0 * v0**4)) - v**2 / (2.0 * v0**2))
    out = blade + parasite + induced
    return float(out) if out.ndim == 0 else out


def check_hover_budget(params: RotorParams) -> None:
    if propulsion_power(0.0, params) > params.p_max:
        raise ValueError(
            f"hover power {propulsion_power(0.0, params):.1f} W exceeds budget {params.p_max} W"
        )


def enforce_power_budget(requested_speed: float, params: RotorParams = RotorParams(), speed_step: float = 6.0) -> float:
    """Largest speed not above ``requested_speed`` whose propulsion power fits the budget.

    Candidates are ``requested_speed`` itself and the grid ``{0, step, 2*step, ...}``
    below it. Power is not monotone in speed (it dips before rising), so the
    grid is scanned from the top instead of bisected.
    """
    check_hover_budget(params)
    if requested_speed <= 0.0:
        return 0.0
    if propulsion_power(requested_speed, params) <= params.p_max:
        return requested_speed
    k = math.floor(requested_speed / speed_step + 1e-9)
    while k > 0:
        v = k * speed_step
        if v < requested_speed and propulsion_power(v, params) <= params.p_max:
            return v
        k -= 1
    return 0.0


def uav_energy_efficiency(rates, tx_powers_w, circuit_power_w: float) -> float:
    """Bits/s per watt for one UAV: sum of uplink rates over transmit plus circuit power."""
    denom = float(np.sum(tx_powers_w)) + circuit_power_w
    if denom <= 0:
        raise ValueError("circuit power must be positive")
    return float(np.sum(rates)) / denom


def weighted_global_ee(per_uav_ee) -> float:
    """Equal-weight (1/U) combination of per-UAV efficiencies for one step."""
    per_uav_ee = np.asarray(per_uav_ee, dtype=float)
    if per_uav_ee.size == 0:
        raise ValueError("need at least one UAV")
    return float(np.mean(per_uav_ee))
