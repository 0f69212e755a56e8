"""Gain matrix construction and greedy, quota-limited UAV-ED association."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelParams, a2g_path_loss, db_to_linear, elevation_angle
from .lora import sf_threshold


@dataclass
class AssociationMap:
    """Binary UAV-ED association with per-UAV load counters.

    ``serving[v]`` is the serving UAV of ED ``v`` or -1.
    """

    serving: np.ndarray
    load: np.ndarray
    pairs: list[tuple[int, int]] = field(default_factory=list)

    @property
    def matrix(self) -> np.ndarray:
        a = np.zeros((len(self.load), len(self.serving)), dtype=int)
        for u, v in self.pairs:
            a[u, v] = 1
        return a

    def eds_of(self, u: int) -> list[int]:
        return [v for uu, v in self.pairs if uu == u]

    @property
    def count(self) -> int:
        return len(self.pairs)


def distance_matrix(uavs, eds) -> np.ndarray:
    uavs = np.asarray(uavs, dtype=float).reshape(-1, 3)
    eds = np.asarray(eds, dtype=float).reshape(-1, 3)
    return np.linalg.norm(uavs[:, None, :] - eds[None, :, :], axis=-1)


def build_gain_matrix(uavs, eds, chan: ChannelParams = ChannelParams()) -> np.ndarray:
    """U x V matrix of linear channel gains ``10 ** (-path_loss / 10)``."""
    uavs = np.asarray(uavs, dtype=float).reshape(-1, 3)
    eds = np.asarray(eds, dtype=float).reshape(-1, 3)
    d = distance_matrix(uavs, eds)
    phi = elevation_angle(uavs[:, None, :], eds[None, :, :])
    return db_to_linear(-a2g_path_loss(d, phi, chan))


def associate(gain, uavs, eds, max_quota: int, r_comm: float) -> AssociationMap:
    """Assign each ED, in index order, to its best-gain UAV among those in range with spare quota.

    Ties go to the lowest UAV index. EDs with no eligible UAV stay unassociated.
    """
    if max_quota < 1:
        raise ValueError("max_quota must be at least 1")
    gain = np.asarray(gain, dtype=float)
    n_uav, n_ed = gain.shape
    dist = distance_matrix(uavs, eds)
    serving = np.full(n_ed, -1, dtype=int)
    load = [0] * n_uav
    pairs = []
    # plain-Python inner loop: U is small, and per-ED numpy calls cost more than the work
    cand = np.where(dist <= r_comm, gain, -np.inf).T.tolist()
    for v, row in enumerate(cand):
        best, u_best = -np.inf, -1
        for u, g in enumerate(row):
            if g > best and load[u] < max_quota:  # strict > keeps the lowest index on ties
                best, u_best = g, u
        if u_best < 0:
            continue
        serving[v] = u_best
        load[u_best] += 1
        pairs.append((u_best, v))
    load = np.asarray(load, dtype=int)
    return AssociationMap(serving=serving, load=load, pairs=pairs)


def default_comm_range(altitude: float, chan: ChannelParams = ChannelParams(),
                       tp_dbm: float = 14.0, sf: int = 12) -> float:
    """Link distance at which the most robust link (SF12, max TP) still meets its SNR floor.

    The edge is located as a horizontal offset by bisection on the link
    margin (path loss grows monotonically with it), then returned as the 3D
    UAV-ED distance so it compares directly against association distances.
    """
    def margin(h):
        d = math.hypot(h, altitude)
        phi = math.degrees(math.atan2(altitude, h))
        snr_db = tp_dbm - float(a2g_path_loss(d, phi, chan)) - chan.noise_dbm
        return snr_db - sf_threshold(sf)

    if margin(0.0) < 0:
        return 0.0
    lo, hi = 0.0, 1.0
    while margin(hi) >= 0:
        lo, hi = hi, hi * 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if margin(mid) >= 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-6:
            break
    return math.hypot(lo, altitude)

