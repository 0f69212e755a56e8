"""Air-to-ground link budget: LoS probability, mean path loss, SNR, co-SF SINR, rate.

The channel is deterministic given geometry (mean-loss model, no fading).
All functions accept numpy arrays and broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 3e8


@dataclass(frozen=True)
class ChannelParams:
    # logistic LoS-probability constants (suburban defaults)
    los_offset: float = 4.88
    los_slope: float = 0.43
    eta_los_db: float = 0.1
    eta_nlos_db: float = 21.0
    freq_hz: float = 868e6
    noise_dbm: float = -120.0
    bandwidth_hz: float = 125e3
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        if self.freq_hz <= 0 or self.bandwidth_hz <= 0:
            raise ValueError("carrier frequency and bandwidth must be positive")
        if not self.eta_nlos_db >= self.eta_los_db >= 0:
            raise ValueError("need eta_nlos_db >= eta_los_db >= 0")


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(x)


def elevation_angle(uav, ed):
    """Elevation (degrees) of the UAV as seen from the ED; 90 when directly overhead.

    ``uav`` and ``ed`` may be ``(..., 3)`` arrays.
    """
    uav = np.asarray(uav, dtype=float)
    ed = np.asarray(ed, dtype=float)
    horiz = np.hypot(uav[..., 0] - ed[..., 0], uav[..., 1] - ed[..., 1])
    return np.degrees(np.arctan2(uav[..., 2] - ed[..., 2], horiz))


def los_probability(phi_deg, params: ChannelParams = ChannelParams()):
    a, b = params.los_offset, params.los_slope
    return 1.0 / (1.0 + a * np.exp(-b * (np.asarray(phi_deg, dtype=float) - a)))


def free_space_loss(d, params: ChannelParams = ChannelParams()):
    return 20.0 * np.log10(4.0 * np.pi * params.freq_hz * np.asarray(d, dtype=float) / params.c)


def a2g_path_loss(d, phi_deg, params: ChannelParams = ChannelParams()):
    """Mean A2G loss in dB: free-space term plus LoS/NLoS-weighted excess loss."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("link distance must be positive")
    p_los = los_probability(phi_deg, params)
    return free_space_loss(d, params) + params.eta_los_db * p_los + params.eta_nlos_db * (1.0 - p_los)


def link_state(uav, ed, params: ChannelParams = ChannelParams()) -> dict:
    uav = np.asarray(uav, dtype=float)
    ed = np.asarray(ed, dtype=float)
    d = np.linalg.norm(uav - ed, axis=-1)
    phi = elevation_angle(uav, ed)
    pl = a2g_path_loss(d, phi, params)
    return {"distance_3d": d, "elevation_deg": phi, "path_loss_db": pl, "gain_linear": db_to_linear(-pl)}


def snr(p_tx_dbm, gain_linear, noise_dbm):
    """Linear SNR from transmit power (dBm), linear channel gain and noise power (dBm)."""
    return db_to_linear(p_tx_dbm) * np.asarray(gain_linear, dtype=float) / db_to_linear(noise_dbm)


def sinr(target_snr, interferer_snrs=()):
    """Noise-normalised SINR: the ``+1`` in the denominator is the noise floor."""
    return target_snr / (float(np.sum(interferer_snrs)) + 1.0)


def co_sf_sinr(snrs, sfs, active):
    """SINR for every ED given its own-link SNR and SF.

    Interference on ED ``v`` is the sum of SNRs of all *other* active EDs
    sharing ``v``'s SF, each measured at its own serving UAV.
    """
    snrs = np.asarray(snrs, dtype=float)
    sfs = np.asarray(sfs)
    active = np.asarray(active, dtype=bool)
    out = np.zeros_like(snrs)
    for sf in np.unique(sfs[active]):
        group = active & (sfs == sf)
        total = snrs[group].sum()
        out[group] = snrs[group] / (total - snrs[group] + 1.0)
    return out


def achievable_rate(sinr_linear, bandwidth_hz):
    return bandwidth_hz * np.log2(1.0 + np.asarray(sinr_linear, dtype=float))
