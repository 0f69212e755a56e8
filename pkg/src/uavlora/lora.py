"""LoRa spreading-factor / transmit-power catalogs and SNR-threshold feasibility."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SF_VALUES = (7, 8, 9, 10, 11, 12)
# demodulation SNR floor (dB) per SF at 125 kHz
SNR_THRESHOLD_DB = {7: -7.5, 8: -10.0, 9: -12.5, 10: -15.0, 11: -17.5, 12: -20.0}
TP_LEVELS_DBM = (2.0, 5.0, 8.0, 11.0, 14.0)


def sf_threshold(sf: int) -> float:
    try:
        return SNR_THRESHOLD_DB[int(sf)]
    except KeyError:
        raise ValueError(f"spreading factor must be one of {SF_VALUES}, got {sf}") from None


def link_feasible(snr_db, sf) -> np.ndarray | bool:
    """True where the received SNR meets the SF's threshold (boundary inclusive)."""
    if np.ndim(sf) == 0:
        return bool(snr_db >= sf_threshold(sf))
    thresholds = np.array([sf_threshold(s) for s in np.ravel(sf)]).reshape(np.shape(sf))
    return np.asarray(snr_db) >= thresholds


def dbm_to_watts(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


@dataclass(frozen=True)
class RadioSelection:
    sf: int
    tp_dbm: float

    def __post_init__(self):
        if self.sf not in SF_VALUES:
            raise ValueError(f"unknown SF {self.sf}")
        if self.tp_dbm not in TP_LEVELS_DBM:
            raise ValueError(f"unknown TP level {self.tp_dbm} dBm")

    def one_hot(self) -> tuple[np.ndarray, np.ndarray]:
        """Binary SF and TP selection vectors (each sums to exactly one)."""
        sf_vec = np.zeros(len(SF_VALUES))
        sf_vec[SF_VALUES.index(self.sf)] = 1.0
        tp_vec = np.zeros(len(TP_LEVELS_DBM))
        tp_vec[TP_LEVELS_DBM.index(self.tp_dbm)] = 1.0
        return sf_vec, tp_vec
