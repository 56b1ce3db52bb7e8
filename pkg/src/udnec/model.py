"""Network geometry, link-gain parameters, and instantaneous SINR.

Units: distances in meters, transmit power in dBm, noise density in dBm/Hz.
The dB-to-linear conversion happens exactly once, when a :class:`LinkGainMatrix`
is constructed; everything downstream of that point works on linear ratios.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

__all__ = [
    "LayoutError",
    "RadioParams",
    "NetworkLayout",
    "LinkGainMatrix",
    "FadingDraw",
    "build_layout",
    "link_gains",
    "sinr",
]


class LayoutError(RuntimeError):
    """A random layout draw cannot satisfy the construction contract."""


@dataclass(frozen=True)
class RadioParams:
    """Radio constants shared by every SBS in a deployment.

    Path loss in dB is ``offset + slope * log10(distance_m)``.  Distances are
    floored at ``min_distance_m`` before the loss is evaluated, because the
    model diverges as the distance goes to zero.
    """

    tx_power_dbm: float = 23.0
    noise_density_dbm_hz: float = -174.0
    bandwidth_hz: float = 1.0e6
    pathloss_offset_db: float = 60.0
    pathloss_slope_db: float = 37.6
    min_distance_m: float = 1.0

    def __post_init__(self):
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth_hz must be positive")
        if self.min_distance_m <= 0:
            raise ValueError("min_distance_m must be positive")

    def pathloss_db(self, distance_m):
        return self.pathloss_offset_db + self.pathloss_slope_db * np.log10(distance_m)

    def noise_power_dbm(self) -> float:
        """Thermal noise power over the full channel bandwidth."""
        return self.noise_density_dbm_hz + 10.0 * math.log10(self.bandwidth_hz)


@dataclass(frozen=True)
class NetworkLayout:
    """SBS positions, one served UE per SBS, and the radio constants."""

    sbs_positions: np.ndarray        # (n, 2), meters
    served_ue_positions: np.ndarray  # (n, 2), meters
    area_side: float
    radio: RadioParams

    def __post_init__(self):
        sbs = np.atleast_2d(np.asarray(self.sbs_positions, dtype=float))
        ue = np.atleast_2d(np.asarray(self.served_ue_positions, dtype=float))
        object.__setattr__(self, "sbs_positions", sbs)
        object.__setattr__(self, "served_ue_positions", ue)
        if sbs.ndim != 2 or sbs.shape[1] != 2:
            raise ValueError("sbs_positions must have shape (n, 2)")
        if ue.shape != sbs.shape:
            raise ValueError("exactly one served UE per SBS is required")
        if not self.area_side > 0:
            raise ValueError("area_side must be positive")
        for name, pos in (("SBS", sbs), ("UE", ue)):
            if np.any(pos < 0.0) or np.any(pos > self.area_side):
                raise ValueError(f"{name} positions must lie within the deployment area")

    @property
    def n(self) -> int:
        return self.sbs_positions.shape[0]

    def to_dict(self) -> dict:
        return {
            "sbs_positions": self.sbs_positions.tolist(),
            "served_ue_positions": self.served_ue_positions.tolist(),
            "area_side": self.area_side,
            "radio": asdict(self.radio),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkLayout":
        return cls(
            sbs_positions=np.asarray(d["sbs_positions"], dtype=float),
            served_ue_positions=np.asarray(d["served_ue_positions"], dtype=float),
            area_side=float(d["area_side"]),
            radio=RadioParams(**d["radio"]),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "NetworkLayout":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class LinkGainMatrix:
    """Mean received-SNR ratios between every SBS and every served UE.

    ``beta_bar[j, i]`` is the mean SNR (linear) of the signal transmitted by
    SBS ``j`` at the UE served by SBS ``i``; the diagonal holds the desired
    links.  Use :meth:`gain_from_to` when index order matters.
    """

    def __init__(self, beta_bar, bandwidth_hz: float):
        bb = np.asarray(beta_bar, dtype=float)
        if bb.ndim != 2 or bb.shape[0] != bb.shape[1]:
            raise ValueError("beta_bar must be a square matrix")
        if not np.all(np.isfinite(bb)) or np.any(bb <= 0.0):
            raise ValueError("all mean-SNR entries must be positive and finite")
        if bandwidth_hz <= 0:
            raise ValueError("bandwidth_hz must be positive")
        self.beta_bar = bb
        self.bandwidth_hz = float(bandwidth_hz)

    @property
    def n(self) -> int:
        return self.beta_bar.shape[0]

    def gain_from_to(self, tx: int, rx_served_by: int) -> float:
        """Mean SNR of the link from SBS ``tx`` to the UE served by SBS ``rx_served_by``."""
        return float(self.beta_bar[tx, rx_served_by])

    @classmethod
    def from_db(cls, beta_bar_db, bandwidth_hz: float) -> "LinkGainMatrix":
        """Build from per-link mean SNRs given in dB."""
        return cls(10.0 ** (np.asarray(beta_bar_db, dtype=float) / 10.0), bandwidth_hz)

    def to_dict(self) -> dict:
        return {"beta_bar": self.beta_bar.tolist(), "bandwidth_hz": self.bandwidth_hz}

    @classmethod
    def from_dict(cls, d: dict) -> "LinkGainMatrix":
        return cls(np.asarray(d["beta_bar"], dtype=float), float(d["bandwidth_hz"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "LinkGainMatrix":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def __repr__(self):
        return f"LinkGainMatrix(n={self.n}, bandwidth_hz={self.bandwidth_hz:g})"


@dataclass(frozen=True)
class FadingDraw:
    """One block-fading realization: squared channel magnitudes, unit-mean exponential."""

    h_sq: np.ndarray  # (n, n), entry (j, i) fades the SBS-j -> UE-i link

    def __post_init__(self):
        h = np.asarray(self.h_sq, dtype=float)
        object.__setattr__(self, "h_sq", h)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError("h_sq must be a square matrix")
        if np.any(h < 0.0):
            raise ValueError("squared magnitudes cannot be negative")

    @classmethod
    def sample(cls, n: int, rng: np.random.Generator) -> "FadingDraw":
        return cls(rng.standard_exponential((n, n)))


def build_layout(n_sbs, area_side, n_candidate_ues, radio=None, seed=0) -> NetworkLayout:
    """Draw a random deployment.

    SBS and candidate-UE positions are uniform over the square area.  Every
    candidate attaches to the SBS with the strongest mean received power,
    which under a common transmit power and distance-monotone path loss is
    the nearest SBS (exact ties go to the lowest SBS index).  Each SBS then
    serves one UE drawn uniformly from its attached candidates.

    Deterministic for a given seed.  Raises :class:`LayoutError` when some
    SBS attracts no candidate; the caller decides whether to retry with a
    different seed or more candidates.
    """
    if n_sbs < 1:
        raise ValueError("need at least one SBS")
    if n_candidate_ues < n_sbs:
        raise ValueError("need at least as many candidate UEs as SBSs")
    if area_side <= 0:
        raise ValueError("area_side must be positive")
    radio = radio if radio is not None else RadioParams()

    rng = np.random.default_rng(seed)
    sbs = rng.uniform(0.0, area_side, size=(n_sbs, 2))
    candidates = rng.uniform(0.0, area_side, size=(n_candidate_ues, 2))

    # (candidate, sbs) distances; argmin returns the first (lowest) index on ties
    dists = np.linalg.norm(candidates[:, None, :] - sbs[None, :, :], axis=2)
    attached = np.argmin(dists, axis=1)

    served = np.empty((n_sbs, 2))
    for k in range(n_sbs):
        pool = np.flatnonzero(attached == k)
        if pool.size == 0:
            raise LayoutError(
                f"SBS {k} attracted no candidate UE (seed={seed}); "
                f"retry with a different seed or more candidates"
            )
        served[k] = candidates[pool[rng.integers(pool.size)]]

    return NetworkLayout(sbs, served, float(area_side), radio)


def link_gains(layout: NetworkLayout) -> LinkGainMatrix:
    """Mean-SNR matrix of a layout: entry (j, i) covers SBS j -> UE served by SBS i.

    Raises on an exactly zero SBS-UE distance (singular path loss); positive
    distances below the configured minimum are floored to it.
    """
    radio = layout.radio
    diff = layout.sbs_positions[:, None, :] - layout.served_ue_positions[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    if np.any(dist == 0.0):
        raise ValueError("zero SBS-UE distance; path loss is singular")
    dist = np.maximum(dist, radio.min_distance_m)
    snr_db = radio.tx_power_dbm - radio.pathloss_db(dist) - radio.noise_power_dbm()
    return LinkGainMatrix(10.0 ** (snr_db / 10.0), radio.bandwidth_hz)


def sinr(gains: LinkGainMatrix, n: int, active_set, fading: FadingDraw) -> float:
    """Instantaneous SINR at the UE of SBS ``n`` for a given interferer set.

    ``active_set`` holds the indices of the SBSs transmitting concurrently
    (excluding ``n`` itself); the noise term is already normalized into the
    gain entries, so it appears as the constant 1 in the denominator.
    """
    active = set(active_set)
    if n in active:
        raise ValueError("an SBS cannot interfere with its own UE")
    bb = gains.beta_bar
    h = fading.h_sq
    denom = 1.0
    for j in active:
        denom += bb[j, n] * h[j, n]
    return float(bb[n, n] * h[n, n] / denom)
