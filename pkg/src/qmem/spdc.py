"""Photon-pair source statistics: two-mode squeezed states and cavity SPDC.

Units: pump power in mW, spectral brightness in pairs/(mW MHz s), all
frequencies and linewidths in Hz, times in s. Linewidths are FWHM; where
the decay formulas need an angular rate it is 2*pi*linewidth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import RegimeError


@dataclass(frozen=True)
class SourceSpec:
    pump_power: float
    spectral_brightness: float
    signal_linewidth: float
    idler_linewidth: float
    fsr_signal: float
    fsr_idler: float
    transit_offset: float = 0.0
    phase_matching_bandwidth: float = 80e9
    n_modes_per_cluster: int = 1
    filter_bandwidth: Optional[float] = None
    # unheralded signal photons per second per mW reaching the signal chain
    broadband_noise_rate: float = 0.0

    def __post_init__(self):
        if not self.pump_power >= 0:
            raise ValueError(f"pump_power must be >= 0, got {self.pump_power}")
        for name in (
            "spectral_brightness",
            "signal_linewidth",
            "idler_linewidth",
            "fsr_signal",
            "fsr_idler",
            "phase_matching_bandwidth",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if not self.transit_offset >= 0:
            raise ValueError("transit_offset must be >= 0")
        if int(self.n_modes_per_cluster) != self.n_modes_per_cluster or self.n_modes_per_cluster < 1:
            raise ValueError("n_modes_per_cluster must be an integer >= 1")
        if self.filter_bandwidth is not None and not self.filter_bandwidth > 0:
            raise ValueError("filter_bandwidth must be > 0")
        if not self.broadband_noise_rate >= 0:
            raise ValueError("broadband_noise_rate must be >= 0")


@dataclass(frozen=True)
class PairStatistics:
    p: float
    mean_signal_photons: float
    g2_cross: float
    g2_auto_signal: float = 2.0
    g2_auto_idler: float = 2.0


@dataclass(frozen=True)
class PhotonNumberDistribution:
    probabilities: np.ndarray
    tail_mass: float

    @property
    def mean(self) -> float:
        n = np.arange(len(self.probabilities))
        return float(np.sum(n * self.probabilities))


@dataclass(frozen=True)
class CorrelationCurve:
    taus: np.ndarray
    values: np.ndarray
    normalization: str = "normalized"
    errors: Optional[np.ndarray] = None

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if taus.shape != values.shape or taus.ndim != 1:
            raise ValueError("taus and values must be 1-d arrays of equal length")
        if np.any(np.diff(taus) <= 0):
            raise ValueError("taus must be strictly increasing")
        if self.normalization not in ("normalized", "raw"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class Cluster:
    center_offset: float
    n_modes: int
    suppression: float


@dataclass(frozen=True)
class CauchySchwarz:
    R: float
    nonclassical: bool


def pair_probability(spec: SourceSpec, filter_bandwidth: Optional[float] = None, window: float = 10e-9) -> float:
    """Pair probability within ``filter_bandwidth`` (Hz) and a time ``window`` (s)."""
    bw = spec.filter_bandwidth if filter_bandwidth is None else filter_bandwidth
    if bw is None or not bw > 0:
        raise ValueError("a positive filter bandwidth is required")
    if not window > 0:
        raise ValueError("window must be > 0")
    p = spec.spectral_brightness * spec.pump_power * (bw / 1e6) * window
    if p >= 1:
        raise RegimeError(f"pair probability {p:.3g} >= 1; low-gain formula does not apply")
    return p


def tmss_statistics(p: float) -> PairStatistics:
    if not 0 < p < 1:
        raise RegimeError(f"pair probability must be in (0, 1), got {p}")
    return PairStatistics(p=p, mean_signal_photons=p / (1 - p), g2_cross=1 + 1 / p)


def photon_number_distribution(p: float, n_max: int) -> PhotonNumberDistribution:
    """Geometric photon-number distribution of each arm, truncated at ``n_max``."""
    if not 0 <= p < 1:
        raise ValueError(f"p must be in [0, 1), got {p}")
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    n = np.arange(n_max + 1)
    probs = (1 - p) * p**n
    return PhotonNumberDistribution(probs, float(p ** (n_max + 1)))


def _two_sided(taus: np.ndarray, rate_pos: float, rate_neg: float) -> np.ndarray:
    out = np.empty_like(taus)
    pos = taus >= 0
    out[pos] = np.exp(-rate_pos * taus[pos])
    out[~pos] = np.exp(rate_neg * taus[~pos])
    return out


def single_mode_g2(spec: SourceSpec, p: float, taus: Sequence[float]) -> CorrelationCurve:
    """Normalised cross-correlation of a single-mode source (two-sided exponential)."""
    if not 0 < p < 1:
        raise RegimeError(f"pair probability must be in (0, 1), got {p}")
    taus = np.asarray(taus, dtype=float)
    gs = 2 * math.pi * spec.signal_linewidth
    gi = 2 * math.pi * spec.idler_linewidth
    amp = 4 / p * gs * gi / (gs + gi) ** 2
    with np.errstate(over="ignore"):
        values = 1 + amp * _two_sided(taus, gs, gi)
    return CorrelationCurve(taus, values)


def two_sided_fwhm(signal_linewidth: float, idler_linewidth: float) -> float:
    """FWHM (s) of the two-sided decay exp(-2 pi dnu |tau|)."""
    return math.log(2) / (2 * math.pi) * (1 / signal_linewidth + 1 / idler_linewidth)


def coherence_time(linewidth: float) -> float:
    if not linewidth > 0:
        raise ValueError("linewidth must be > 0")
    return 1.0 / (math.pi * linewidth)


def mode_count_from_autocorrelation(g2_auto: float) -> float:
    if g2_auto <= 1:
        raise RegimeError(f"g2_auto={g2_auto} <= 1: noise dominated, no mode number")
    if g2_auto > 2:
        raise RegimeError(f"g2_auto={g2_auto} > 2 is super-thermal")
    return 1.0 / (g2_auto - 1.0)


def cavity_enhancement(finesse: float, mirror_finesse: float) -> float:
    if not (finesse > 0 and mirror_finesse > 0):
        raise ValueError("finesse values must be > 0")
    return finesse**3 / (math.pi * mirror_finesse)


def cauchy_schwarz(g2_cross: float, g2_auto_s: float, g2_auto_i: float) -> CauchySchwarz:
    if not (g2_cross > 0 and g2_auto_s > 0 and g2_auto_i > 0):
        raise ValueError("correlation values must be > 0")
    R = g2_cross**2 / (g2_auto_s * g2_auto_i)
    return CauchySchwarz(R=R, nonclassical=R > 1)


# --- cavity-enhanced multimode source ----------------------------------------


def cluster_mode_indices(n_modes: int) -> np.ndarray:
    """Contiguous mode indices of one cluster, centred on 0."""
    return np.arange(n_modes) - (n_modes - 1) // 2


def _csinc(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = np.sin(z[nz]) / z[nz]
    return out


def _mode_terms(spec: SourceSpec, m_cutoff: Optional[int]):
    K = int(spec.n_modes_per_cluster)
    if m_cutoff is None:
        m_cutoff = 4 * K
    if m_cutoff < K:
        raise RegimeError(f"m_cutoff={m_cutoff} smaller than modes per cluster ({K})")
    m = cluster_mode_indices(K)
    m = m[np.abs(m) <= m_cutoff]
    # energy conservation pairs signal mode m with idler mode -m
    gamma_s = spec.signal_linewidth / 2 + 1j * m * spec.fsr_signal
    gamma_i = spec.idler_linewidth / 2 - 1j * m * spec.fsr_idler
    weight = 1.0 / (gamma_s + gamma_i)
    t0 = spec.transit_offset
    c_s = weight * _csinc(1j * math.pi * t0 * gamma_s)
    c_i = weight * _csinc(1j * math.pi * t0 * gamma_i)
    return gamma_s, gamma_i, c_s, c_i


def multimode_g2_cross(spec: SourceSpec, taus: Sequence[float], m_cutoff: Optional[int] = None) -> CorrelationCurve:
    """Unnormalised cross-correlation of a doubly resonant cavity source.

    The constant prefactor (including the optical carrier frequencies) is
    dropped, so only the shape is meaningful; see ``normalize_multimode``.
    Evaluation is pointwise in tau with a fixed summation order, so any
    split of the tau grid gives bit-identical values.
    """
    taus = np.asarray(taus, dtype=float)
    if not np.all(np.isfinite(taus)):
        raise ValueError("taus must be finite")
    gamma_s, gamma_i, c_s, c_i = _mode_terms(spec, m_cutoff)
    x = taus - spec.transit_offset / 2
    late = x >= 0
    amp = np.zeros(taus.shape, dtype=complex)
    for k in range(len(gamma_s)):
        term = np.where(
            late,
            c_s[k] * np.exp(-2 * math.pi * gamma_s[k] * np.where(late, x, 0.0)),
            c_i[k] * np.exp(2 * math.pi * gamma_i[k] * np.where(late, 0.0, x)),
        )
        amp = amp + term
    return CorrelationCurve(taus, np.abs(amp) ** 2, normalization="raw")


def multimode_excess_area(spec: SourceSpec, m_cutoff: Optional[int] = None) -> float:
    """Exact integral over tau of the raw multimode curve."""
    gamma_s, gamma_i, c_s, c_i = _mode_terms(spec, m_cutoff)
    late = np.sum(np.outer(c_s, c_s.conj()) / (2 * math.pi * (gamma_s[:, None] + gamma_s.conj()[None, :])))
    early = np.sum(np.outer(c_i, c_i.conj()) / (2 * math.pi * (gamma_i[:, None] + gamma_i.conj()[None, :])))
    return float((late + early).real)


def normalize_multimode(curve: CorrelationCurve, spec: SourceSpec, p: float, m_cutoff: Optional[int] = None) -> CorrelationCurve:
    """Scale a raw multimode curve onto the g2 axis.

    The accidental floor is 1 and the correlated excess carries the same
    area as the single-mode expression, 4 / (p (gamma_s + gamma_i)) with
    angular rates, since the pair number does not depend on the mode split.
    """
    if curve.normalization != "raw":
        raise ValueError("curve is already normalised")
    if not 0 < p < 1:
        raise RegimeError(f"pair probability must be in (0, 1), got {p}")
    target = 4 / p / (2 * math.pi * (spec.signal_linewidth + spec.idler_linewidth))
    scale = target / multimode_excess_area(spec, m_cutoff)
    return CorrelationCurve(curve.taus, 1 + scale * curve.values)


def cluster_structure(spec: SourceSpec) -> list[Cluster]:
    """Doubly resonant mode groups within the phase-matching window.

    Signal mode m sits at m*FSR_s; it is accepted when some idler mode lies
    within half the narrower cavity linewidth of it. Consecutive accepted
    modes form a cluster. Suppression is relative to the strongest cluster
    under a sinc^2 phase-matching envelope whose zeros bound the window.
    Adjacent clusters repeat with the Vernier period FSR_s FSR_i/|FSR_s - FSR_i|.
    """
    fs, fi = spec.fsr_signal, spec.fsr_idler
    if fs == fi:
        raise RegimeError("degenerate free spectral ranges: cluster structure undefined")
    half = spec.phase_matching_bandwidth / 2
    m_max = int(math.floor(half / fs))
    n_allowed = max(1, int(math.floor(spec.phase_matching_bandwidth / fs)))
    m = np.arange(-m_max, m_max + 1)[:n_allowed]
    nu = m * fs
    detuning = np.abs(nu - np.round(nu / fi) * fi)
    accepted = detuning < min(spec.signal_linewidth, spec.idler_linewidth) / 2
    envelope = np.sinc(nu / half) ** 2

    groups: list[list[int]] = []
    for k in np.flatnonzero(accepted):
        if groups and k == groups[-1][-1] + 1:
            groups[-1].append(int(k))
        else:
            groups.append([int(k)])
    if not groups:
        return []
    weights = [float(np.sum(envelope[g])) for g in groups]
    w_main = max(weights)
    return [
        Cluster(center_offset=float(np.mean(nu[g])), n_modes=len(g), suppression=1 - w / w_main)
        for g, w in zip(groups, weights)
    ]


def vernier_period(fsr_signal: float, fsr_idler: float) -> float:
    if fsr_signal == fsr_idler:
        return math.inf
    return fsr_signal * fsr_idler / abs(fsr_signal - fsr_idler)
