"""Estimators and witnesses over time-tag streams and correlation curves.

Histograms use the convention tau = t_b - t_a, so with a = idler and
b = signal the positive side of the peak decays at the signal linewidth.
Error bars assume Poissonian raw counts and are propagated to first order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit, minimize
from scipy.signal import find_peaks
from scipy.stats import norm

from .errors import EstimatorError
from .spdc import CorrelationCurve
from .tags import PS, TimeTags

CHSH_CLASSICAL = 2.0
G2_CLASSICAL = 2.0
HERALD_THRESHOLD = 0.1
INV_SQRT2 = 1 / math.sqrt(2)


@dataclass(frozen=True)
class CoincidenceHistogram:
    bin_width: float
    taus: np.ndarray
    counts: np.ndarray
    rate_a: float
    rate_b: float
    duration: float

    def __post_init__(self):
        if np.any(self.counts < 0):
            raise ValueError("counts must be >= 0")

    @property
    def n_a(self) -> float:
        return self.rate_a * self.duration

    @property
    def n_b(self) -> float:
        return self.rate_b * self.duration

    def rebin(self, factor: int) -> "CoincidenceHistogram":
        """Merge ``factor`` neighbouring bins; trailing bins that do not fill a group are dropped."""
        n = self.counts.size // factor
        counts = self.counts[: n * factor].reshape(n, factor).sum(axis=1)
        taus = self.taus[: n * factor].reshape(n, factor).mean(axis=1)
        return CoincidenceHistogram(self.bin_width * factor, taus, counts, self.rate_a, self.rate_b, self.duration)

    def as_curve(self) -> CorrelationCurve:
        """Counts normalised by the accidental level r_a r_b T bin_width."""
        acc = self.rate_a * self.rate_b * self.duration * self.bin_width
        if acc == 0:
            raise EstimatorError("zero singles: accidental level undefined")
        return CorrelationCurve(self.taus, self.counts / acc, errors=np.sqrt(self.counts) / acc)


@dataclass(frozen=True)
class WitnessResult:
    value: float
    statistical_error: float
    classical_bound: float

    def __post_init__(self):
        for name in ("value", "statistical_error", "classical_bound"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def violated(self) -> bool:
        return self.value - self.classical_bound > 0

    @property
    def significance(self) -> float:
        if self.statistical_error == 0:
            return math.inf if self.violated else 0.0
        return (self.value - self.classical_bound) / self.statistical_error


def _ps(x: float) -> int:
    return int(round(x / PS))


def histogram(
    tags: TimeTags,
    channel_a: str,
    channel_b: str,
    bin_width: float,
    tau_range: tuple[float, float],
    chunk: int = 1 << 16,
) -> CoincidenceHistogram:
    """Full cross-correlation: every (a, b) pair with t_b - t_a in range is counted."""
    w = _ps(bin_width)
    lo, hi = _ps(tau_range[0]), _ps(tau_range[1])
    if w < 1:
        raise ValueError("bin width must be at least 1 ps")
    if hi <= lo:
        raise ValueError("empty tau range")
    nbins = -(-(hi - lo) // w)
    span = nbins * w
    a, b = tags.channel(channel_a), tags.channel(channel_b)
    counts = np.zeros(nbins, dtype=np.int64)
    for s in range(0, a.size, chunk):
        ta = a[s : s + chunk]
        j0 = np.searchsorted(b, ta + lo, side="left")
        j1 = np.searchsorted(b, ta + lo + span, side="left")
        n = j1 - j0
        total = int(n.sum())
        if total == 0:
            continue
        # index of every partner: j0 repeated, plus a running offset within each group
        start = np.repeat(j0, n)
        within = np.arange(total) - np.repeat(np.cumsum(n) - n, n)
        dt = b[start + within] - np.repeat(ta, n)
        counts += np.bincount((dt - lo) // w, minlength=nbins)
    taus = (lo + (np.arange(nbins) + 0.5) * w) * PS
    T = tags.duration
    return CoincidenceHistogram(w * PS, taus, counts, a.size / T, b.size / T, T)


def _window_bins(hist: CoincidenceHistogram, center: float, window: float) -> np.ndarray:
    half = window / 2
    eps = 1e-6 * hist.bin_width
    sel = (hist.taus >= center - half - eps) & (hist.taus < center + half - eps)
    if not np.any(sel):
        raise EstimatorError(f"window at {center:g} s is outside the histogram range")
    lo, hi = hist.taus[0] - hist.bin_width / 2, hist.taus[-1] + hist.bin_width / 2
    if center - half < lo - eps or center + half > hi + eps:
        raise EstimatorError("window extends beyond the histogram range")
    return sel


def g2_windowed(
    hist: CoincidenceHistogram,
    window: float,
    center: float = 0.0,
    normalization: str = "singles",
    floor_offset: Optional[float] = None,
    floor_width: Optional[float] = None,
) -> WitnessResult:
    """Normalised coincidence probability in a window of width ``window``.

    ``singles`` divides by r_a r_b window T. ``floor`` divides by the
    accidental level measured in two side regions of width ``floor_width``
    (default ``window``) centred at ``center +- floor_offset`` (default
    three window widths), scaled to the window width.
    """
    sel = _window_bins(hist, center, window)
    C = float(hist.counts[sel].sum())
    width = sel.sum() * hist.bin_width
    if normalization == "singles":
        if hist.rate_a == 0 or hist.rate_b == 0:
            raise EstimatorError("zero singles in one channel")
        acc = hist.rate_a * hist.rate_b * width * hist.duration
        rel2 = 1 / hist.n_a + 1 / hist.n_b
    elif normalization == "floor":
        off = 3 * window if floor_offset is None else floor_offset
        fw = window if floor_width is None else floor_width
        sides = [_window_bins(hist, center + s * off, fw) for s in (-1, 1)]
        n_side = float(sum(hist.counts[m].sum() for m in sides))
        if n_side == 0:
            raise EstimatorError("no accidental counts in the floor regions")
        acc = n_side * sel.sum() / sum(m.sum() for m in sides)
        rel2 = 1 / n_side
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    g2 = C / acc
    err = g2 * math.sqrt(1 / C + rel2) if C > 0 else 1 / acc
    return WitnessResult(g2, err, G2_CLASSICAL)


@dataclass(frozen=True)
class TwoSidedFit:
    delta_nu_plus: float
    delta_nu_minus: float
    fwhm: float
    floor: float
    amplitude: float
    tau_peak: float
    delta_nu_plus_error: float = float("nan")
    delta_nu_minus_error: float = float("nan")


def _curve_data(data: Union[CoincidenceHistogram, CorrelationCurve]):
    if isinstance(data, CoincidenceHistogram):
        y = data.counts.astype(float)
        return data.taus, y, np.sqrt(np.maximum(y, 1.0)), data.bin_width
    taus = data.taus
    step = float(np.median(np.diff(taus))) if taus.size > 1 else 0.0
    return taus, data.values, data.errors, step


def _two_sided_model(tau, floor, amp, tau_p, nu_p, nu_m):
    x = tau - tau_p
    rate = np.where(x >= 0, nu_p, nu_m)
    with np.errstate(over="ignore"):
        return floor + amp * np.exp(-2 * math.pi * rate * np.abs(x))


def _floor_and_noise(y: np.ndarray, err: Optional[np.ndarray]) -> tuple[float, float]:
    n = max(1, y.size // 10)
    edges = np.concatenate([y[:n], y[-n:]])
    floor = float(np.median(edges))
    if err is not None:
        sigma = float(np.median(err))
    else:
        sigma = float(np.std(edges))
    return floor, sigma


def _two_sided_jacobian(tau, floor, amp, tau_p, nu_p, nu_m) -> np.ndarray:
    x = tau - tau_p
    late = x >= 0
    nu = np.where(late, nu_p, nu_m)
    e = np.exp(-2 * math.pi * nu * np.abs(x))
    d_tau_p = amp * e * 2 * math.pi * nu * np.sign(x)
    d_nu = -amp * e * 2 * math.pi * np.abs(x)
    return np.stack([np.ones_like(x), e, d_tau_p, np.where(late, d_nu, 0.0), np.where(late, 0.0, d_nu)], axis=1)


def _poisson_refine(taus: np.ndarray, y: np.ndarray, start: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Maximum-likelihood fit for raw counts; covariance from the Fisher information."""
    scale = np.where(start != 0, np.abs(start), 1.0)

    def nll(z):
        m = _two_sided_model(taus, *(z * scale))
        if np.any(m <= 0):
            return np.inf, np.zeros_like(z)
        J = _two_sided_jacobian(taus, *(z * scale)) * scale
        return float(np.sum(m - y * np.log(m))), (1 - y / m) @ J

    res = minimize(nll, start / scale, jac=True, method="BFGS", options={"gtol": 1e-10, "maxiter": 2000})
    theta = res.x * scale
    m = _two_sided_model(taus, *theta)
    J = _two_sided_jacobian(taus, *theta) * scale
    fisher = J.T @ (J / m[:, None])
    try:
        cov = np.linalg.inv(fisher)
    except np.linalg.LinAlgError:
        cov = np.full_like(fisher, np.nan)
    return theta, cov * np.outer(scale, scale)


def fit_two_sided_exponential(data: Union[CoincidenceHistogram, CorrelationCurve]) -> TwoSidedFit:
    """Fit floor + A exp(-2 pi dnu_{+-} |tau - tau_p|) with a separate rate per side.

    The + side (tau > tau_p) is the signal side under the t_signal - t_idler
    convention. Count histograms use a Poisson likelihood, which avoids the
    low-count bias of least squares; curves use (weighted) least squares.
    Raises when no point rises above the floor by 3 sigma, corrected for
    the number of bins searched.
    """
    taus, y, err, step = _curve_data(data)
    floor0, sigma = _floor_and_noise(y, err)
    k = int(np.argmax(y))
    amp0 = float(y[k] - floor0)
    # 3 sigma after the look-elsewhere correction for the number of bins
    z = float(norm.isf(norm.sf(3.0) / y.size))
    if not amp0 > z * sigma:
        raise EstimatorError("no significant peak above the floor")
    half = floor0 + amp0 / 2
    right = np.flatnonzero((taus > taus[k]) & (y < half))
    left = np.flatnonzero((taus < taus[k]) & (y < half))
    w_p = (taus[right[0]] - taus[k]) if right.size else (taus[-1] - taus[k]) / 4
    w_m = (taus[k] - taus[left[-1]]) if left.size else (taus[k] - taus[0]) / 4
    guess_p = math.log(2) / (2 * math.pi * max(w_p, step, 1e-15))
    guess_m = math.log(2) / (2 * math.pi * max(w_m, step, 1e-15))
    p0 = np.array([floor0, amp0, taus[k], guess_p, guess_m])
    try:
        with warnings.catch_warnings():
            # exact curves give no residual scatter, hence no covariance
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, pcov = curve_fit(_two_sided_model, taus, y, p0=p0, sigma=err, absolute_sigma=err is not None, maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        raise EstimatorError(f"two-sided exponential fit failed: {exc}") from exc
    popt[3:] = np.abs(popt[3:])
    if isinstance(data, CoincidenceHistogram) and popt[0] > 0:
        popt, pcov = _poisson_refine(taus, y, popt)
    floor, amp, tau_p, nu_p, nu_m = (float(v) for v in popt)
    if not (nu_p > 0 and nu_m > 0 and amp > 0):
        raise EstimatorError("two-sided exponential fit did not converge to a peak")
    perr = np.sqrt(np.clip(np.diag(pcov), 0, None))
    fwhm = math.log(2) / (2 * math.pi) * (1 / nu_p + 1 / nu_m)
    return TwoSidedFit(nu_p, nu_m, fwhm, floor, amp, tau_p, float(perr[3]), float(perr[4]))


def oscillation_period(data: Union[CoincidenceHistogram, CorrelationCurve], relative_prominence: float = 0.25) -> float:
    """Mean spacing of the main peaks of an oscillating correlation curve.

    The curve is smoothed over 3 bins. Peaks must rise 3 sigma above their
    surroundings and reach ``relative_prominence`` of the strongest peak's
    prominence, which rejects interference sidelobes between main peaks.
    """
    taus, y, err, _ = _curve_data(data)
    smooth = np.convolve(y, np.ones(3) / 3, mode="same")
    smooth[0], smooth[-1] = y[0], y[-1]
    sigma = float(np.median(err)) / math.sqrt(3) if err is not None else 0.0
    peaks, props = find_peaks(smooth, prominence=max(3 * sigma, 1e-300))
    if peaks.size:
        keep = props["prominences"] >= relative_prominence * props["prominences"].max()
        peaks = peaks[keep]
    if peaks.size < 3:
        raise EstimatorError(f"need at least 3 resolvable peaks, found {peaks.size}")
    return float((taus[peaks[-1]] - taus[peaks[0]]) / (peaks.size - 1))


def _hbt_split(times: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    first = rng.random(times.size) < 0.5
    return times[first], times[~first]


def cauchy_schwarz_from_tags(
    tags: TimeTags,
    window: float,
    center: float = 0.0,
    channel_a: str = "idler",
    channel_b: str = "signal",
    split_seed: int = 0,
) -> WitnessResult:
    """R = g2_ab^2 / (g2_aa g2_bb); auto-correlations use a random 50:50 split of each channel."""
    rng = np.random.Generator(np.random.Philox(split_seed))
    cross = g2_windowed(histogram(tags, channel_a, channel_b, window, (center - window / 2, center + window / 2)), window, center)
    autos = []
    for ch in (channel_a, channel_b):
        x, y = _hbt_split(tags.channel(ch), rng)
        split = TimeTags(tags.duration_ps, tags.seed, {"signal": x, "idler": y})
        autos.append(g2_windowed(histogram(split, "idler", "signal", window, (-window / 2, window / 2)), window))
    g_aa, g_bb = autos
    if g_aa.value == 0 or g_bb.value == 0:
        raise EstimatorError("zero auto-correlation coincidences")
    R = cross.value**2 / (g_aa.value * g_bb.value)
    rel = math.sqrt((2 * cross.statistical_error / cross.value) ** 2 + (g_aa.statistical_error / g_aa.value) ** 2 + (g_bb.statistical_error / g_bb.value) ** 2) if cross.value > 0 else 0.0
    return WitnessResult(R, R * rel, 1.0)


def g2_auto_from_counts(counts: np.ndarray, rng: np.random.Generator) -> WitnessResult:
    """Zero-delay autocorrelation of per-slot photon numbers behind a 50:50 splitter."""
    counts = np.asarray(counts)
    a = rng.binomial(counts, 0.5)
    b = counts - a
    ma, mb = a.mean(), b.mean()
    if ma == 0 or mb == 0:
        raise EstimatorError("no detections in one splitter arm")
    coinc = float(np.sum(a * b))
    g2 = float(np.mean(a * b) / (ma * mb))
    err = g2 * math.sqrt(1 / max(coinc, 1) + 1 / a.sum() + 1 / b.sum())
    return WitnessResult(g2, err, G2_CLASSICAL)


@dataclass(frozen=True)
class EchoFraction:
    value: float
    error: float
    echo_counts: float
    reference_counts: float


def net_coincidences(hist: CoincidenceHistogram, center: float, window: float) -> tuple[float, float]:
    """Coincidences in a window minus the singles-predicted accidentals, with error."""
    sel = _window_bins(hist, center, window)
    C = float(hist.counts[sel].sum())
    acc = hist.rate_a * hist.rate_b * sel.sum() * hist.bin_width * hist.duration
    return C - acc, math.sqrt(C + acc**2 * (1 / max(hist.n_a, 1) + 1 / max(hist.n_b, 1)))


def echo_fraction(memory_hist: CoincidenceHistogram, reference_hist: CoincidenceHistogram, delay: float, window: float) -> EchoFraction:
    """Net echo coincidences relative to net input coincidences of a transparency run.

    Both histograms should come from runs with the same pairs (same seed).
    The error treats recall as binomial thinning of the reference pairs.
    """
    echo, echo_err = net_coincidences(memory_hist, delay, window)
    ref, ref_err = net_coincidences(reference_hist, 0.0, window)
    if ref <= 0:
        raise EstimatorError("no net coincidences in the reference run")
    f = echo / ref
    binomial = math.sqrt(max(f * (1 - f), 0.0) / ref)
    accidental = math.sqrt(max(echo_err**2 - max(echo, 0.0), 0.0)) / ref
    return EchoFraction(f, math.hypot(binomial, accidental), echo, ref)


def franson_fringe(phase_s: float, phase_i: float, visibility: float):
    """Normalised coincidence probability (1 + V cos(phi_s + phi_i)) / 2."""
    if not 0 <= visibility <= 1:
        raise ValueError(f"visibility must be in [0, 1], got {visibility}")
    return (1 + visibility * np.cos(np.add(phase_s, phase_i))) / 2


def chsh_from_visibility(visibility: float, visibility_error: float = 0.0) -> WitnessResult:
    """CHSH value of a sinusoidal fringe at optimal settings, S = 2 sqrt(2) V."""
    if not 0 <= visibility <= 1:
        raise ValueError(f"visibility must be in [0, 1], got {visibility}")
    # dividing by the float 1/sqrt(2) makes S exactly 2 at the boundary
    S = 2 * (float(visibility) / INV_SQRT2)
    return WitnessResult(S, 2 * math.sqrt(2) * visibility_error, CHSH_CLASSICAL)


@dataclass(frozen=True)
class Concurrence:
    value: float
    raw: float


def concurrence(visibility: float, p00: float, p01: float, p10: float, p11: float, tol: float = 1e-9) -> Concurrence:
    """Lower bound on the concurrence of a two-memory single-photon entangled state."""
    probs = (p00, p01, p10, p11)
    if not 0 <= visibility <= 1:
        raise ValueError(f"visibility must be in [0, 1], got {visibility}")
    if any(p < 0 for p in probs) or sum(probs) > 1 + tol:
        raise ValueError("probabilities must be >= 0 and sum to at most 1")
    raw = visibility * (p10 + p01) - math.sqrt(2 * p00 * p11)
    return Concurrence(max(raw, 0.0), raw)


def mu1(noise_prob_per_window: float, eta_total: float) -> float:
    """Mean input photon number giving unit signal-to-noise at the memory output."""
    if not eta_total > 0:
        raise ValueError("memory efficiency must be > 0")
    if not noise_prob_per_window >= 0:
        raise ValueError("noise probability must be >= 0")
    return noise_prob_per_window / eta_total


@dataclass(frozen=True)
class HeraldCompatibility:
    ratio: float
    compatible: bool


def herald_compatibility(mu1_value: float, eta_herald: float, threshold: float = HERALD_THRESHOLD) -> HeraldCompatibility:
    if not 0 < eta_herald <= 1:
        raise ValueError(f"heralding efficiency must be in (0, 1], got {eta_herald}")
    ratio = mu1_value / eta_herald
    return HeraldCompatibility(ratio, ratio < threshold)
