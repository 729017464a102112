import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from qmem.analysis import oscillation_period
from qmem.errors import RegimeError
from qmem.spdc import (
    SourceSpec,
    cauchy_schwarz,
    cavity_enhancement,
    cluster_structure,
    coherence_time,
    mode_count_from_autocorrelation,
    multimode_excess_area,
    multimode_g2_cross,
    normalize_multimode,
    pair_probability,
    photon_number_distribution,
    single_mode_g2,
    tmss_statistics,
    two_sided_fwhm,
    vernier_period,
)

# p -> <n^2>/<n>^2 by summing the geometric distribution (tests/oracles.py)
ORACLE_G2_CROSS = {
    0.005: 200.99999999999997,
    0.01: 100.99999999999999,
    0.05: 21.000000000000004,
    0.1: 10.999999999999998,
}
# term-by-term scalar evaluation of the diagonal mode sum
# (2.9 / 1.7 MHz, FSR 400 / 396 MHz, 4 modes, no transit offset)
ORACLE_MULTIMODE_RAW = {
    -3e-9: 8.339716696811701e-13,
    0.0: 4.812414148702171e-13,
    1.1e-9: 4.2436046219048945e-14,
    2.5e-9: 4.598111918548955e-13,
    7e-9: 7.241179960140173e-13,
}
ORACLE_MULTIMODE_T0 = 4.247392586018625e-16  # 3 modes, transit offset 0.4 ns, tau = 1 ns
ORACLE_FWHM = 1.0293280089827963e-07  # brentq on the half-maximum crossings, 2.9 / 1.7 MHz


def source(**kw):
    base = dict(
        pump_power=1.0,
        spectral_brightness=8e3,
        signal_linewidth=2.9e6,
        idler_linewidth=1.7e6,
        fsr_signal=400e6,
        fsr_idler=396e6,
    )
    base.update(kw)
    return SourceSpec(**base)


# brightness arithmetic


def test_pair_probability_examples():
    nd = source(spectral_brightness=6.3e3)
    assert pair_probability(nd, 43e6, 10e-9) == pytest.approx(2.709e-3, rel=1e-12)
    assert pair_probability(source(), 2e6, 400e-9) == pytest.approx(6.4e-3, rel=1e-12)
    assert pair_probability(source(pump_power=0.0), 2e6, 400e-9) == 0.0


def test_pair_probability_saturation():
    with pytest.raises(RegimeError):
        pair_probability(source(pump_power=1e3), 2e6, 400e-9)
    with pytest.raises(ValueError):
        pair_probability(source(), 2e6, 0.0)
    with pytest.raises(ValueError):
        pair_probability(source(), None, 1e-9)


@given(st.floats(0.01, 10), st.floats(0.1e6, 50e6), st.floats(1e-9, 100e-9), st.floats(0.5, 3))
def test_pair_probability_linear(power, bw, window, k):
    base = pair_probability(source(pump_power=power), bw, window)
    assert pair_probability(source(pump_power=power * k), bw, window) == pytest.approx(k * base, rel=1e-12)
    assert pair_probability(source(pump_power=power), bw * k, window) == pytest.approx(k * base, rel=1e-12)
    assert pair_probability(source(pump_power=power), bw, window * k) == pytest.approx(k * base, rel=1e-12)


# two-mode squeezed state


def test_tmss_examples():
    assert tmss_statistics(0.0135).g2_cross == pytest.approx(75.07, abs=0.01)
    half = tmss_statistics(0.5)
    assert half.mean_signal_photons == 1.0 and half.g2_cross == 3.0
    assert tmss_statistics(1 - 1e-12).g2_cross == pytest.approx(2.0, abs=1e-9)
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(RegimeError):
            tmss_statistics(bad)


@pytest.mark.parametrize("p", sorted(ORACLE_G2_CROSS))
def test_tmss_g2_matches_enumeration(p):
    assert tmss_statistics(p).g2_cross == pytest.approx(ORACLE_G2_CROSS[p], rel=1e-12)


@given(st.floats(1e-6, 1 - 1e-6), st.floats(1e-6, 1 - 1e-6))
def test_tmss_invariants(p1, p2):
    s = tmss_statistics(p1)
    assert (s.g2_cross - 1) * p1 == pytest.approx(1.0, rel=1e-12)
    assert 1 <= s.g2_auto_signal <= 2 and 1 <= s.g2_auto_idler <= 2
    if p1 < p2:
        assert s.g2_cross > tmss_statistics(p2).g2_cross


def test_photon_number_distribution():
    vac = photon_number_distribution(0.0, 3)
    assert vac.probabilities.tolist() == [1.0, 0.0, 0.0, 0.0] and vac.tail_mass == 0.0
    d = photon_number_distribution(0.5, 2)
    assert d.probabilities.tolist() == [0.5, 0.25, 0.125]
    assert d.probabilities.sum() + d.tail_mass == pytest.approx(1.0)
    long = photon_number_distribution(0.3, 200)
    assert long.mean == pytest.approx(0.3 / 0.7, rel=1e-12)


# correlation curves


def test_single_mode_examples():
    s = source(signal_linewidth=2e6, idler_linewidth=2e6)
    curve = single_mode_g2(s, 0.01, [-1e-3, 0.0, 1e-3])
    assert curve.values[0] == pytest.approx(1.0, abs=1e-12)
    assert curve.values[2] == pytest.approx(1.0, abs=1e-12)
    assert curve.values[1] == pytest.approx(101.0, rel=1e-12)


def test_fwhm_matches_root_finding():
    assert two_sided_fwhm(2.9e6, 1.7e6) == pytest.approx(ORACLE_FWHM, rel=1e-9)
    taus = np.linspace(-400e-9, 400e-9, 160_001)
    y = single_mode_g2(source(), 0.01, taus).values - 1
    above = taus[y >= y.max() / 2]
    assert above[-1] - above[0] == pytest.approx(ORACLE_FWHM, abs=2 * (taus[1] - taus[0]))


@given(st.floats(0.5e6, 20e6), st.floats(0.5e6, 20e6), st.floats(1e-4, 0.5))
@settings(max_examples=25, deadline=None)
def test_single_mode_excess_area(lw_s, lw_i, p):
    s = source(signal_linewidth=lw_s, idler_linewidth=lw_i)
    f = lambda t: single_mode_g2(s, p, [t]).values[0] - 1
    gs, gi = 2 * math.pi * lw_s, 2 * math.pi * lw_i
    area = quad(f, -60 / gi, 0, epsrel=1e-10)[0] + quad(f, 0, 60 / gs, epsrel=1e-10)[0]
    expected = 4 / p * gs * gi / (gs + gi) ** 2 * (1 / gs + 1 / gi)
    assert area == pytest.approx(expected, rel=1e-6)


def test_curve_validation():
    from qmem.spdc import CorrelationCurve

    with pytest.raises(ValueError):
        CorrelationCurve([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        CorrelationCurve([0.0, 1.0], [1.0])


@pytest.mark.parametrize("tau", sorted(ORACLE_MULTIMODE_RAW))
def test_multimode_matches_scalar_sum(tau):
    got = multimode_g2_cross(source(n_modes_per_cluster=4), [tau]).values[0]
    assert got == pytest.approx(ORACLE_MULTIMODE_RAW[tau], rel=1e-10)


def test_multimode_transit_offset():
    got = multimode_g2_cross(source(n_modes_per_cluster=3, transit_offset=0.4e-9), [1e-9]).values[0]
    assert got == pytest.approx(ORACLE_MULTIMODE_T0, rel=1e-10)


def test_multimode_single_mode_reduces():
    taus = np.linspace(-1e-6, 1e-6, 2001)
    s = source(n_modes_per_cluster=1)
    mm = normalize_multimode(multimode_g2_cross(s, taus), s, 0.01)
    sm = single_mode_g2(s, 0.01, taus)
    assert np.max(np.abs(mm.values - sm.values) / sm.values.max()) < 1e-6
    raw = multimode_g2_cross(s, taus).values
    peak = single_mode_g2(s, 0.01, taus).values - 1
    assert np.max(np.abs(raw / raw.max() - peak / peak.max())) < 1e-6


def test_multimode_symmetry_for_equal_linewidths():
    s = source(signal_linewidth=2e6, idler_linewidth=2e6, fsr_idler=400e6, n_modes_per_cluster=3)
    taus = np.linspace(0, 50e-9, 501)
    a = multimode_g2_cross(s, taus).values
    b = multimode_g2_cross(s, -taus[::-1]).values[::-1]
    np.testing.assert_allclose(a, b, rtol=1e-12)


@pytest.mark.parametrize("n_modes", range(2, 9))
def test_multimode_peak_spacing(n_modes):
    step = 0.01e-9
    taus = np.arange(0, 30e-9, step)
    curve = multimode_g2_cross(source(n_modes_per_cluster=n_modes), taus)
    assert oscillation_period(curve) == pytest.approx(1 / 400e6, abs=step)


def test_multimode_partition_bit_identical():
    s = source(n_modes_per_cluster=4, transit_offset=0.3e-9)
    taus = np.linspace(-40e-9, 40e-9, 4001)
    whole = multimode_g2_cross(s, taus).values
    parts = np.concatenate([multimode_g2_cross(s, chunk).values for chunk in np.array_split(taus, 7)])
    assert np.array_equal(whole, parts)


def test_multimode_normalised_area():
    s = source(n_modes_per_cluster=4)
    p = 0.0128
    f = lambda t: normalize_multimode(multimode_g2_cross(s, [t]), s, p).values[0] - 1
    area = quad(f, -2e-6, 0, limit=2000)[0] + quad(f, 0, 2e-6, limit=2000)[0]
    expected = 4 / p / (2 * math.pi * (2.9e6 + 1.7e6))
    assert area == pytest.approx(expected, rel=1e-4)
    assert multimode_excess_area(s) > 0


def test_multimode_cutoff_checks():
    with pytest.raises(RegimeError):
        multimode_g2_cross(source(n_modes_per_cluster=4), [0.0], m_cutoff=2)
    with pytest.raises(ValueError):
        multimode_g2_cross(source(), [np.nan])
    with pytest.raises(ValueError):
        normalize_multimode(single_mode_g2(source(), 0.01, [0.0, 1.0]), source(), 0.01)


# conventions and small formulas


def test_coherence_time():
    assert coherence_time(43e6) == pytest.approx(7e-9, rel=0.1)
    assert coherence_time(1.7e6) == pytest.approx(187e-9, abs=0.5e-9)
    assert coherence_time(1e30) < 1e-30
    with pytest.raises(ValueError):
        coherence_time(0.0)


def test_mode_count_examples():
    assert mode_count_from_autocorrelation(2.0) == 1.0
    assert round(mode_count_from_autocorrelation(1.9), 2) == 1.11
    assert round(mode_count_from_autocorrelation(1.8), 2) == 1.25
    assert mode_count_from_autocorrelation(1.25) == 4.0
    for bad in (1.0, 0.5, 2.1):
        with pytest.raises(RegimeError):
            mode_count_from_autocorrelation(bad)


@given(st.floats(1, 100))
def test_mode_count_round_trip(k):
    assert mode_count_from_autocorrelation(1 + 1 / k) == pytest.approx(k, rel=1e-12)


def test_cavity_enhancement():
    assert cavity_enhancement(math.pi, math.pi) == pytest.approx(math.pi)
    assert cavity_enhancement(200, 200) == pytest.approx(200**2 / math.pi)
    assert cavity_enhancement(200, 1e300) < 1e-290


def test_cauchy_schwarz_examples():
    r = cauchy_schwarz(2, 2, 2)
    assert r.R == 1.0 and not r.nonclassical
    r = cauchy_schwarz(80, 2, 2)
    assert r.R == 1600.0 and r.nonclassical
    assert cauchy_schwarz(1, 1, 1).R == 1.0


# cluster structure


def test_vernier_cluster_spacing():
    fsr_i = 400e6 * 45e9 / (45e9 + 400e6)
    assert vernier_period(400e6, fsr_i) == pytest.approx(45e9, rel=1e-9)
    spec = source(signal_linewidth=10e6, idler_linewidth=10e6, fsr_idler=fsr_i, phase_matching_bandwidth=200e9)
    centers = sorted(c.center_offset for c in cluster_structure(spec))
    assert np.diff(centers) == pytest.approx([45e9] * (len(centers) - 1), rel=1e-9)
    main = min(cluster_structure(spec), key=lambda c: c.suppression)
    assert main.center_offset == 0.0 and main.suppression == 0.0


def test_nearly_degenerate_single_cluster():
    clusters = cluster_structure(source(fsr_idler=400e6 + 1.0, phase_matching_bandwidth=80e9))
    assert len(clusters) == 1
    assert clusters[0].n_modes == 200


def test_narrow_phase_matching_single_mode():
    clusters = cluster_structure(source(fsr_idler=390e6, phase_matching_bandwidth=300e6))
    assert [(c.n_modes, c.center_offset) for c in clusters] == [(1, 0.0)]


def test_degenerate_fsr_rejected():
    with pytest.raises(RegimeError):
        cluster_structure(source(fsr_idler=400e6))
    assert vernier_period(1.0, 1.0) == math.inf


@pytest.mark.parametrize(
    "kw",
    [dict(pump_power=-1), dict(signal_linewidth=0), dict(n_modes_per_cluster=0), dict(n_modes_per_cluster=1.5), dict(fsr_idler=-1)],
)
def test_source_validation(kw):
    with pytest.raises(ValueError):
        source(**kw)
