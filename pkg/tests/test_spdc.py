import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oamcav import qstate as qs
from oamcav import spdc
from oamcav.spdc import EtalonSpec, SourceConfig

CFG = SourceConfig()
ETALON = EtalonSpec()
COMB = spdc.comb_weights(CFG)


def reference_weight(m, n=17, fsr=1.8e9, dfsr=17e6, finesse=120):
    """Independent evaluation of one cluster weight from the source parameters."""
    gamma = fsr / finesse
    x = math.pi * 2 * m * fsr / (2 * n * fsr)
    env = 1.0 if m == 0 else (math.sin(x) / x) ** 2
    return env / (1 + (m * dfsr / gamma) ** 2)


def test_comb_normalization_and_symmetry():
    assert COMB.c0 == 1.0
    assert np.array_equal(COMB.weights, COMB.weights[::-1])
    assert COMB.weights.argmax() == COMB.n_modes
    assert len(COMB.weights) == 2 * 17 + 1


def test_comb_weights_match_reference():
    for m in range(-17, 18):
        assert COMB.weights[m + 17] == pytest.approx(reference_weight(m), rel=1e-12, abs=1e-30)


def test_envelope_null_at_last_cluster():
    assert COMB.weights[-1] < 1e-30


def test_background_ratio_in_window():
    one_sided = sum(reference_weight(m) for m in range(1, 18))
    assert COMB.background_ratio() == pytest.approx(one_sided, rel=1e-12)
    assert 0.72 <= COMB.background_ratio() <= 1.02
    assert COMB.total_weight() == pytest.approx(1 + 2 * one_sided)


def test_comb_validation():
    with pytest.raises(ValueError):
        spdc.SpectralComb(np.arange(-1, 2), np.array([0.1, 1.0, 0.2]))
    with pytest.raises(ValueError):
        SourceConfig(n_modes=0)
    with pytest.raises(ValueError):
        SourceConfig(duty_factor=1.5)


def test_etalon_examples():
    assert spdc.etalon_transmission(ETALON, 0.0) == 1.0
    assert spdc.etalon_transmission(ETALON, ETALON.fsr) == pytest.approx(1.0)
    coeff = (2 * 30 / math.pi) ** 2
    oracle = 1 / (1 + coeff * math.sin(math.pi * 1.8e9 / 10.4e9) ** 2)
    assert spdc.etalon_transmission(ETALON, 1.8e9) == pytest.approx(oracle, rel=1e-12)
    assert oracle == pytest.approx(0.010, abs=0.001)


def test_output_state_structure():
    out = spdc.cavity_output_state(CFG)
    red = qs.partial_trace(out.state, ["oam_1", "pol_1", "oam_2", "pol_2"])
    assert red.purity == pytest.approx(1.0)
    assert qs.fidelity(red, spdc.oam_pol_state()) == pytest.approx(1.0)
    zz = qs.Observable.pauli({"oam_1": "Z", "oam_2": "Z"})
    assert qs.expectation(out.state, zz) == pytest.approx(-1.0)
    pf = qs.partial_trace(out.state, ["freq"]).matrix.diagonal().real
    assert pf.argmax() == 17


def test_pump_oam_rejected():
    with pytest.raises(ValueError, match="pump OAM"):
        spdc.cavity_output_state(SourceConfig(pump_oam=1))


def test_filtered_purity_matches_closed_form():
    out = spdc.cavity_output_state(CFG, COMB)
    res = spdc.filtered_state(out, ETALON, COMB, CFG.geometry.fsr)
    m = np.arange(-17, 18)
    t = np.array([1 / (1 + (60 / math.pi) ** 2 * math.sin(math.pi * k * 1.8e9 / 10.4e9) ** 2) for k in m])
    oracle = 1.0 / np.sum(COMB.weights * t ** 2)
    assert res["single_mode_purity"] == pytest.approx(oracle, rel=1e-10)
    assert spdc.single_mode_purity(COMB, ETALON, CFG.geometry.fsr) == pytest.approx(oracle, rel=1e-12)
    assert oracle >= 0.95
    assert res["survival_probability"] == pytest.approx(np.sum(COMB.weights * t ** 2) / COMB.total_weight())


def test_filtered_density_path_agrees_with_pure():
    out = spdc.cavity_output_state(CFG, COMB)
    pure = spdc.filtered_state(out, ETALON, COMB, CFG.geometry.fsr)
    mixed = spdc.filtered_state(spdc.BiphotonState(out.density()), ETALON, COMB, CFG.geometry.fsr)
    assert mixed["single_mode_purity"] == pytest.approx(pure["single_mode_purity"], rel=1e-10)


def test_ideal_and_identity_etalon_limits():
    out = spdc.cavity_output_state(CFG, COMB)
    sharp = spdc.filtered_state(out, EtalonSpec(10.4e9, 1e7), COMB, CFG.geometry.fsr)
    assert sharp["single_mode_purity"] == pytest.approx(1.0, abs=1e-9)
    single = spdc.project_single_mode(sharp["state"])
    assert qs.fidelity(single.state, spdc.oam_pol_state()) == pytest.approx(1.0)
    flat = spdc.filtered_state(out, EtalonSpec(10.4e9, 1e-9), COMB, CFG.geometry.fsr)
    assert flat["single_mode_purity"] == pytest.approx(1 / COMB.total_weight(), rel=1e-9)


def test_filter_mode_count_mismatch():
    out = spdc.cavity_output_state(CFG, COMB)
    small = spdc.comb_weights(SourceConfig(n_modes=5))
    with pytest.raises(ValueError, match="side modes"):
        spdc.filtered_state(out, ETALON, small, CFG.geometry.fsr)


def test_comb_table_rows():
    rows = spdc.comb_table(COMB, ETALON, CFG.geometry.fsr)
    assert [r["m"] for r in rows] == list(range(-17, 18))
    r0 = rows[17]
    assert r0["c_m"] == 1.0 and r0["etalon_T"] == 1.0 and r0["weight_after_etalon"] == 1.0


def test_correlation_fwhm():
    assert spdc.correlation_fwhm(13.8e6) == pytest.approx(15.99e-9, abs=0.005e-9)
    assert spdc.correlation_fwhm(13.8e6) == pytest.approx(16.0e-9, abs=0.1e-9)
    c = spdc.correlation_curve(13.8e6, amplitude=3.0)
    assert c.values[100] == pytest.approx(3.0, rel=1e-12)
    assert np.allclose(c.values, c.values[::-1])
    with pytest.raises(ValueError):
        spdc.correlation_curve(0.0)


def test_correlation_is_fourier_of_lorentzian():
    tau = np.linspace(-60e-9, 60e-9, 121)
    fft = spdc.lorentzian_correlation(13.8e6, tau)
    exact = spdc.correlation_curve(13.8e6, tau_max=60e-9, samples=121).values
    assert np.max(np.abs(fft - exact)) < 2e-3


def test_histogram_totals_and_determinism():
    curve = spdc.correlation_curve(13.8e6)
    mean = spdc.expected_histogram(curve, 2.0, 10 ** 6, 1e-9)
    h1 = spdc.sample_histogram(curve, 2.0, 10 ** 6, 1e-9, seed=5)
    h2 = spdc.sample_histogram(curve, 2.0, 10 ** 6, 1e-9, seed=5)
    assert np.array_equal(h1.counts, h2.counts)
    total = mean.counts.sum()
    assert abs(h1.counts.sum() - total) < 5 * math.sqrt(total)
    inside = 1 - math.exp(-2 * math.pi * 13.8e6 * 100e-9)
    assert (mean.counts.sum() - 2.0 * len(mean.counts)) == pytest.approx(1e6 * inside, rel=1e-9)


def test_histogram_validation():
    curve = spdc.correlation_curve(13.8e6)
    with pytest.raises(ValueError):
        spdc.sample_histogram(curve, 0.0, 0, 1e-9, 1)
    with pytest.raises(ValueError):
        spdc.sample_histogram(curve, -1.0, 10, 1e-9, 1)


def test_pair_rate_examples():
    assert spdc.pair_rate(CFG, pump_power=50) == pytest.approx(1449.0)
    assert spdc.pair_rate(CFG, pump_power=50) == pytest.approx(1400, rel=0.05)
    assert spdc.pair_rate(CFG, pump_power=100) == 2 * spdc.pair_rate(CFG, pump_power=50)
    assert spdc.pair_rate(CFG, pump_power=0) == 0
    assert spdc.source_time_rate(CFG) == pytest.approx(1449.0 / 0.75)
    assert spdc.pair_rate(spdc.with_power(CFG, 20)) == pytest.approx(2.1 * 13.8 * 20)


@given(st.integers(1, 40), st.floats(1e8, 1e10), st.floats(0, 0.05), st.floats(10, 1000))
def test_comb_properties(n, fsr, split, finesse):
    from oamcav.cavity import CavityGeometry

    geom = CavityGeometry.from_fsr(fsr, split * fsr, finesse=finesse)
    comb = spdc.comb_weights(SourceConfig(geometry=geom, n_modes=n))
    w = comb.weights
    assert w[n] == 1.0
    assert np.array_equal(w, w[::-1])
    assert np.all(w <= 1.0) and np.all(w >= 0)
    assert np.all(np.diff(w[n:]) <= 1e-15)


@given(st.floats(1e6, 1e8))
def test_fwhm_identity(dnu):
    c = spdc.correlation_curve(dnu, tau_max=5 * spdc.correlation_fwhm(dnu), samples=3)
    half = spdc.correlation_fwhm(dnu) / 2
    assert math.exp(-2 * math.pi * dnu * half) == pytest.approx(0.5)
    assert c.fwhm == spdc.correlation_fwhm(dnu)


@given(st.floats(1e6, 1e8), st.floats(0.1e-9, 5e-9))
def test_binned_exponential_is_probability(dnu, width):
    edges = np.arange(-200, 201) * width
    p = spdc.binned_exponential(edges, dnu)
    assert np.all(p >= 0)
    assert p.sum() <= 1 + 1e-12
    assert np.allclose(p, p[::-1], rtol=1e-9, atol=1e-15)
