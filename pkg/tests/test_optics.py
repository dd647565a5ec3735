import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oamcav import optics, spdc
from oamcav import qstate as qs
from oamcav.optics import Element, Step

SOURCE = spdc.BiphotonState(spdc.oam_pol_state())


def pauli_projector(basis, outcome):
    return (np.eye(2) + (1 if outcome == "+" else -1) * qs.PAULI[basis]) / 2


def test_wave_plates():
    h = np.array([1, 0])
    assert np.allclose(optics.hwp(math.pi / 8) @ h, np.array([1, 1]) / math.sqrt(2))
    assert np.allclose(optics.hwp(math.pi / 4) @ h, [0, 1])
    assert qs.is_unitary(optics.qwp(0.3))


@pytest.mark.parametrize("basis,outcome", list(itertools.product("ZXY", "+-")))
def test_analyzers_are_pauli_eigenprojectors(basis, outcome):
    for kind in (qs.DofKind.OAM, qs.DofKind.POL):
        proj = optics.analyzer_projector(kind, basis, outcome)
        assert np.allclose(proj, pauli_projector(basis, outcome), atol=1e-12)


def test_spp_smf_analyzer_examples():
    z_plus = optics.oam_analyzer([Element("SPP", charge=-1)])
    assert np.allclose(z_plus, np.diag([1, 0]))
    x_plus = optics.oam_analyzer([Element("BPP", angle=0.0)])
    v = np.array([1, 1]) / math.sqrt(2)
    assert np.real(v @ x_plus @ v) == pytest.approx(1.0)


def test_ladder_elements():
    assert qs.is_unitary(optics.bpp_ladder(0.7))
    spp = optics.spp_ladder(1)
    top = np.zeros(7)
    top[optics._ladder_index(3)] = 1
    assert np.linalg.norm(spp @ top) == 0
    assert not optics.element_unitary(Element("SPP", charge=1)).unitary
    assert optics.element_unitary(Element("BPP", angle=0.1)).unitary


def test_qplate_flips_handedness_and_shifts_oam():
    q = optics.qplate_ladder(0.5)
    left = np.array([1, 1j]) / math.sqrt(2)
    right = np.array([1, -1j]) / math.sqrt(2)
    m0 = np.zeros(7)
    m0[optics._ladder_index(0)] = 1
    m1 = np.zeros(7)
    m1[optics._ladder_index(1)] = 1
    assert np.allclose(q @ np.kron(m0, left), np.kron(m1, right))


def test_element_validation():
    with pytest.raises(ValueError):
        Element("SPP", charge=1.5)
    with pytest.raises(ValueError):
        Element("QPLATE", q=0.0)
    with pytest.raises(ValueError):
        Element("HWP", angle=float("nan"))
    with pytest.raises(ValueError):
        Element("MIRROR")


def test_pbs_split_gives_oam_bell():
    st_ = optics.pbs_split(SOURCE)
    assert st_.survival_probability == 1.0
    red = qs.partial_trace(st_.state, ["oam_A", "oam_B"])
    assert qs.fidelity(red, optics.oam_bell()) == pytest.approx(1.0, abs=1e-12)
    zz = qs.Observable.pauli({"oam_A": "Z", "oam_B": "Z"})
    assert qs.expectation(st_.state, zz) == pytest.approx(-1.0)
    assert [d.name for d in st_.dofs] == list(optics.SPLIT_ORDER)


def test_pbs_split_routes_v_photon_to_a(rng):
    for _ in range(20):
        oam_pair = qs.random_pure([qs.oam("oam_1"), qs.oam("oam_2")], rng)
        pols = qs.basis_state([qs.pol("pol_1"), qs.pol("pol_2")], ["H", "V"])
        src = qs.permute(qs.tensor_product(oam_pair, pols), ["oam_1", "pol_1", "oam_2", "pol_2"])
        out = optics.pbs_split(spdc.BiphotonState(src))
        red = qs.partial_trace(out.state, ["oam_A", "oam_B"])
        expected = qs.PureState((qs.oam("oam_A"), qs.oam("oam_B")), oam_pair.tensor().T.reshape(-1))
        assert qs.fidelity(red, expected) == pytest.approx(1.0, abs=1e-12)
        assert qs.expectation(out.state, qs.Observable.pauli({"pol_A": "Z", "pol_B": "Z"})) == pytest.approx(-1.0)


def test_pbs_split_rejects_same_polarization():
    s = qs.basis_state(spdc.SLOT_DOFS, ["+1", "H", "-1", "H"])
    with pytest.raises(ValueError, match="type-II"):
        optics.pbs_split(spdc.BiphotonState(s))


def test_otp_examples():
    conv = optics.run_pipeline(SOURCE, optics.polarization_steps())
    assert conv.survival_probability == 1.0
    red = qs.partial_trace(conv.state, ["pol_A", "pol_B"])
    assert qs.fidelity(red, optics.pol_bell()) == pytest.approx(1.0, abs=1e-12)
    split = optics.pbs_split(SOURCE)
    twice = optics.otp_convert(optics.otp_convert(split, "A"), "A")
    assert np.allclose(twice.state.amplitudes, split.state.amplitudes)
    prod = qs.basis_state([qs.oam("oam_A"), qs.pol("pol_A")], ["+1", "H"])
    out = optics.otp_convert(spdc.BiphotonState(prod), "A")
    assert np.allclose(out.state.amplitudes, prod.amplitudes)
    with pytest.raises(ValueError):
        optics.otp_convert(split, "C")


def test_canonical_hyper_pipeline():
    pre = optics.run_pipeline(SOURCE, optics.canonical_hyper_steps()[:-1])
    oam_before = qs.partial_trace(pre.state, ["oam_A", "oam_B"])
    post = optics.hyper_postselect(pre)
    assert post["success_probability"] == pytest.approx(0.5, abs=1e-12)
    red = qs.partial_trace(post["state"].state, ["pol_A", "pol_B", "oam_A", "oam_B"])
    assert qs.fidelity(red, optics.hyper_target()) == pytest.approx(1.0, abs=1e-12)
    oam_after = qs.partial_trace(post["state"].state, ["oam_A", "oam_B"])
    assert np.allclose(oam_after.matrix, oam_before.matrix, atol=1e-12)
    full = optics.run_pipeline(SOURCE, optics.canonical_hyper_steps())
    assert full.survival_probability == pytest.approx(0.5)


def test_blocked_photon_gives_zero_success():
    split = optics.pbs_split(SOURCE)
    blocked = optics.apply_element(split, Element("BLOCK"), "A")
    assert optics.hyper_postselect(blocked)["success_probability"] == 0.0


def test_postselect_preconditions():
    with pytest.raises(ValueError, match="path"):
        optics.hyper_postselect(SOURCE)
    out = spdc.cavity_output_state(spdc.SourceConfig(n_modes=2))
    split = optics.pbs_split(out)
    with pytest.raises(ValueError, match="frequency"):
        optics.hyper_postselect(split)


def _explicit_projector():
    """Accepted events: both photons leave with the same polarization."""
    p = np.zeros((16, 16))
    for oa, pa, ob, pb in itertools.product(range(2), repeat=4):
        if pa == pb:
            i = ((oa * 2 + pa) * 2 + ob) * 2 + pb
            p[i, i] = 1
    return p


def test_postselection_born_rule(rng):
    proj = _explicit_projector()
    assert np.allclose(optics.postselection_projector(), proj)
    paths = qs.basis_state([qs.path("path_A"), qs.path("path_B")], ["A", "B"])
    core_dofs = [qs.oam("oam_A"), qs.pol("pol_A"), qs.oam("oam_B"), qs.pol("pol_B")]
    for _ in range(100):
        core = qs.random_pure(core_dofs, rng)
        full = qs.permute(qs.tensor_product(core, paths), list(optics.SPLIT_ORDER))
        got = optics.hyper_postselect(spdc.BiphotonState(full))["success_probability"]
        v = core.amplitudes
        assert got == pytest.approx(float(np.real(v.conj() @ proj @ v)), abs=1e-12)


def test_pipeline_file_roundtrip(tmp_path):
    doc = {"source": "single-mode", "steps": [
        {"kind": "PBS", "target": "split"},
        {"kind": "HWP", "target": "A", "angle": math.pi / 4},
        {"kind": "HWP", "target": "A", "angle": math.pi / 8},
        {"kind": "HWP", "target": "B", "angle": math.pi / 8},
        {"kind": "PBS", "target": "interfere"},
    ]}
    f = tmp_path / "p.json"
    f.write_text(json.dumps(doc))
    source, steps = optics.load_pipeline(f)
    assert source == "single-mode"
    a = optics.run_pipeline(SOURCE, steps)
    b = optics.run_pipeline(SOURCE, optics.canonical_hyper_steps())
    assert np.allclose(a.state.amplitudes, b.state.amplitudes)


@pytest.mark.parametrize("steps,msg", [
    ([{"target": "A"}], "no 'kind'"),
    ([{"kind": "LENS"}], "unknown element"),
    ([{"kind": "SPP", "charge": 0.5}], "SPP"),
])
def test_pipeline_file_errors(tmp_path, steps, msg):
    f = tmp_path / "bad.json"
    f.write_text(json.dumps({"steps": steps}))
    with pytest.raises(ValueError, match=msg):
        optics.load_pipeline(f)


def test_bad_pbs_target():
    with pytest.raises(ValueError, match="split"):
        optics.run_pipeline(SOURCE, [Step("PBS", "A")])


unitary_steps = st.lists(st.tuples(st.sampled_from(["HWP", "QWP", "OTP"]), st.sampled_from("AB"),
                                   st.floats(-math.pi, math.pi)), max_size=6)


@given(unitary_steps)
def test_unitary_elements_keep_survival(steps):
    state = optics.pbs_split(SOURCE)
    for kind, target, angle in steps:
        if kind == "OTP":
            state = optics.otp_convert(state, target)
        else:
            state = optics.apply_element(state, Element(kind, angle=angle), target)
    assert state.survival_probability == pytest.approx(1.0)
    assert state.state.norm == pytest.approx(1.0)


@given(st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi))
def test_wave_plates_unitary(a, b):
    assert qs.is_unitary(optics.hwp(a))
    assert qs.is_unitary(optics.qwp(b))


@given(st.floats(-math.pi, math.pi))
def test_postselection_never_exceeds_one(angle):
    steps = [Step("PBS", "split"), Step("HWP", "A", {"angle": angle})]
    pre = optics.run_pipeline(SOURCE, steps)
    p = optics.hyper_postselect(pre)["success_probability"]
    assert 0 <= p <= 1 + 1e-12
