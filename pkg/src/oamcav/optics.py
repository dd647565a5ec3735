"""Optical elements and the state pipeline downstream of the cavity.

After the first PBS the photons are labelled by path: photon A took the up
(reflected, V) port and photon B the down (transmitted, H) port. Their DOFs
are ``oam_A, pol_A, path_A, oam_B, pol_B, path_B``.

OAM elements are defined on a ladder ``m = +L .. -L`` (descending, so the
qubit order +1, -1 is preserved). On two-photon states the OAM space is the
{+1, -1} qubit; a ladder operator is restricted to it, and anything shifted
outside counts as loss.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import qstate as qs
from .qstate import DensityMatrix, PureState
from .spdc import BiphotonState

LADDER = 3
PHOTONS = ("A", "B")
SPLIT_ORDER = ("oam_A", "pol_A", "path_A", "oam_B", "pol_B", "path_B")


class ElementKind(enum.Enum):
    PBS = "PBS"
    HWP = "HWP"
    QWP = "QWP"
    SPP = "SPP"
    BPP = "BPP"
    QPLATE = "QPLATE"
    OTP = "OTP"
    SMF = "SMF"
    BLOCK = "BLOCK"


@dataclass(frozen=True)
class Element:
    kind: ElementKind
    angle: float = 0.0     # HWP / QWP fast axis, BPP phase (radians)
    charge: int = 0        # SPP OAM shift
    q: float = 0.5         # QPLATE topological charge

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", ElementKind(self.kind.upper()))
        if not math.isfinite(self.angle):
            raise ValueError("element angle must be finite")
        if self.kind is ElementKind.SPP and (int(self.charge) != self.charge or abs(self.charge) > 2 * LADDER):
            raise ValueError(f"SPP charge must be an integer with |k| <= {2 * LADDER}")
        if self.kind is ElementKind.QPLATE:
            two_q = 2 * self.q
            if abs(two_q - round(two_q)) > 1e-12 or round(two_q) == 0 or abs(two_q) > LADDER:
                raise ValueError("q-plate charge must be a non-zero half-integer with |2q| <= ladder size")


@dataclass(frozen=True)
class Operator:
    """A matrix plus the DOF kinds (in order) it acts on."""

    matrix: np.ndarray
    acts_on: tuple[str, ...]
    unitary: bool
    ladder: bool = False


def ladder_values(size: int = LADDER) -> np.ndarray:
    return np.arange(size, -size - 1, -1)


def _ladder_index(m: int, size: int = LADDER) -> int:
    return size - m


def _embed(size: int = LADDER) -> np.ndarray:
    """Isometry from the {+1, -1} qubit into the ladder."""
    q = np.zeros((2 * size + 1, 2), dtype=complex)
    q[_ladder_index(1, size), 0] = 1
    q[_ladder_index(-1, size), 1] = 1
    return q


def hwp(theta: float) -> np.ndarray:
    c, s = math.cos(2 * theta), math.sin(2 * theta)
    return np.array([[c, s], [s, -c]], dtype=complex)


def qwp(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c * c + 1j * s * s, (1 - 1j) * s * c],
                     [(1 - 1j) * s * c, s * s + 1j * c * c]], dtype=complex)


def spp_ladder(k: int, size: int = LADDER) -> np.ndarray:
    d = 2 * size + 1
    out = np.zeros((d, d), dtype=complex)
    for m in ladder_values(size):
        if abs(m + k) <= size:
            out[_ladder_index(m + k, size), _ladder_index(m, size)] = 1
    return out


def bpp_ladder(phi: float, size: int = LADDER) -> np.ndarray:
    """Swap |0> with (|+1> + e^{i phi} |-1>)/sqrt(2); identity on the orthogonal rest."""
    d = 2 * size + 1
    zero = np.zeros(d, dtype=complex)
    zero[_ladder_index(0, size)] = 1
    sup = np.zeros(d, dtype=complex)
    sup[_ladder_index(1, size)] = 1 / math.sqrt(2)
    sup[_ladder_index(-1, size)] = np.exp(1j * phi) / math.sqrt(2)
    return (np.eye(d) - np.outer(zero, zero) - np.outer(sup, sup.conj())
            + np.outer(zero, sup.conj()) + np.outer(sup, zero))


def smf_ladder(size: int = LADDER) -> np.ndarray:
    d = 2 * size + 1
    out = np.zeros((d, d), dtype=complex)
    out[_ladder_index(0, size), _ladder_index(0, size)] = 1
    return out


def qplate_ladder(q: float, size: int = LADDER) -> np.ndarray:
    """|L, m> -> |R, m + 2q>, |R, m> -> |L, m - 2q> on ladder x POL (H, V)."""
    shift = int(round(2 * q))
    left = np.array([1, 1j]) / math.sqrt(2)
    right = np.array([1, -1j]) / math.sqrt(2)
    op = (np.kron(spp_ladder(shift, size), np.outer(right, left.conj()))
          + np.kron(spp_ladder(-shift, size), np.outer(left, right.conj())))
    return op


SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)

# polarization -> path: H transmitted, V reflected into the other path
PBS_POL_PATH = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


def element_unitary(e: Element, size: int = LADDER) -> Operator:
    k = e.kind
    if k is ElementKind.HWP:
        return Operator(hwp(e.angle), ("pol",), True)
    if k is ElementKind.QWP:
        return Operator(qwp(e.angle), ("pol",), True)
    if k is ElementKind.OTP:
        return Operator(SWAP, ("oam", "pol"), True)
    if k is ElementKind.PBS:
        return Operator(PBS_POL_PATH, ("pol", "path"), True)
    if k is ElementKind.SPP:
        return Operator(spp_ladder(int(e.charge), size), ("oam",), False, ladder=True)
    if k is ElementKind.BPP:
        return Operator(bpp_ladder(e.angle, size), ("oam",), True, ladder=True)
    if k is ElementKind.QPLATE:
        return Operator(qplate_ladder(e.q, size), ("oam", "pol"), False, ladder=True)
    if k is ElementKind.SMF:
        return Operator(smf_ladder(size), ("oam",), False, ladder=True)
    if k is ElementKind.BLOCK:
        return Operator(np.zeros((2, 2), dtype=complex), ("pol",), False)
    raise ValueError(f"unsupported element {k}")


def restrict_to_qubit(op: Operator, size: int = LADDER) -> Operator:
    """Compress a ladder operator onto the {+1, -1} OAM qubit (loss outside)."""
    if not op.ladder:
        return op
    q = _embed(size)
    if op.acts_on == ("oam",):
        mat = q.conj().T @ op.matrix @ q
    else:
        qq = np.kron(q, np.eye(2))
        mat = qq.conj().T @ op.matrix @ qq
    return Operator(mat, op.acts_on, qs.is_unitary(mat), ladder=False)


def oam_analyzer(elements: Sequence[Element], size: int = LADDER) -> np.ndarray:
    """POVM element on the OAM qubit for phase plates followed by a single-mode fibre."""
    op = np.eye(2 * size + 1, dtype=complex)
    for e in elements:
        u = element_unitary(e, size)
        if u.acts_on != ("oam",):
            raise ValueError(f"{e.kind.value} is not an OAM-only element")
        op = u.matrix @ op
    m = smf_ladder(size) @ op @ _embed(size)
    return m.conj().T @ m


def pol_analyzer(elements: Sequence[Element], port: str = "H") -> np.ndarray:
    """POVM element for wave plates followed by one PBS output port."""
    op = np.eye(2, dtype=complex)
    for e in elements:
        u = element_unitary(e)
        if u.acts_on != ("pol",):
            raise ValueError(f"{e.kind.value} is not a polarization element")
        op = u.matrix @ op
    proj = np.diag([1, 0] if port == "H" else [0, 1]).astype(complex)
    m = proj @ op
    return m.conj().T @ m


# analyzer recipes: (basis, outcome) -> elements in front of the SMF / PBS port
OAM_SETTINGS = {
    ("Z", "+"): [Element(ElementKind.SPP, charge=-1)],
    ("Z", "-"): [Element(ElementKind.SPP, charge=1)],
    ("X", "+"): [Element(ElementKind.BPP, angle=0.0)],
    ("X", "-"): [Element(ElementKind.BPP, angle=math.pi)],
    ("Y", "+"): [Element(ElementKind.BPP, angle=math.pi / 2)],
    ("Y", "-"): [Element(ElementKind.BPP, angle=-math.pi / 2)],
}
POL_SETTINGS = {
    "Z": [],
    "X": [Element(ElementKind.HWP, angle=math.pi / 8)],
    "Y": [Element(ElementKind.QWP, angle=math.pi / 4)],
}


def analyzer_projector(kind: qs.DofKind, basis: str, outcome: str) -> np.ndarray:
    """Projector realized by the measurement optics for one DOF, basis and sign."""
    if kind is qs.DofKind.OAM:
        return oam_analyzer(OAM_SETTINGS[(basis, outcome)])
    if kind is qs.DofKind.POL:
        port = "H" if outcome == "+" else "V"
        return pol_analyzer(POL_SETTINGS[basis], port)
    raise ValueError(f"no analyzer for {kind.value} DOFs")


# --- pipeline operations ---------------------------------------------------------

def _routing_matrix() -> np.ndarray:
    """(oam_1, pol_1, oam_2, pol_2) -> (oam_A, pol_A, oam_B, pol_B): the V photon goes to A."""
    out = np.zeros((16, 16), dtype=complex)

    def idx(o1, p1, o2, p2):
        return ((o1 * 2 + p1) * 2 + o2) * 2 + p2

    H, V = 0, 1
    for o1 in range(2):
        for o2 in range(2):
            out[idx(o2, V, o1, H), idx(o1, H, o2, V)] = 1
            out[idx(o1, V, o2, H), idx(o1, V, o2, H)] = 1
    return out


_ROUTE = _routing_matrix()
_SLOTS_IN = ["oam_1", "pol_1", "oam_2", "pol_2"]


def _same_pol_weight(state) -> float:
    sub = state.state
    proj = np.diag([1.0, 0, 0, 1.0])
    if isinstance(sub, PureState):
        return qs.apply_operator(sub, proj, ["pol_1", "pol_2"]).probability
    red = qs.partial_trace(sub, ["pol_1", "pol_2"])
    return float(np.real(np.trace(proj @ red.matrix)))


def _apply(state, op: np.ndarray, targets: Sequence[str]):
    if isinstance(state, PureState):
        return qs.apply_operator(state, op, targets)
    return qs.apply_channel(state, op, targets)


def _norm2(state) -> float:
    if isinstance(state, PureState):
        return state.probability
    return float(np.trace(state.matrix).real)


def _normalized(state):
    if isinstance(state, PureState):
        return state.renormalized()
    return DensityMatrix(state.dofs, state.matrix / np.trace(state.matrix).real)


def _attach_paths(state):
    pa = qs.basis_state([qs.path("path_A")], ["A"])
    pb = qs.basis_state([qs.path("path_B")], ["B"])
    paths = qs.tensor_product(pa, pb)
    if isinstance(state, PureState):
        out = qs.tensor_product(state, paths)
    else:
        out = qs.tensor_density(state, paths.density())
    rest = [d.name for d in out.dofs if d.name not in SPLIT_ORDER]
    return qs.permute(out, list(SPLIT_ORDER) + rest)


def pbs_split(state: BiphotonState) -> BiphotonState:
    """Separate the type-II pair on a PBS: V photon to path A (up), H photon to path B (down)."""
    names = [d.name for d in state.dofs]
    if not set(_SLOTS_IN) <= set(names):
        raise ValueError("pbs_split expects slot DOFs oam_1, pol_1, oam_2, pol_2")
    if _same_pol_weight(state) > 1e-12:
        raise ValueError("input has same-polarization two-photon components (not type-II)")
    routed = _apply(state.state, _ROUTE, _SLOTS_IN)
    routed = qs.relabel(routed, {"oam_1": "oam_A", "pol_1": "pol_A", "oam_2": "oam_B", "pol_2": "pol_B"})
    if isinstance(routed, DensityMatrix):
        routed = DensityMatrix(routed.dofs, routed.matrix)
    return BiphotonState(_attach_paths(routed), state.survival_probability)


def _photon(photon: str) -> str:
    if photon not in PHOTONS:
        raise ValueError(f"photon must be 'A' or 'B', got {photon!r}")
    return photon


def otp_convert(state: BiphotonState, photon: str) -> BiphotonState:
    """Swap OAM and polarization of one photon under +1 <-> H, -1 <-> V."""
    p = _photon(photon)
    targets = [f"oam_{p}", f"pol_{p}"]
    names = [d.name for d in state.dofs]
    if not set(targets) <= set(names):
        raise ValueError(f"photon {p} lacks OAM or POL DOF")
    out = _apply(state.state, SWAP, targets)
    if isinstance(out, DensityMatrix):
        out = DensityMatrix(out.dofs, out.matrix)
    return BiphotonState(out, state.survival_probability)


def apply_element(state: BiphotonState, e: Element, photon: str) -> BiphotonState:
    """Apply a single-photon element; lossy elements reduce the survival probability."""
    p = _photon(photon)
    op = restrict_to_qubit(element_unitary(e))
    targets = [f"{kind}_{p}" for kind in op.acts_on]
    before = _norm2(state.state)
    out = _apply(state.state, op.matrix, targets)
    surv = _norm2(out) / before
    if surv <= 0:
        return BiphotonState(out, 0.0)
    return BiphotonState(_normalized(out), state.survival_probability * surv)


def _interference_matrix() -> np.ndarray:
    """Second PBS, one photon per output port: keep HH (both transmitted) and VV
    (both reflected, which exchanges the photons between ports)."""
    out = np.zeros((16, 16), dtype=complex)

    def idx(oa, pa, ob, pb):
        return ((oa * 2 + pa) * 2 + ob) * 2 + pb

    for oa in range(2):
        for ob in range(2):
            out[idx(oa, 0, ob, 0), idx(oa, 0, ob, 0)] = 1
            out[idx(ob, 1, oa, 1), idx(oa, 1, ob, 1)] = 1
    return out


_INTERFERE = _interference_matrix()


def postselection_projector() -> np.ndarray:
    """Projector onto the accepted subspace (equal polarizations) on (oam_A, pol_A, oam_B, pol_B)."""
    return _INTERFERE.conj().T @ _INTERFERE


def hyper_postselect(state: BiphotonState) -> dict:
    names = [d.name for d in state.dofs]
    if "path_A" not in names or "path_B" not in names:
        raise ValueError("hyper_postselect needs path-separated photons (run pbs_split first)")
    if "freq" in names:
        raise ValueError("hyper_postselect needs a single frequency mode; project out FREQ first")
    before = _norm2(state.state)
    out = _apply(state.state, _INTERFERE, ["oam_A", "pol_A", "oam_B", "pol_B"])
    p = _norm2(out) / before if before > 0 else 0.0
    if p <= 1e-15:
        return {"state": BiphotonState(out, 0.0), "success_probability": 0.0}
    return {"state": BiphotonState(_normalized(out), state.survival_probability * p),
            "success_probability": float(p)}


# --- reference states -----------------------------------------------------------

def _ab_state(dofs, terms) -> PureState:
    return qs.superpose([(1, qs.basis_state(dofs, lab)) for lab in terms])


def oam_bell() -> PureState:
    """(|+1>_A |-1>_B + |-1>_A |+1>_B) / sqrt(2)."""
    return _ab_state([qs.oam("oam_A"), qs.oam("oam_B")], [["+1", "-1"], ["-1", "+1"]])


def pol_bell() -> PureState:
    """(|H>_A |V>_B + |V>_A |H>_B) / sqrt(2)."""
    return _ab_state([qs.pol("pol_A"), qs.pol("pol_B")], [["H", "V"], ["V", "H"]])


def pol_phi_plus() -> PureState:
    """(|H>_A |H>_B + |V>_A |V>_B) / sqrt(2)."""
    return _ab_state([qs.pol("pol_A"), qs.pol("pol_B")], [["H", "H"], ["V", "V"]])


def hyper_target() -> PureState:
    """(|HH> + |VV>)/2 x (|+1,-1> + |-1,+1>) on (pol_A, pol_B, oam_A, oam_B)."""
    return qs.tensor_product(pol_phi_plus(), oam_bell())


# --- pipelines ------------------------------------------------------------------------

@dataclass(frozen=True)
class Step:
    """One pipeline record: an element, the photon it acts on, or a two-photon PBS action."""

    kind: str
    target: str = "A"
    params: dict = field(default_factory=dict)

    def element(self) -> Element:
        p = self.params
        return Element(ElementKind(self.kind.upper()), angle=float(p.get("angle", 0.0)),
                       charge=p.get("charge", 0), q=float(p.get("q", 0.5)))


def canonical_hyper_steps() -> list[Step]:
    return [
        Step("PBS", "split"),
        Step("HWP", "A", {"angle": math.pi / 4}),
        Step("HWP", "A", {"angle": math.pi / 8}),
        Step("HWP", "B", {"angle": math.pi / 8}),
        Step("PBS", "interfere"),
    ]


def polarization_steps() -> list[Step]:
    return [Step("PBS", "split"), Step("OTP", "A"), Step("OTP", "B")]


def run_pipeline(state: BiphotonState, steps: Sequence[Step]) -> BiphotonState:
    for st in steps:
        kind = st.kind.upper()
        if kind == "PBS" and st.target == "split":
            state = pbs_split(state)
        elif kind == "PBS" and st.target == "interfere":
            state = hyper_postselect(state)["state"]
        elif kind == "PBS":
            raise ValueError("PBS steps target 'split' or 'interfere'")
        elif kind == "OTP":
            state = otp_convert(state, st.target)
        else:
            state = apply_element(state, st.element(), st.target)
    return state


def load_pipeline(path: str | Path) -> tuple[str, list[Step]]:
    """Read a pipeline file: ``{"source": ..., "steps": [{"kind", "target", ...params}]}``."""
    doc = json.loads(Path(path).read_text())
    steps = []
    for i, rec in enumerate(doc.get("steps", [])):
        rec = dict(rec)
        try:
            kind = rec.pop("kind")
        except KeyError:
            raise ValueError(f"step {i} has no 'kind'") from None
        if kind.upper() not in ElementKind.__members__:
            raise ValueError(f"step {i}: unknown element kind {kind!r}")
        target = rec.pop("target", "A")
        steps.append(Step(kind, target, rec))
        if kind.upper() != "PBS":
            steps[-1].element()
    return doc.get("source", "single-mode"), steps
