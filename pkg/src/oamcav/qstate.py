"""Dense linear algebra for small multi-DOF two-photon states.

A state is a flat complex vector (or square matrix) over the tensor product
of labelled degrees of freedom. Every DOF has a fixed basis order:

    OAM   +1, -1
    POL   H, V
    PATH  A, B
    FREQ  pair index m = -N .. N

Operators act on an ordered subset of DOFs, identity elsewhere.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass
class Tolerances:
    hermitian: float = 1e-10
    trace: float = 1e-10
    psd: float = 1e-9
    unitary: float = 1e-12
    imag: float = 1e-10


TOL = Tolerances()


class DofKind(enum.Enum):
    OAM = "oam"
    POL = "pol"
    FREQ = "freq"
    PATH = "path"


BASIS_LABELS = {
    DofKind.OAM: ("+1", "-1"),
    DofKind.POL: ("H", "V"),
    DofKind.PATH: ("A", "B"),
}


@dataclass(frozen=True)
class Dof:
    """A labelled degree of freedom, e.g. ``Dof("oam_A", DofKind.OAM)``."""

    name: str
    kind: DofKind
    dim: int = 2

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"DOF {self.name!r} needs dimension >= 2, got {self.dim}")
        if self.kind is not DofKind.FREQ and self.dim != 2:
            raise ValueError(f"{self.kind.value} DOFs are two-dimensional")
        if self.kind is DofKind.FREQ and self.dim % 2 != 1:
            raise ValueError("FREQ dimension must be 2N+1")

    def basis_labels(self) -> tuple[str, ...]:
        if self.kind is DofKind.FREQ:
            n = self.dim // 2
            return tuple(str(m) for m in range(-n, n + 1))
        return BASIS_LABELS[self.kind]

    def index(self, label) -> int:
        return self.basis_labels().index(str(label))


def oam(name: str) -> Dof:
    return Dof(name, DofKind.OAM)


def pol(name: str) -> Dof:
    return Dof(name, DofKind.POL)


def path(name: str) -> Dof:
    return Dof(name, DofKind.PATH)


def freq(name: str, n_modes: int) -> Dof:
    return Dof(name, DofKind.FREQ, 2 * n_modes + 1)


def _check_unique(dofs: Sequence[Dof]):
    names = [d.name for d in dofs]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate DOF labels in {names}")


def _dims(dofs: Sequence[Dof]) -> tuple[int, ...]:
    return tuple(d.dim for d in dofs)


def _positions(dofs: Sequence[Dof], targets: Iterable) -> list[int]:
    names = [d.name for d in dofs]
    out = []
    for t in targets:
        key = t.name if isinstance(t, Dof) else t
        if key not in names:
            raise ValueError(f"DOF {key!r} not present in state {names}")
        out.append(names.index(key))
    if len(set(out)) != len(out):
        raise ValueError("target DOFs repeated")
    return out


@dataclass(frozen=True)
class PureState:
    dofs: tuple[Dof, ...]
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        dofs = tuple(self.dofs)
        _check_unique(dofs)
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != int(np.prod(_dims(dofs))):
            raise ValueError(f"expected {int(np.prod(_dims(dofs)))} amplitudes, got {amps.size}")
        amps.setflags(write=False)
        object.__setattr__(self, "dofs", dofs)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dims(self) -> tuple[int, ...]:
        return _dims(self.dofs)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    @property
    def probability(self) -> float:
        """Squared norm; after filtering this is the survival probability."""
        return self.norm ** 2

    def renormalized(self) -> "PureState":
        n = self.norm
        if n == 0:
            raise ValueError("cannot renormalize a zero-norm state")
        return PureState(self.dofs, self.amplitudes / n)

    def density(self) -> "DensityMatrix":
        """Projector onto the normalized state."""
        v = self.renormalized().amplitudes
        return DensityMatrix(self.dofs, np.outer(v, v.conj()))

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape(self.dims)

    def dof(self, name: str) -> Dof:
        return self.dofs[_positions(self.dofs, [name])[0]]


@dataclass(frozen=True)
class DensityMatrix:
    dofs: tuple[Dof, ...]
    matrix: np.ndarray = field(repr=False)
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        dofs = tuple(self.dofs)
        _check_unique(dofs)
        mat = np.asarray(self.matrix, dtype=complex)
        d = int(np.prod(_dims(dofs)))
        if mat.shape != (d, d):
            raise ValueError(f"expected a {d}x{d} matrix, got {mat.shape}")
        if self.validate:
            check_density(mat)
        mat = mat.copy()
        mat.setflags(write=False)
        object.__setattr__(self, "dofs", dofs)
        object.__setattr__(self, "matrix", mat)

    @property
    def dims(self) -> tuple[int, ...]:
        return _dims(self.dofs)

    @property
    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    @classmethod
    def maximally_mixed(cls, dofs: Sequence[Dof]) -> "DensityMatrix":
        d = int(np.prod(_dims(dofs)))
        return cls(tuple(dofs), np.eye(d) / d)


def check_density(mat: np.ndarray, tol: Tolerances = TOL):
    """Raise ``ValueError`` unless ``mat`` is Hermitian, unit-trace and PSD."""
    herm = np.max(np.abs(mat - mat.conj().T)) if mat.size else 0.0
    if herm > tol.hermitian:
        raise ValueError(f"matrix not Hermitian (max deviation {herm:.3g})")
    tr = np.trace(mat)
    if abs(tr - 1) > tol.trace:
        raise ValueError(f"trace {tr.real:.12g} != 1")
    lo = np.linalg.eigvalsh((mat + mat.conj().T) / 2).min()
    if lo < -tol.psd:
        raise ValueError(f"negative eigenvalue {lo:.3g}")


def as_density(state) -> DensityMatrix:
    """Accept a PureState, DensityMatrix or anything with a ``.state`` attribute."""
    inner = getattr(state, "state", state)
    if isinstance(inner, DensityMatrix):
        return inner
    if isinstance(inner, PureState):
        return inner.density()
    raise TypeError(f"cannot interpret {type(state).__name__} as a quantum state")


def basis_state(dofs: Sequence[Dof], labels: Sequence) -> PureState:
    """Product basis ket, e.g. ``basis_state([oam("o"), pol("p")], ["+1", "H"])``."""
    dofs = tuple(dofs)
    if len(labels) != len(dofs):
        raise ValueError("one label per DOF required")
    amps = np.zeros(_dims(dofs), dtype=complex)
    amps[tuple(d.index(lab) for d, lab in zip(dofs, labels))] = 1.0
    return PureState(dofs, amps)


def superpose(terms: Sequence[tuple[complex, PureState]]) -> PureState:
    """Linear combination of states sharing one DOF layout, renormalized."""
    dofs = terms[0][1].dofs
    amps = np.zeros_like(terms[0][1].amplitudes)
    for c, s in terms:
        if s.dofs != dofs:
            raise ValueError("superposed states must share DOFs")
        amps = amps + c * s.amplitudes
    return PureState(dofs, amps).renormalized()


def tensor_product(a: PureState, b: PureState) -> PureState:
    if {d.name for d in a.dofs} & {d.name for d in b.dofs}:
        raise ValueError("tensor_product requires disjoint DOF labels")
    return PureState(a.dofs + b.dofs, np.kron(a.amplitudes, b.amplitudes))


def tensor_density(a: DensityMatrix, b: DensityMatrix) -> DensityMatrix:
    if {d.name for d in a.dofs} & {d.name for d in b.dofs}:
        raise ValueError("tensor_density requires disjoint DOF labels")
    return DensityMatrix(a.dofs + b.dofs, np.kron(a.matrix, b.matrix))


def _apply_to_tensor(t: np.ndarray, op: np.ndarray, pos: list[int], offset: int = 0) -> np.ndarray:
    """Contract ``op`` into axes ``offset + pos`` of tensor ``t``."""
    axes = [offset + p for p in pos]
    moved = np.moveaxis(t, axes, list(range(len(axes))))
    shape = moved.shape
    k = int(np.prod(shape[: len(axes)]))
    out = (op @ moved.reshape(k, -1)).reshape(shape)
    return np.moveaxis(out, list(range(len(axes))), axes)


def _check_op(op: np.ndarray, dofs: Sequence[Dof], pos: list[int]) -> np.ndarray:
    op = np.asarray(op, dtype=complex)
    d = int(np.prod([dofs[p].dim for p in pos]))
    if op.shape != (d, d):
        raise ValueError(f"operator shape {op.shape} does not match target dimension {d}")
    return op


def is_unitary(op: np.ndarray, tol: float = TOL.unitary) -> bool:
    op = np.asarray(op)
    return bool(np.allclose(op.conj().T @ op, np.eye(op.shape[0]), atol=tol, rtol=0))


def apply_operator(s: PureState, op: np.ndarray, targets: Sequence, unitary: bool = False) -> PureState:
    """Apply ``op`` to the listed DOFs of ``s``.

    Unitary operators are checked and the result renormalized to remove
    round-off drift. Non-unitary operators (projectors, lossy elements) leave
    the norm reduced, so ``result.probability`` is the survival probability
    times the input probability.
    """
    pos = _positions(s.dofs, targets)
    op = _check_op(op, s.dofs, pos)
    if unitary and not is_unitary(op):
        raise ValueError("operator flagged unitary but U^dag U != I")
    out = _apply_to_tensor(s.tensor(), op, pos).reshape(-1)
    res = PureState(s.dofs, out)
    if unitary:
        res = PureState(s.dofs, out * (s.norm / res.norm))
    return res


def apply_channel(rho: DensityMatrix, op: np.ndarray, targets: Sequence, renormalize: bool = False) -> DensityMatrix:
    """rho -> K rho K^dag on the targets; returns an unnormalized matrix unless asked."""
    pos = _positions(rho.dofs, targets)
    op = _check_op(op, rho.dofs, pos)
    n = len(rho.dofs)
    t = rho.matrix.reshape(rho.dims + rho.dims)
    t = _apply_to_tensor(t, op, pos)
    t = _apply_to_tensor(t, op.conj(), pos, offset=n)
    d = rho.matrix.shape[0]
    mat = t.reshape(d, d)
    if renormalize:
        tr = np.trace(mat).real
        if tr <= 0:
            raise ValueError("channel annihilated the state")
        mat = mat / tr
    return DensityMatrix(rho.dofs, mat, validate=renormalize)


def permute(s, order: Sequence[str]):
    """Reorder the DOFs of a PureState or DensityMatrix by name."""
    pos = _positions(s.dofs, order)
    if len(pos) != len(s.dofs):
        raise ValueError("permutation must list every DOF")
    dofs = tuple(s.dofs[p] for p in pos)
    if isinstance(s, PureState):
        return PureState(dofs, np.transpose(s.tensor(), pos).reshape(-1))
    n = len(pos)
    t = s.matrix.reshape(s.dims + s.dims)
    t = np.transpose(t, pos + [p + n for p in pos])
    d = s.matrix.shape[0]
    return DensityMatrix(dofs, t.reshape(d, d))


def relabel(s, mapping: dict[str, str]):
    """Rename DOFs without touching amplitudes."""
    dofs = tuple(Dof(mapping.get(d.name, d.name), d.kind, d.dim) for d in s.dofs)
    if isinstance(s, PureState):
        return PureState(dofs, s.amplitudes)
    return DensityMatrix(dofs, s.matrix, validate=False)


PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass(frozen=True)
class Observable:
    """Product of single-DOF operators; DOFs not listed carry the identity."""

    factors: tuple[tuple[str, np.ndarray], ...]

    def __post_init__(self):
        names = [n for n, _ in self.factors]
        if len(set(names)) != len(names):
            raise ValueError("observable lists a DOF twice")
        for n, m in self.factors:
            m = np.asarray(m)
            if m.shape != (2, 2) or not np.allclose(m, m.conj().T, atol=TOL.hermitian):
                raise ValueError(f"factor on {n!r} is not a Hermitian 2x2 matrix")

    @classmethod
    def pauli(cls, spec: dict[str, str]) -> "Observable":
        """``Observable.pauli({"oam_A": "X", "oam_B": "X"})``."""
        return cls(tuple((k, PAULI[v]) for k, v in spec.items()))

    def matrix(self, dofs: Sequence[Dof]) -> np.ndarray:
        names = [d.name for d in dofs]
        lookup = dict(self.factors)
        missing = set(lookup) - set(names)
        if missing:
            raise ValueError(f"observable acts on DOFs absent from the state: {sorted(missing)}")
        out = np.ones((1, 1), dtype=complex)
        for d in dofs:
            out = np.kron(out, lookup.get(d.name, np.eye(d.dim)))
        return out


def expectation(rho, obs: Observable) -> float:
    rho = as_density(rho)
    val = np.trace(rho.matrix @ obs.matrix(rho.dofs))
    if abs(val.imag) > TOL.imag:
        raise ValueError(f"expectation has imaginary part {val.imag:.3g}")
    return float(val.real)


def fidelity(rho, target: PureState) -> float:
    """<target|rho|target> for a pure target on the same DOFs."""
    rho = as_density(rho)
    if tuple(rho.dofs) != tuple(target.dofs):
        try:
            target = permute(target, [d.name for d in rho.dofs])
        except ValueError as exc:
            raise ValueError("fidelity requires matching DOF structure") from exc
    v = target.renormalized().amplitudes
    return float(np.real(v.conj() @ rho.matrix @ v))


def partial_trace(rho, keep: Sequence) -> DensityMatrix:
    rho = as_density(rho)
    if not keep:
        raise ValueError("partial_trace needs at least one DOF to keep")
    pos = sorted(_positions(rho.dofs, keep))
    n = len(rho.dofs)
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    row = list(letters[:n])
    col = list(letters[n:2 * n])
    for i in range(n):
        if i not in pos:
            col[i] = row[i]
    out_idx = "".join(row[i] for i in pos) + "".join(col[i] for i in pos)
    t = rho.matrix.reshape(rho.dims + rho.dims)
    red = np.einsum("".join(row) + "".join(col) + "->" + out_idx, t)
    d = int(np.prod([rho.dims[i] for i in pos]))
    return DensityMatrix(tuple(rho.dofs[i] for i in pos), red.reshape(d, d))


def depolarize(rho, dofs: Sequence, weight: float) -> DensityMatrix:
    """Werner-type mixing on a DOF subset: (1-w) rho + w (I/d) x Tr_sub(rho)."""
    rho = as_density(rho)
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"depolarizing weight must be in [0, 1], got {weight}")
    if weight == 0:
        return rho
    pos = _positions(rho.dofs, dofs)
    rest = [d.name for i, d in enumerate(rho.dofs) if i not in pos]
    sub = [rho.dofs[p] for p in pos]
    mixed = DensityMatrix.maximally_mixed(sub)
    if rest:
        noise = tensor_density(mixed, partial_trace(rho, rest))
        noise = permute(noise, [d.name for d in rho.dofs])
    else:
        noise = permute(mixed, [d.name for d in rho.dofs])
    return DensityMatrix(rho.dofs, (1 - weight) * rho.matrix + weight * noise.matrix)


def trace_distance(a, b) -> float:
    a, b = as_density(a), as_density(b)
    ev = np.linalg.eigvalsh(a.matrix - b.matrix)
    return 0.5 * float(np.sum(np.abs(ev)))


def random_density(dofs: Sequence[Dof], rng: np.random.Generator, rank: int | None = None) -> DensityMatrix:
    """Random density matrix from a Ginibre ensemble (used by tests and checks)."""
    d = int(np.prod(_dims(dofs)))
    k = rank or d
    g = rng.normal(size=(d, k)) + 1j * rng.normal(size=(d, k))
    m = g @ g.conj().T
    return DensityMatrix(tuple(dofs), m / np.trace(m).real)


def random_pure(dofs: Sequence[Dof], rng: np.random.Generator) -> PureState:
    d = int(np.prod(_dims(dofs)))
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return PureState(tuple(dofs), v / np.linalg.norm(v))


def product_labels(dofs: Sequence[Dof]) -> list[tuple[str, ...]]:
    return list(itertools.product(*(d.basis_labels() for d in dofs)))
