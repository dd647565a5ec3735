"""Counts, estimators, tomography and fits downstream of the source."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import optimize

from . import optics
from . import qstate as qs
from . import spdc
from .qstate import DensityMatrix
from .spdc import BiphotonState, Histogram, SourceConfig

BASES = ("Z", "X", "Y")


@dataclass(frozen=True)
class MeasurementSetting:
    """Analyzer basis for each measured DOF, e.g. ``(("oam_A", "X"), ("oam_B", "X"))``."""

    analyzers: tuple[tuple[str, str], ...]

    def __post_init__(self):
        names = [n for n, _ in self.analyzers]
        if len(set(names)) != len(names):
            raise ValueError("a DOF may be analyzed in only one basis per setting")
        for _, b in self.analyzers:
            if b not in BASES:
                raise ValueError(f"unknown basis {b!r}")

    @classmethod
    def of(cls, **bases: str) -> "MeasurementSetting":
        return cls(tuple(bases.items()))

    @property
    def dof_names(self) -> list[str]:
        return [n for n, _ in self.analyzers]

    def outcome_labels(self) -> list[str]:
        return ["".join(t) for t in itertools.product("+-", repeat=len(self.analyzers))]

    @property
    def label(self) -> str:
        """Comma-free identifier such as ``oam_A:X;oam_B:X`` (safe as a CSV field)."""
        return ";".join(f"{n}:{b}" for n, b in self.analyzers)

    @classmethod
    def from_label(cls, label: str) -> "MeasurementSetting":
        try:
            return cls(tuple(tuple(part.split(":")) for part in label.split(";")))
        except ValueError:
            raise ValueError(f"malformed setting id {label!r}") from None


@dataclass(frozen=True)
class CountRecord:
    setting: MeasurementSetting
    outcomes: dict[str, int]
    duration: float = 0.0

    def __post_init__(self):
        labels = set(self.setting.outcome_labels())
        if set(self.outcomes) != labels:
            raise ValueError(f"outcomes must be exactly {sorted(labels)}")
        if any(int(v) != v or v < 0 for v in self.outcomes.values()):
            raise ValueError("counts must be non-negative integers")

    @property
    def total(self) -> int:
        return int(sum(self.outcomes.values()))


@dataclass(frozen=True)
class NoiseModel:
    """Werner-type noise with a pump-power dependent weight.

    ``werner_weight(P) = a P / (1 + a b P)``, clipped to [0, 1]. The extra
    weights model the OAM-to-polarization conversion and the postselecting
    interference; both act on the two polarization qubits.
    """

    pump_coeff: float = 0.0
    saturation: float = 0.0
    conversion_weight: float = 0.0
    interference_weight: float = 0.0
    coincidence_window: float = 1e-9

    def __post_init__(self):
        for name in ("conversion_weight", "interference_weight"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.pump_coeff < 0:
            raise ValueError("pump_coeff must be non-negative")

    def werner_weight(self, pump_power: float) -> float:
        if pump_power < 0:
            raise ValueError("pump power must be non-negative")
        a, b = self.pump_coeff, self.saturation
        denom = 1 + a * b * pump_power
        if denom <= 0:
            return 1.0
        return float(min(max(a * pump_power / denom, 0.0), 1.0))

    def accidental_fraction(self, rate: float) -> float:
        """Chance of a second pair inside the coincidence window (reported, folded into w)."""
        return rate * self.coincidence_window

    @classmethod
    def calibrated(cls, f_oam: float = 0.969, f_oam_high: float = 0.90, p_ref: float = 50.0,
                   p_high: float = 100.0, f_pol: float = 0.946, f_hyper: float = 0.850,
                   coincidence_window: float = 1e-9) -> "NoiseModel":
        """Fix a, b from two OAM fidelities and the extra weights from the other two at ``p_ref``."""
        w1, w2 = bell_werner_weight(f_oam), bell_werner_weight(f_oam_high)
        # 1/w = 1/(a P) + b, linear in 1/P
        inv_a = (1 / w1 - 1 / w2) / (1 / p_ref - 1 / p_high)
        a = 1 / inv_a
        b = 1 / w1 - inv_a / p_ref
        conv = 1 - (1 - bell_werner_weight(f_pol)) / (1 - w1)
        interf = bell_werner_weight(f_hyper / f_oam)
        return cls(a, b, conv, interf, coincidence_window)


def bell_werner_weight(f: float) -> float:
    """Werner weight that brings a two-qubit Bell state to fidelity ``f``."""
    return 4 * (1 - f) / 3


def _resolve_weight(noise, pump_power: float | None) -> float:
    if noise is None:
        return 0.0
    if isinstance(noise, NoiseModel):
        return noise.werner_weight(50.0 if pump_power is None else pump_power)
    w = float(noise)
    if not 0 <= w <= 1:
        raise ValueError("noise weight must lie in [0, 1]")
    return w


def outcome_probabilities(state, setting: MeasurementSetting) -> dict[str, float]:
    """Born probabilities for every joint outcome, using the optics analyzer projectors."""
    rho = qs.as_density(state)
    names = [d.name for d in rho.dofs]
    missing = [n for n in setting.dof_names if n not in names]
    if missing:
        raise ValueError(f"setting analyzes DOFs absent from the state: {missing}")
    red = qs.permute(qs.partial_trace(rho, setting.dof_names), setting.dof_names)
    kinds = [d.kind for d in red.dofs]
    probs = {}
    for label in setting.outcome_labels():
        proj = np.ones((1, 1), dtype=complex)
        for kind, (_, basis), sign in zip(kinds, setting.analyzers, label):
            proj = np.kron(proj, optics.analyzer_projector(kind, basis, sign))
        probs[label] = float(np.real(np.trace(proj @ red.matrix)))
    return probs


def simulate_counts(state, setting: MeasurementSetting, noise=None, total: int = 10000, seed: int = 0,
                    pump_power: float | None = None, duration: float = 0.0) -> CountRecord:
    """Multinomial counts for one setting.

    ``noise`` is a NoiseModel (weight taken at ``pump_power``), a bare Werner
    weight, or None. The weight mixes the analyzed marginal with white noise.
    """
    if total <= 0:
        raise ValueError("total counts must be positive")
    probs = outcome_probabilities(state, setting)
    w = _resolve_weight(noise, pump_power)
    labels = setting.outcome_labels()
    p = np.array([probs[k] for k in labels])
    p = np.clip((1 - w) * p + w / len(p), 0, None)
    p = p / p.sum()
    rng = np.random.default_rng(seed)
    n = rng.multinomial(int(total), p)
    return CountRecord(setting, {k: int(v) for k, v in zip(labels, n)}, duration)


def _parity(label: str) -> int:
    return -1 if label.count("-") % 2 else 1


def expectation_from_counts(rec: CountRecord) -> dict:
    n = rec.total
    if n == 0:
        raise ValueError("record has zero total counts")
    v = sum(_parity(k) * c for k, c in rec.outcomes.items()) / n
    return {"value": float(v), "sigma": float(math.sqrt(max(1 - v * v, 0.0) / n))}


def fidelity_oam(exp_xx: float, exp_yy: float, exp_zz: float) -> float:
    """Fidelity to (|+1,-1> + |-1,+1>)/sqrt(2): (1 + <XX> + <YY> - <ZZ>) / 4."""
    for v in (exp_xx, exp_yy, exp_zz):
        if not -1 - 1e-12 <= v <= 1 + 1e-12:
            raise ValueError("expectation values must lie in [-1, 1]")
    return 0.25 * (1 + exp_xx + exp_yy - exp_zz)


POL_SIGNS = {"I": 1, "X": 1, "Y": -1, "Z": 1}
OAM_SIGNS = {"I": 1, "X": 1, "Y": 1, "Z": -1}

# S1..S15 in the order (pol pair, oam pair), II x II excluded
HYPER_TERMS = [(p, o) for p in "IXYZ" for o in "IXYZ"][1:]


def hyper_term_name(term: tuple[str, str]) -> str:
    p, o = term
    return f"{p}{p}{o}{o}"


HYPER_OBSERVABLES = [hyper_term_name(t) for t in HYPER_TERMS]


def hyper_sign(term: tuple[str, str]) -> int:
    return POL_SIGNS[term[0]] * OAM_SIGNS[term[1]]


def fidelity_hyper(expectations) -> float:
    """Fidelity to the hyperentangled target from the 15 joint expectation values.

    Accepts a sequence in S1..S15 order or a mapping keyed by names such as ``"XXZZ"``.
    """
    if isinstance(expectations, Mapping):
        try:
            vals = [expectations[k] for k in HYPER_OBSERVABLES]
        except KeyError as exc:
            raise ValueError(f"missing expectation {exc}") from None
        if len(expectations) != 15:
            raise ValueError("exactly 15 expectation values required")
    else:
        vals = list(expectations)
        if len(vals) != 15:
            raise ValueError(f"exactly 15 expectation values required, got {len(vals)}")
    for v in vals:
        if not -1 - 1e-12 <= v <= 1 + 1e-12:
            raise ValueError("expectation values must lie in [-1, 1]")
    return (1 + sum(hyper_sign(t) * v for t, v in zip(HYPER_TERMS, vals))) / 16


def hyper_setting(term: tuple[str, str], pol_dofs=("pol_A", "pol_B"), oam_dofs=("oam_A", "oam_B")) -> MeasurementSetting:
    p, o = term
    an = []
    if p != "I":
        an += [(pol_dofs[0], p), (pol_dofs[1], p)]
    if o != "I":
        an += [(oam_dofs[0], o), (oam_dofs[1], o)]
    return MeasurementSetting(tuple(an))


def hyper_observable(term: tuple[str, str]) -> qs.Observable:
    p, o = term
    spec = {}
    if p != "I":
        spec.update({"pol_A": p, "pol_B": p})
    if o != "I":
        spec.update({"oam_A": o, "oam_B": o})
    return qs.Observable.pauli(spec)


def oam_settings(dofs=("oam_A", "oam_B")) -> dict[str, MeasurementSetting]:
    return {b + b: MeasurementSetting(((dofs[0], b), (dofs[1], b))) for b in ("X", "Y", "Z")}


# --- tomography ------------------------------------------------------------------

def tomography_settings(dofs=("pol_A", "pol_B")) -> list[MeasurementSetting]:
    """The nine Pauli-basis product settings (36 projectors spanning all 16 operator directions)."""
    return [MeasurementSetting(((dofs[0], a), (dofs[1], b))) for a in BASES for b in BASES]


def _setting_projectors(setting: MeasurementSetting, kinds) -> list[tuple[str, np.ndarray]]:
    out = []
    for label in setting.outcome_labels():
        proj = np.ones((1, 1), dtype=complex)
        for kind, (_, basis), sign in zip(kinds, setting.analyzers, label):
            proj = np.kron(proj, optics.analyzer_projector(kind, basis, sign))
        out.append((label, proj))
    return out


def _pauli_basis(n: int) -> list[np.ndarray]:
    mats = []
    for combo in itertools.product("IXYZ", repeat=n):
        m = np.ones((1, 1), dtype=complex)
        for c in combo:
            m = np.kron(m, qs.PAULI[c])
        mats.append(m)
    return mats


def record_frequencies(rec: CountRecord) -> dict[str, float]:
    if rec.total == 0:
        raise ValueError(f"setting {rec.setting.label} has zero counts")
    return {k: v / rec.total for k, v in rec.outcomes.items()}


def linear_inversion(data: Sequence[tuple[MeasurementSetting, Mapping[str, float]]],
                     dofs: Sequence[qs.Dof]) -> np.ndarray:
    """Least-squares solution of Tr(P_k rho) = f_k over the Pauli basis, trace pinned to 1.

    ``data`` pairs each setting with its outcome frequencies.
    """
    kinds = [d.kind for d in dofs]
    names = [d.name for d in dofs]
    n = len(dofs)
    basis = _pauli_basis(n)
    rows, freqs = [], []
    for setting, fr in data:
        if setting.dof_names != names:
            raise ValueError(f"setting {setting.label} does not analyze {names}")
        for label, proj in _setting_projectors(setting, kinds):
            rows.append([np.real(np.trace(proj @ s)) / 2 ** n for s in basis])
            freqs.append(fr[label])
    a = np.array(rows)
    if np.linalg.matrix_rank(a, tol=1e-9) < len(basis):
        raise ValueError("measurement settings are not informationally complete")
    rhs = np.array(freqs) - a[:, 0]
    coef, *_ = np.linalg.lstsq(a[:, 1:], rhs, rcond=None)
    coef = np.concatenate([[1.0], coef])
    return sum(c * s for c, s in zip(coef, basis)) / 2 ** n


def repair_positivity(mat: np.ndarray) -> np.ndarray:
    """Closest unit-trace PSD matrix in the eigenbasis (Smolin, Gambetta, Smith 2012).

    Walking up from the most negative eigenvalue, an eigenvalue that would stay
    negative after receiving its share of the accumulated deficit is zeroed and
    its value added to the deficit; the remaining deficit is spread equally over
    the kept eigenvalues. A PSD input is returned unchanged.
    """
    mat = (mat + mat.conj().T) / 2
    mat = mat / np.trace(mat).real
    vals, vecs = np.linalg.eigh(mat)
    if vals[0] >= 0:
        return mat
    d = len(vals)
    lam = vals.copy()
    acc = 0.0
    i = 0
    while i < d and lam[i] + acc / (d - i) < 0:
        acc += lam[i]
        lam[i] = 0.0
        i += 1
    lam[i:] += acc / (d - i)
    return (vecs * lam) @ vecs.conj().T


def _default_dofs(setting: MeasurementSetting) -> list[qs.Dof]:
    return [qs.Dof(n, qs.DofKind.OAM if n.startswith("oam") else qs.DofKind.POL) for n in setting.dof_names]


def tomography(records: Sequence[CountRecord], dofs: Sequence[qs.Dof] | None = None) -> DensityMatrix:
    """Linear inversion followed by eigenvalue clipping; DOFs default to those named in the settings."""
    if not records:
        raise ValueError("no records supplied")
    dofs = _default_dofs(records[0].setting) if dofs is None else list(dofs)
    raw = linear_inversion([(r.setting, record_frequencies(r)) for r in records], dofs)
    return DensityMatrix(tuple(dofs), repair_positivity(raw))


def tomography_from_probabilities(state, settings: Sequence[MeasurementSetting],
                                  repair: bool = True) -> DensityMatrix:
    """Infinite-count limit: invert exact Born probabilities."""
    dofs = [qs.as_density(state).dofs[[d.name for d in qs.as_density(state).dofs].index(n)]
            for n in settings[0].dof_names]
    raw = linear_inversion([(s, outcome_probabilities(state, s)) for s in settings], dofs)
    return DensityMatrix(tuple(dofs), repair_positivity(raw) if repair else raw, validate=repair)


def bootstrap(records: Sequence[CountRecord], statistic: Callable[[list[CountRecord]], float],
              n: int = 200, seed=0) -> dict:
    """Parametric bootstrap: redraw each record as multinomial at its observed frequencies.

    Each resample has its own child seed, so results do not depend on evaluation order.
    """
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = root.spawn(n)
    vals = np.empty(n)
    for i, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        resampled = []
        for rec in records:
            labels = rec.setting.outcome_labels()
            p = np.array([rec.outcomes[k] for k in labels], dtype=float)
            draw = rng.multinomial(rec.total, p / p.sum())
            resampled.append(CountRecord(rec.setting, dict(zip(labels, map(int, draw))), rec.duration))
        vals[i] = statistic(resampled)
    return {"mean": float(vals.mean()), "sigma": float(vals.std(ddof=1)), "samples": vals}


# --- linewidth fit ---------------------------------------------------------------

def _shape_and_derivative(edges: np.ndarray, width: float, k: float):
    """Bin averages of exp(-k|tau|) and their derivative in k, exact per bin."""
    t = np.abs(edges)
    e = np.exp(-k * t)
    sgn = np.sign(edges)
    prim = sgn * (1 - e) / k
    dprim = sgn * (t * e / k - (1 - e) / k ** 2)
    return np.diff(prim) / width, np.diff(dprim) / width


def fwhm_readoff(hist: Histogram, background: float = 0.0) -> float:
    """Direct FWHM from the histogram by linear interpolation at half the peak height."""
    y = hist.counts - background
    x = hist.centers
    i = int(np.argmax(y))
    half = y[i] / 2

    def cross(rng):
        prev = i
        for j in rng:
            if y[j] <= half:
                return x[j] + (half - y[j]) * (x[prev] - x[j]) / (y[prev] - y[j])
            prev = j
        raise ValueError("histogram does not fall to half maximum")

    return float(cross(range(i + 1, len(y))) - cross(range(i - 1, -1, -1)))


def fit_linewidth(hist: Histogram, bin_width: float | None = None, iterations: int = 6,
                  fit_background: bool = True) -> dict:
    """Poisson-weighted least squares of counts = C * <exp(-2 pi dnu |tau|)>_bin + b.

    Weights are refreshed from the model between passes, which converges to the
    Poisson maximum-likelihood estimate. Reports the standard error of dnu from
    the inverse weighted normal matrix.
    """
    width = hist.bin_width if bin_width is None else bin_width
    y = np.asarray(hist.counts, dtype=float)
    edges = np.append(hist.centers - width / 2, hist.centers[-1] + width / 2)
    nedge = max(3, len(y) // 10)
    b0 = float(np.median(np.concatenate([y[:nedge], y[-nedge:]])))
    above = np.sum(y > b0 + 3 * math.sqrt(max(b0, 1.0)))
    if above < 10:
        raise ValueError(f"only {above} bins above background; need at least 10")
    try:
        fwhm0 = fwhm_readoff(Histogram(hist.centers, y, width), b0)
    except ValueError:
        fwhm0 = 10 * width
    k0 = 2 * math.log(2) / max(fwhm0, width)
    c0 = float(y.max() - b0)

    def model(theta):
        c, k, b = theta
        g, dg = _shape_and_derivative(edges, width, k)
        mu = c * g + (b if fit_background else 0.0)
        jac = np.column_stack([g, c * dg, np.ones_like(g)])
        return mu, (jac if fit_background else jac[:, :2])

    theta = np.array([c0, k0, b0 if fit_background else 0.0])
    var = np.maximum(y, 1.0)
    for _ in range(iterations):
        sw = 1 / np.sqrt(var)
        n_par = 3 if fit_background else 2

        def resid(t):
            full = np.append(t, 0.0) if not fit_background else t
            return (model(full)[0] - y) * sw

        def jac(t):
            full = np.append(t, 0.0) if not fit_background else t
            return model(full)[1] * sw[:, None]

        lower = [0.0, 1e-12 * k0, -np.inf][:n_par]
        sol = optimize.least_squares(resid, theta[:n_par], jac=jac, bounds=(lower, np.inf), x_scale="jac",
                                     xtol=1e-14, ftol=1e-14, gtol=1e-14)
        theta[:n_par] = sol.x
        var = np.maximum(model(theta)[0], 1e-9)
    jw = model(theta)[1] / np.sqrt(var)[:, None]
    normal = jw.T @ jw
    if np.linalg.cond(normal) > 1e14:
        raise ValueError("degenerate fit: singular normal equations")
    cov = np.linalg.inv(normal)
    c, k, b = theta
    dnu = k / (2 * math.pi)
    sigma = math.sqrt(cov[1, 1]) / (2 * math.pi)
    chi2 = float(np.sum((y - model(theta)[0]) ** 2 / var))
    return {"delta_nu": float(dnu), "C": float(c), "background": float(b), "sigma": float(sigma),
            "fwhm": spdc.correlation_fwhm(dnu), "chi2": chi2, "dof": int(len(y) - len(jw[0]))}


# --- power scaling ---------------------------------------------------------------------

def brightness_and_fidelity(pump_power: float, cfg: SourceConfig, noise: NoiseModel) -> dict:
    if pump_power < 0:
        raise ValueError("pump power must be non-negative")
    rate = spdc.pair_rate(cfg, pump_power=pump_power)
    w = noise.werner_weight(pump_power)
    return {"pump_power_mw": float(pump_power), "pairs_per_second": float(rate),
            "fidelity": 1 - 0.75 * w, "werner_weight": w}


# --- noisy states for the three experiments ----------------------------------------------

def source_density(noise: NoiseModel, pump_power: float) -> BiphotonState:
    """Single-mode source pair with pump-dependent Werner noise on the OAM qubits."""
    rho = qs.depolarize(spdc.oam_pol_state().density(), ["oam_1", "oam_2"], noise.werner_weight(pump_power))
    return BiphotonState(rho)


def oam_experiment_state(noise: NoiseModel, pump_power: float = 50.0) -> DensityMatrix:
    st = optics.pbs_split(source_density(noise, pump_power))
    return qs.partial_trace(st.state, ["oam_A", "oam_B"])


def polarization_experiment_state(noise: NoiseModel, pump_power: float = 50.0) -> DensityMatrix:
    st = optics.run_pipeline(source_density(noise, pump_power), optics.polarization_steps())
    red = qs.partial_trace(st.state, ["pol_A", "pol_B"])
    return qs.depolarize(red, ["pol_A", "pol_B"], noise.conversion_weight)


def hyper_experiment_state(noise: NoiseModel, pump_power: float = 50.0) -> tuple[DensityMatrix, float]:
    """Returns the postselected (pol_A, pol_B, oam_A, oam_B) state and the success probability."""
    st = optics.run_pipeline(source_density(noise, pump_power), optics.canonical_hyper_steps()[:-1])
    post = optics.hyper_postselect(st)
    red = qs.partial_trace(post["state"].state, ["pol_A", "pol_B", "oam_A", "oam_B"])
    red = qs.permute(red, ["pol_A", "pol_B", "oam_A", "oam_B"])
    return qs.depolarize(red, ["pol_A", "pol_B"], noise.interference_weight), post["success_probability"]


def counts_for(rate: float, duration: float) -> int:
    return max(int(round(rate * duration)), 1)


def estimate_oam_fidelity(rho, total: int, seed: int, n_boot: int = 200) -> dict:
    settings = oam_settings()
    seeds = np.random.SeedSequence(seed).spawn(len(settings) + 1)
    recs = [simulate_counts(rho, s, total=total, seed=ss) for s, ss in zip(settings.values(), seeds)]
    exps = {k: expectation_from_counts(r)["value"] for k, r in zip(settings, recs)}

    def stat(rs):
        e = [expectation_from_counts(r)["value"] for r in rs]
        return fidelity_oam(*e)

    boot = bootstrap(recs, stat, n_boot, seed=seeds[-1])
    return {"expectations": exps, "fidelity": fidelity_oam(exps["XX"], exps["YY"], exps["ZZ"]),
            "sigma": boot["sigma"], "records": recs}


def estimate_hyper_fidelity(rho, total: int, seed: int, n_boot: int = 200) -> dict:
    seeds = np.random.SeedSequence(seed).spawn(len(HYPER_TERMS) + 1)
    recs = [simulate_counts(rho, hyper_setting(t), total=total, seed=ss) for t, ss in zip(HYPER_TERMS, seeds)]
    exps = {hyper_term_name(t): expectation_from_counts(r)["value"] for t, r in zip(HYPER_TERMS, recs)}

    def stat(rs):
        return fidelity_hyper([expectation_from_counts(r)["value"] for r in rs])

    boot = bootstrap(recs, stat, n_boot, seed=seeds[-1])
    return {"expectations": exps, "fidelity": fidelity_hyper(exps), "sigma": boot["sigma"], "records": recs}


def estimate_tomography(rho, target: qs.PureState, total: int, seed: int, n_boot: int = 200) -> dict:
    settings = tomography_settings([d.name for d in rho.dofs])
    seeds = np.random.SeedSequence(seed).spawn(len(settings) + 1)
    recs = [simulate_counts(rho, s, total=total, seed=ss) for s, ss in zip(settings, seeds)]
    est = tomography(recs, rho.dofs)

    def stat(rs):
        return qs.fidelity(tomography(rs, rho.dofs), target)

    boot = bootstrap(recs, stat, n_boot, seed=seeds[-1])
    return {"rho": est, "fidelity": qs.fidelity(est, target), "sigma": boot["sigma"], "records": recs}
