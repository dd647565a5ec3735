"""Comb-structured biphoton output of the doubly resonant cavity, etalon
filtering, and the two-photon time correlation.

Frequency bookkeeping: pair index ``m`` labels the component with the H photon
at ``w0 + m*Omega`` and the V photon at ``w0 - m*Omega``. A comb weight
``c_m`` is shared by the two kets ``m`` and ``-m`` of the same cluster.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import qstate as qs
from .cavity import CavityGeometry, airy, cold_cavity_params, paper_geometry
from .qstate import PureState


@dataclass(frozen=True)
class SourceConfig:
    geometry: CavityGeometry = field(default_factory=paper_geometry)
    crystal_length: float = 5e-3
    n_modes: int = 17
    pump_power: float = 50.0          # mW
    pump_oam: int = 0
    duty_factor: float = 0.75
    spectral_brightness: float = 2.1  # pairs / (s MHz mW), detected
    biphoton_linewidth: float = 13.8e6
    # null-to-null width of the sinc^2 envelope in single-photon detuning;
    # None means 2 * N * Omega, so the N clusters fill the main lobe
    phase_matching_bandwidth: float | None = None

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        if not 0 < self.duty_factor <= 1:
            raise ValueError("duty_factor must lie in (0, 1]")
        if not self.spectral_brightness > 0:
            raise ValueError("spectral_brightness must be positive")
        if self.pump_power < 0:
            raise ValueError("pump_power must be non-negative")
        if not self.crystal_length > 0:
            raise ValueError("crystal_length must be positive")
        if not self.biphoton_linewidth > 0:
            raise ValueError("biphoton_linewidth must be positive")
        if self.phase_matching_bandwidth is not None and not self.phase_matching_bandwidth > 0:
            raise ValueError("phase_matching_bandwidth must be positive")

    @property
    def bandwidth(self) -> float:
        if self.phase_matching_bandwidth is not None:
            return self.phase_matching_bandwidth
        return 2 * self.n_modes * self.geometry.fsr


@dataclass(frozen=True)
class EtalonSpec:
    fsr: float = 10.4e9
    finesse: float = 30.0

    def __post_init__(self):
        for name in ("fsr", "finesse"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class SpectralComb:
    """Relative weights ``c_m`` for pair indices ``m = -N..N`` with ``c_0 = 1``."""

    index: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("comb weights must be finite and non-negative")
        if not np.allclose(w, w[::-1], rtol=0, atol=0):
            raise ValueError("comb weights must satisfy c_m = c_-m")

    @property
    def n_modes(self) -> int:
        return len(self.index) // 2

    @property
    def c0(self) -> float:
        return float(self.weights[self.n_modes])

    def background_ratio(self) -> float:
        """Sum of c_m over the N side clusters (m = 1..N), relative to c_0.

        Each cluster contributes two kets (m and -m) to the state, so the total
        background probability weight is twice this number.
        """
        return float(self.weights[self.n_modes + 1:].sum() / self.c0)

    def total_weight(self) -> float:
        return float(self.weights.sum())


def phase_matching_envelope(cfg: SourceConfig, m) -> np.ndarray:
    """Normalized sinc^2(pi * delta / B) with delta = 2 m Omega the H-V frequency difference.

    First null at delta = B, i.e. single-photon detuning m Omega = B / 2.
    """
    delta = 2 * np.asarray(m, dtype=float) * cfg.geometry.fsr
    return np.sinc(delta / cfg.bandwidth) ** 2


def joint_resonance(cfg: SourceConfig, m) -> np.ndarray:
    """Cluster weight from the H and V comb mismatch m * dOmega.

    Each comb's field response has magnitude 1/sqrt(1 + (2 x / gamma)^2) at
    detuning x from its resonance; with the mismatch split symmetrically the
    product is 1 / (1 + (m dOmega / gamma)^2). This equals the frequency
    integral of the two intensity Lorentzians, normalized to the m = 0 cluster.
    """
    gamma = cold_cavity_params(cfg.geometry)["linewidth_fwhm"]
    half = np.asarray(m, dtype=float) * cfg.geometry.fsr_difference / 2
    field_h = 1 / np.sqrt(1 + (2 * half / gamma) ** 2)
    field_v = 1 / np.sqrt(1 + (2 * -half / gamma) ** 2)
    return field_h * field_v


def comb_weights(cfg: SourceConfig) -> SpectralComb:
    m = np.arange(-cfg.n_modes, cfg.n_modes + 1)
    w = phase_matching_envelope(cfg, m) * joint_resonance(cfg, m)
    w = w / w[cfg.n_modes]
    w = 0.5 * (w + w[::-1])
    return SpectralComb(m, w)


def etalon_transmission(spec: EtalonSpec, detuning):
    """Airy transmission of the etalon at ``detuning`` hertz."""
    return airy(2 * math.pi * np.asarray(detuning, dtype=float) / spec.fsr, spec.finesse)


# photon slot 1 carries H, slot 2 carries V
SLOT_DOFS = (qs.oam("oam_1"), qs.pol("pol_1"), qs.oam("oam_2"), qs.pol("pol_2"))


def oam_pol_state() -> PureState:
    """(|+1>_H |-1>_V + |-1>_H |+1>_V) / sqrt(2) on slots (1 = H photon, 2 = V photon)."""
    a = qs.basis_state(SLOT_DOFS, ["+1", "H", "-1", "V"])
    b = qs.basis_state(SLOT_DOFS, ["-1", "H", "+1", "V"])
    return qs.superpose([(1, a), (1, b)])


@dataclass(frozen=True)
class BiphotonState:
    """A two-photon state with its cumulative survival probability."""

    state: PureState | qs.DensityMatrix
    survival_probability: float = 1.0

    def __post_init__(self):
        if not -1e-12 <= self.survival_probability <= 1 + 1e-12:
            raise ValueError("survival probability must lie in [0, 1]")

    @property
    def dofs(self):
        return self.state.dofs

    def density(self) -> qs.DensityMatrix:
        return qs.as_density(self.state)


def cavity_output_state(cfg: SourceConfig, comb: SpectralComb | None = None) -> BiphotonState:
    if cfg.pump_oam != 0:
        raise ValueError(f"pump OAM {cfg.pump_oam} not supported; only 0 is modelled")
    comb = comb_weights(cfg) if comb is None else comb
    amps = np.sqrt(comb.weights / comb.total_weight())
    fpart = PureState((qs.freq("freq", comb.n_modes),), amps)
    return BiphotonState(qs.tensor_product(oam_pol_state(), fpart))


def filtered_state(state: BiphotonState, spec: EtalonSpec, comb: SpectralComb, fsr: float) -> dict:
    """Pass both photons through the etalon.

    Pair index m gets amplitude factor sqrt(T(m*fsr)) * sqrt(T(-m*fsr)), i.e.
    weight T(m*fsr)^2. Returns the renormalized state (survival folded into
    ``survival_probability``), the m = 0 weight after filtering and the
    survival probability of this step.
    """
    names = [d.name for d in state.dofs]
    if "freq" not in names:
        raise ValueError("state has no FREQ DOF to filter")
    fdof = state.state.dof("freq") if isinstance(state.state, PureState) else state.dofs[names.index("freq")]
    n = fdof.dim // 2
    if comb.n_modes != n:
        raise ValueError(f"comb has {comb.n_modes} side modes, state has {n}")
    m = np.arange(-n, n + 1)
    amp = np.sqrt(etalon_transmission(spec, m * fsr) * etalon_transmission(spec, -m * fsr))
    if isinstance(state.state, PureState):
        raw = qs.apply_operator(state.state, np.diag(amp), ["freq"])
        survival = raw.probability / state.state.probability
        out = raw.renormalized()
        p_freq = qs.partial_trace(out, ["freq"]).matrix.diagonal().real
    else:
        raw = qs.apply_channel(state.state, np.diag(amp), ["freq"])
        survival = float(np.trace(raw.matrix).real)
        out = qs.DensityMatrix(raw.dofs, raw.matrix / survival)
        p_freq = qs.partial_trace(out, ["freq"]).matrix.diagonal().real
    purity = float(p_freq[n])
    return {
        "state": BiphotonState(out, state.survival_probability * survival),
        "single_mode_purity": purity,
        "survival_probability": float(survival),
    }


def single_mode_purity(comb: SpectralComb, spec: EtalonSpec, fsr: float) -> float:
    """Closed form: c_0 / sum_m c_m T(m fsr)^2."""
    t = etalon_transmission(spec, comb.index * fsr)
    return float(comb.c0 / np.sum(comb.weights * t ** 2))


def comb_table(comb: SpectralComb, spec: EtalonSpec, fsr: float) -> list[dict]:
    t = etalon_transmission(spec, comb.index * fsr)
    after = comb.weights * t ** 2
    return [
        {"m": int(m), "c_m": float(c), "etalon_T": float(tt), "weight_after_etalon": float(a)}
        for m, c, tt, a in zip(comb.index, comb.weights, t, after)
    ]


def project_single_mode(state: BiphotonState) -> BiphotonState:
    """Keep only the central pair m = 0 and drop the FREQ DOF."""
    s = state.state
    if not isinstance(s, PureState):
        raise TypeError("project_single_mode expects a pure state")
    fdof = s.dof("freq")
    keep = [d.name for d in s.dofs if d.name != "freq"]
    s = qs.permute(s, keep + ["freq"])
    t = s.amplitudes.reshape(-1, fdof.dim)[:, fdof.dim // 2]
    p = float(np.vdot(t, t).real)
    if p == 0:
        raise ValueError("no weight on the central frequency pair")
    return BiphotonState(PureState(s.dofs[:-1], t / math.sqrt(p)), state.survival_probability * p)


# --- time correlation --------------------------------------------------------

@dataclass(frozen=True)
class CorrelationCurve:
    delays: np.ndarray
    values: np.ndarray
    linewidth: float
    amplitude: float

    @property
    def fwhm(self) -> float:
        return correlation_fwhm(self.linewidth)


def correlation_fwhm(linewidth: float) -> float:
    """Full width at half maximum of C exp(-2 pi dnu |tau|): ln2 / (pi dnu)."""
    return math.log(2) / (math.pi * linewidth)


def correlation_curve(linewidth: float, amplitude: float = 1.0, tau_max: float = 100e-9,
                      samples: int = 201) -> CorrelationCurve:
    if not linewidth > 0:
        raise ValueError("linewidth must be positive")
    tau = np.linspace(-tau_max, tau_max, samples)
    return CorrelationCurve(tau, amplitude * np.exp(-2 * math.pi * linewidth * np.abs(tau)), linewidth, amplitude)


def lorentzian_correlation(linewidth: float, tau: np.ndarray, oversample: int = 64) -> np.ndarray:
    """|FT of a unit-peak Lorentzian amplitude spectrum of FWHM ``linewidth``|^2 on ``tau``.

    Evaluated by FFT on a grid much finer and wider than ``tau`` and
    normalized to 1 at zero delay.
    """
    span = 2 * np.max(np.abs(tau)) * oversample
    n = 2 ** int(np.ceil(np.log2(oversample * len(tau) * 16)))
    dt = span / n
    nu = np.fft.fftfreq(n, dt)
    spectrum = 1 / (1 + (2 * nu / linewidth) ** 2)
    g = np.abs(np.fft.fftshift(np.fft.ifft(spectrum))) ** 2
    grid = (np.arange(n) - n // 2) * dt
    out = np.interp(tau, grid, g)
    return out / np.interp(0.0, grid, g)


@dataclass(frozen=True)
class Histogram:
    centers: np.ndarray
    counts: np.ndarray
    bin_width: float

    @property
    def edges(self) -> np.ndarray:
        return np.append(self.centers - self.bin_width / 2, self.centers[-1] + self.bin_width / 2)


def binned_exponential(edges: np.ndarray, linewidth: float) -> np.ndarray:
    """Probability mass of the normalized density pi dnu exp(-2 pi dnu |tau|) in each bin."""
    k = 2 * math.pi * linewidth

    def cdf(t):
        t = np.asarray(t, dtype=float)
        return np.where(t < 0, 0.5 * np.exp(k * t), 1 - 0.5 * np.exp(-k * t))

    return np.diff(cdf(edges))


def expected_histogram(curve: CorrelationCurve, background: float, total_pairs: int, bin_width: float) -> Histogram:
    """Mean counts per bin over the delay range of ``curve``.

    Pairs whose delay falls outside the range are not recorded.
    """
    lo, hi = curve.delays[0], curve.delays[-1]
    nbins = int(round((hi - lo) / bin_width))
    if nbins < 1:
        raise ValueError("delay range holds no bins")
    centers = lo + bin_width * (np.arange(nbins) + 0.5)
    edges = np.append(centers - bin_width / 2, centers[-1] + bin_width / 2)
    mean = total_pairs * binned_exponential(edges, curve.linewidth) + background
    return Histogram(centers, mean, bin_width)


def sample_histogram(curve: CorrelationCurve, background: float, total_pairs: int, bin_width: float,
                     seed: int) -> Histogram:
    if total_pairs <= 0:
        raise ValueError("total_pairs must be positive")
    if background < 0:
        raise ValueError("background must be non-negative")
    mean = expected_histogram(curve, background, total_pairs, bin_width)
    rng = np.random.default_rng(seed)
    return Histogram(mean.centers, rng.poisson(mean.counts), bin_width)


def pair_rate(cfg: SourceConfig, linewidth: float | None = None, pump_power: float | None = None) -> float:
    """Detected pair rate kappa * linewidth[MHz] * P[mW] (below threshold, linear in P)."""
    lw = cfg.biphoton_linewidth if linewidth is None else linewidth
    p = cfg.pump_power if pump_power is None else pump_power
    return cfg.spectral_brightness * (lw / 1e6) * p


def source_time_rate(cfg: SourceConfig, linewidth: float | None = None) -> float:
    """Rate while the chopper is open: the detected rate divided by the duty factor."""
    return pair_rate(cfg, linewidth) / cfg.duty_factor


def with_power(cfg: SourceConfig, pump_power: float) -> SourceConfig:
    return replace(cfg, pump_power=pump_power)
