"""Resonances of a flat-concave cavity carrying Laguerre-Gaussian modes.

Lengths are in metres, frequencies in hertz, phases in radians.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

MAX_ABS_M = 10
MAX_P = 5


@dataclass(frozen=True)
class ModeIndex:
    p: int = 0
    m: int = 0

    def __post_init__(self):
        if int(self.p) != self.p or int(self.m) != self.m:
            raise ValueError("mode indices must be integers")
        if not 0 <= self.p <= MAX_P:
            raise ValueError(f"radial index p must lie in [0, {MAX_P}], got {self.p}")
        if abs(self.m) > MAX_ABS_M:
            raise ValueError(f"|m| must be <= {MAX_ABS_M}, got {self.m}")

    @property
    def order(self) -> int:
        """Transverse mode order 2p + |m|."""
        return 2 * self.p + abs(self.m)


@dataclass(frozen=True)
class CavityGeometry:
    wavelength: float = 795e-9
    optical_length: float = 75e-3
    rayleigh_range: float = 43.1e-3
    finesse: float = 120.0
    fsr_h: float = 1.8e9 - 8.5e6
    fsr_v: float = 1.8e9 + 8.5e6

    def __post_init__(self):
        for name in ("wavelength", "optical_length", "rayleigh_range", "fsr_h", "fsr_v"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.finesse > 1:
            raise ValueError("finesse must exceed 1")
        if abs(self.fsr_v - self.fsr_h) >= 0.1 * min(self.fsr_h, self.fsr_v):
            raise ValueError("H and V free spectral ranges must nearly coincide")

    @property
    def fsr(self) -> float:
        return 0.5 * (self.fsr_h + self.fsr_v)

    @property
    def fsr_difference(self) -> float:
        """Omega_V - Omega_H."""
        return self.fsr_v - self.fsr_h

    @classmethod
    def from_fsr(cls, fsr: float, fsr_difference: float, **kw) -> "CavityGeometry":
        return cls(fsr_h=fsr - fsr_difference / 2, fsr_v=fsr + fsr_difference / 2, **kw)


@dataclass(frozen=True)
class TransmissionCurve:
    abscissa: np.ndarray
    values: np.ndarray
    axis: str = "length"
    mode: ModeIndex = ModeIndex()

    def peaks(self) -> np.ndarray:
        """Abscissa values of interior local maxima."""
        v = self.values
        idx = np.flatnonzero((v[1:-1] > v[:-2]) & (v[1:-1] >= v[2:])) + 1
        return self.abscissa[idx]


def gouy_phase(mode: ModeIndex, z, z_r: float):
    """Gouy phase -(2p + |m| + 1) arctan(z / z_R)."""
    if not z_r > 0:
        raise ValueError("Rayleigh range must be positive")
    return -(mode.order + 1) * np.arctan(np.asarray(z, dtype=float) / z_r)


def resonance_length_shift(mode: ModeIndex, geom: CavityGeometry) -> float:
    """Extra cavity length at which ``mode`` resonates, relative to the (0, 0) mode."""
    return geom.wavelength / (2 * math.pi) * mode.order * math.atan(geom.optical_length / geom.rayleigh_range)


def calibrate_rayleigh_range(shift: float, wavelength: float, optical_length: float, order: int = 1) -> float:
    """Rayleigh range that reproduces a measured resonance shift for one mode order."""
    angle = 2 * math.pi * shift / (wavelength * order)
    if not 0 < angle < math.pi / 2:
        raise ValueError(f"shift {shift} m is not reachable for mode order {order}")
    return optical_length / math.tan(angle)


def paper_geometry(shift: float = 133e-9) -> CavityGeometry:
    """795 nm, 75 mm, finesse 120, 1.8 GHz mean FSR, 17 MHz FSR split; z_R from the m=+-1 shift."""
    wl, length = 795e-9, 75e-3
    return CavityGeometry.from_fsr(
        1.8e9, 17e6,
        wavelength=wl,
        optical_length=length,
        rayleigh_range=calibrate_rayleigh_range(shift, wl, length),
        finesse=120.0,
    )


def airy(phase, finesse: float):
    """Lossless Airy transmission 1 / (1 + (2F/pi)^2 sin^2(phase/2))."""
    coeff = (2 * finesse / math.pi) ** 2
    return 1.0 / (1.0 + coeff * np.sin(np.asarray(phase) / 2) ** 2)


def round_trip_phase(mode: ModeIndex, geom: CavityGeometry, detuning, axis: str = "length"):
    """Round-trip phase relative to the (0, 0) resonance.

    ``axis="length"`` takes cavity-length detuning in metres,
    ``axis="frequency"`` optical-frequency detuning in hertz.
    """
    gouy = 2 * mode.order * math.atan(geom.optical_length / geom.rayleigh_range)
    d = np.asarray(detuning, dtype=float)
    if axis == "length":
        return 4 * math.pi * d / geom.wavelength - gouy
    if axis == "frequency":
        return 2 * math.pi * d / geom.fsr - gouy
    raise ValueError(f"unknown axis {axis!r}")


def transmission_scan(mode: ModeIndex, geom: CavityGeometry, start: float, stop: float, samples: int,
                      axis: str = "length") -> TransmissionCurve:
    if samples < 2:
        raise ValueError("need at least two samples")
    if not stop > start:
        raise ValueError("empty scan range")
    x = np.linspace(start, stop, samples)
    t = airy(round_trip_phase(mode, geom, x, axis), geom.finesse)
    return TransmissionCurve(x, t, axis, mode)


def cold_cavity_params(geom: CavityGeometry) -> dict:
    fsr = geom.fsr
    return {"fsr": fsr, "linewidth_fwhm": fsr / geom.finesse}


def degenerate_mode_sets(geom: CavityGeometry, modes: Sequence[ModeIndex], tol: float) -> list[list[ModeIndex]]:
    """Group modes whose resonance lengths agree within ``tol`` metres.

    Groups are seeded in order of increasing shift; a mode joins the current
    group if it lies within ``tol`` of that group's first member.
    """
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    ordered = sorted(modes, key=lambda md: resonance_length_shift(md, geom))
    groups: list[list[ModeIndex]] = []
    anchor = None
    for md in ordered:
        s = resonance_length_shift(md, geom)
        if anchor is None or abs(s - anchor) > tol:
            groups.append([md])
            anchor = s
        else:
            groups[-1].append(md)
    return groups


def scan_modes(geom: CavityGeometry, modes: Iterable[ModeIndex], span: float | None = None,
               samples: int = 4001) -> list[TransmissionCurve]:
    """Length scans over ``span`` (default one FSR in length, lambda/2) centred near zero."""
    span = geom.wavelength / 2 if span is None else span
    lo = -0.25 * span
    return [transmission_scan(md, geom, lo, lo + span, samples) for md in modes]
