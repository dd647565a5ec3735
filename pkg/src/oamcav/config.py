"""Flat key = value run configuration and file writers.

Every key is optional; defaults reproduce the experiment's regime. Units are
SI unless the key name says otherwise (``pump_power`` is in mW,
``spectral_brightness`` in pairs / (s MHz mW)).
"""
from __future__ import annotations

import configparser
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cavity import CavityGeometry, calibrate_rayleigh_range
from .measure import NoiseModel
from .spdc import EtalonSpec, SourceConfig

FLOAT_FMT = "{:.12g}"

# key -> (type, default, description)
KEYS = {
    "wavelength": (float, 795e-9, "cavity wavelength, m"),
    "optical_length": (float, 75e-3, "cavity optical length, m"),
    "rayleigh_range": (float, None, "Rayleigh range, m; if unset, solved from mode_shift"),
    "mode_shift": (float, 133e-9, "measured resonance-length shift of the m=+-1 modes, m"),
    "finesse": (float, 120.0, "cavity finesse"),
    "fsr": (float, 1.8e9, "mean free spectral range (Omega_H + Omega_V)/2, Hz"),
    "fsr_difference": (float, 17e6, "Omega_V - Omega_H, Hz"),
    "crystal_length": (float, 5e-3, "crystal length, m"),
    "n_modes": (int, 17, "side clusters N kept on each side"),
    "pump_power": (float, 50.0, "pump power, mW"),
    "pump_oam": (int, 0, "pump OAM charge (only 0 supported)"),
    "duty_factor": (float, 0.75, "fraction of time the chopper passes photons"),
    "spectral_brightness": (float, 2.1, "detected pairs / (s MHz mW)"),
    "biphoton_linewidth": (float, 13.8e6, "biphoton linewidth, Hz"),
    "phase_matching_bandwidth": (float, None, "sinc^2 main-lobe width in single-photon detuning, Hz"),
    "etalon_fsr": (float, 10.4e9, "etalon free spectral range, Hz"),
    "etalon_finesse": (float, 30.0, "etalon finesse"),
    "fidelity_oam": (float, 0.969, "OAM fidelity at the reference power (noise calibration)"),
    "fidelity_oam_high": (float, 0.90, "OAM fidelity at the high power (noise calibration)"),
    "reference_power": (float, 50.0, "reference pump power, mW"),
    "high_power": (float, 100.0, "high pump power, mW"),
    "fidelity_pol": (float, 0.946, "polarization fidelity at the reference power"),
    "fidelity_hyper": (float, 0.850, "hyperentangled fidelity at the reference power"),
    "coincidence_window": (float, 1e-9, "coincidence window, s"),
    "setting_duration": (float, 10.0, "acquisition time per measurement setting, s"),
    "bootstrap": (int, 200, "bootstrap resamples for fidelity errors"),
    "pairs": (int, 1_000_000, "pairs in a synthetic correlation histogram"),
    "bin_width": (float, 1e-9, "histogram bin width, s"),
    "tau_max": (float, 100e-9, "histogram half range, s"),
    "background": (float, 0.0, "flat background, counts per bin"),
    "seed": (int, 2024, "master random seed"),
    "output_dir": (str, "out", "directory for all written files"),
}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class RunConfig:
    source: SourceConfig
    etalon: EtalonSpec
    noise: NoiseModel
    seed: int
    output_dir: Path
    values: dict = field(default_factory=dict, repr=False)

    def get(self, key: str):
        return self.values[key]


def parse_file(path: str | Path) -> dict:
    text = Path(path).read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError("<file>", str(exc).splitlines()[0]) from None
    return dict(parser["run"])


def _coerce(key: str, raw):
    if key not in KEYS:
        raise ConfigError(key, "unknown key")
    typ = KEYS[key][0]
    if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none")):
        return None
    try:
        if typ is int:
            v = float(raw)
            if v != int(v):
                raise ValueError
            return int(v)
        return typ(raw)
    except (TypeError, ValueError):
        raise ConfigError(key, f"cannot interpret {raw!r} as {typ.__name__}") from None


def build(overrides: dict | None = None, path: str | Path | None = None) -> RunConfig:
    """Defaults, then the file, then explicit overrides (e.g. command-line flags)."""
    vals = {k: spec[1] for k, spec in KEYS.items()}
    if path is not None:
        for k, v in parse_file(path).items():
            vals[k] = _coerce(k, v)
    for k, v in (overrides or {}).items():
        if v is not None:
            vals[k] = _coerce(k, v)
    zr = vals["rayleigh_range"]
    if zr is None:
        try:
            zr = calibrate_rayleigh_range(vals["mode_shift"], vals["wavelength"], vals["optical_length"])
        except ValueError as exc:
            raise ConfigError("mode_shift", str(exc)) from None
    geom = _field("cavity", lambda: CavityGeometry.from_fsr(
        vals["fsr"], vals["fsr_difference"], wavelength=vals["wavelength"],
        optical_length=vals["optical_length"], rayleigh_range=zr, finesse=vals["finesse"]))
    source = _field("source", lambda: SourceConfig(
        geometry=geom, crystal_length=vals["crystal_length"], n_modes=vals["n_modes"],
        pump_power=vals["pump_power"], pump_oam=vals["pump_oam"], duty_factor=vals["duty_factor"],
        spectral_brightness=vals["spectral_brightness"], biphoton_linewidth=vals["biphoton_linewidth"],
        phase_matching_bandwidth=vals["phase_matching_bandwidth"]))
    etalon = _field("etalon", lambda: EtalonSpec(vals["etalon_fsr"], vals["etalon_finesse"]))
    noise = _field("noise", lambda: NoiseModel.calibrated(
        vals["fidelity_oam"], vals["fidelity_oam_high"], vals["reference_power"], vals["high_power"],
        vals["fidelity_pol"], vals["fidelity_hyper"], vals["coincidence_window"]))
    for key in ("setting_duration", "bin_width", "tau_max"):
        if not vals[key] > 0:
            raise ConfigError(key, "must be positive")
    for key in ("bootstrap", "pairs"):
        if vals[key] < 1:
            raise ConfigError(key, "must be at least 1")
    if vals["background"] < 0:
        raise ConfigError("background", "must be non-negative")
    return RunConfig(source, etalon, noise, vals["seed"], Path(vals["output_dir"]), vals)


# leading word of a validation message -> config key, per sub-config
ALIASES = {
    "cavity": {"fsr_h": "fsr", "fsr_v": "fsr", "H": "fsr_difference"},
    "etalon": {"fsr": "etalon_fsr", "finesse": "etalon_finesse"},
    "noise": {"conversion_weight": "fidelity_pol", "interference_weight": "fidelity_hyper",
              "pump_coeff": "fidelity_oam_high"},
}


def _field(section: str, make):
    try:
        return make()
    except ValueError as exc:
        msg = str(exc)
        word = msg.split()[0] if msg else ""
        key = ALIASES.get(section, {}).get(word) or (word if word in KEYS else section)
        raise ConfigError(key, msg) from None


def describe_keys() -> str:
    lines = []
    for k, (typ, default, desc) in KEYS.items():
        lines.append(f"{k} = {default}    # {desc}")
    return "\n".join(lines)


# --- writers -------------------------------------------------------------------------

def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT.format(float(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(FLOAT_FMT.format(float(v)))
    return v


def write_json(path: Path, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2) + "\n")
    return path


def density_payload(rho, extra: dict | None = None) -> dict:
    """Row-major real / imaginary parts with the basis order spelled out."""
    from .qstate import product_labels

    out = {
        "dofs": [d.name for d in rho.dofs],
        "basis": ["".join(lab) for lab in product_labels(rho.dofs)],
        "real": np.real(rho.matrix).tolist(),
        "imag": np.imag(rho.matrix).tolist(),
    }
    out.update(extra or {})
    return out


def read_density(path: str | Path):
    from .qstate import DensityMatrix, DofKind, Dof

    doc = json.loads(Path(path).read_text())
    dofs = tuple(Dof(n, DofKind.OAM if n.startswith("oam") else DofKind.POL) for n in doc["dofs"])
    return DensityMatrix(dofs, np.array(doc["real"]) + 1j * np.array(doc["imag"]), validate=False)


def read_count_records(path: str | Path) -> list:
    """Read ``setting_id, outcome, counts`` rows back into CountRecords."""
    from .measure import CountRecord, MeasurementSetting

    grouped: dict[str, dict[str, int]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            grouped.setdefault(row["setting_id"], {})[row["outcome"]] = int(row["counts"])
    return [CountRecord(MeasurementSetting.from_label(sid), outs) for sid, outs in grouped.items()]
