"""Command-line entry point: ``oamcav <command> [options]``.

Exit codes: 0 success, 1 acceptance failure (``verify``), 2 usage or
configuration error. All files go under ``--output-dir``.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import acceptance, cavity, measure, optics, spdc
from . import config as cf
from . import qstate as qs
from .cavity import ModeIndex

GLOBAL_KEYS = ("seed", "output_dir", "config")


class UsageError(Exception):
    pass


def _parse_modes(text: str) -> list[ModeIndex]:
    modes = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            p, m = (int(x) for x in tok.split(":"))
        except ValueError:
            raise UsageError(f"mode {tok!r} is not of the form p:m") from None
        try:
            modes.append(ModeIndex(p, m))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if not modes:
        raise UsageError("no modes given")
    return modes


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"cannot parse number list {text!r}") from None


def _positive_counts(n: int | None, what: str = "counts") -> None:
    if n is not None and n <= 0:
        raise UsageError(f"--{what} must be positive (zero counts leave every frequency undefined)")


def _child_seed(run: cf.RunConfig, label: str) -> int:
    """Per-command seed derived from the master seed, so commands do not share streams."""
    tag = [ord(c) for c in label]
    return int(np.random.SeedSequence([run.seed, *tag]).generate_state(1)[0])


def _records_rows(records) -> list[tuple]:
    rows = []
    for rec in records:
        for k in rec.setting.outcome_labels():
            rows.append((rec.setting.label, k, rec.outcomes[k]))
    return rows


# --- commands ---------------------------------------------------------------------------

def cmd_cavity_scan(run: cf.RunConfig, args) -> int:
    geom = run.source.geometry
    modes = _parse_modes(args.modes)
    span = args.span_nm * 1e-9 if args.span_nm is not None else None
    summary = []
    for curve in cavity.scan_modes(geom, modes, span=span, samples=args.samples):
        md = curve.mode
        name = f"cavity_scan_p{md.p}_m{md.m:+d}.csv"
        cf.write_csv(run.output_dir / name, ["detuning_m", "transmission"], zip(curve.abscissa, curve.values))
        shift = cavity.resonance_length_shift(md, geom)
        summary.append({"p": md.p, "m": md.m, "resonance_shift_m": shift, "file": name})
        print(f"mode (p={md.p}, m={md.m:+d}): resonance shift {shift * 1e9:.3f} nm -> {name}")
    cf.write_json(run.output_dir / "cavity_scan.json", {
        "rayleigh_range_m": geom.rayleigh_range, **cavity.cold_cavity_params(geom), "modes": summary})
    return 0


def cmd_comb(run: cf.RunConfig, args) -> int:
    comb = spdc.comb_weights(run.source)
    fsr = run.source.geometry.fsr
    table = spdc.comb_table(comb, run.etalon, fsr)
    cf.write_csv(run.output_dir / "comb.csv", ["m", "c_m", "etalon_T", "weight_after_etalon"],
                 [(r["m"], r["c_m"], r["etalon_T"], r["weight_after_etalon"]) for r in table])
    filt = spdc.filtered_state(spdc.cavity_output_state(run.source, comb), run.etalon, comb, fsr)
    summary = {
        "background_ratio": comb.background_ratio(),
        "single_mode_purity": filt["single_mode_purity"],
        "etalon_survival": filt["survival_probability"],
        "n_modes": comb.n_modes,
    }
    cf.write_json(run.output_dir / "comb.json", summary)
    print(f"background ratio {summary['background_ratio']:.4f}, purity after etalon "
          f"{summary['single_mode_purity']:.5f}, survival {summary['etalon_survival']:.4f}")
    return 0


def cmd_correlate(run: cf.RunConfig, args) -> int:
    lw = args.delta_nu_mhz * 1e6 if args.delta_nu_mhz is not None else run.source.biphoton_linewidth
    pairs = args.pairs if args.pairs is not None else run.get("pairs")
    _positive_counts(pairs, "pairs")
    if not lw > 0:
        raise UsageError("--delta-nu-mhz must be positive")
    bw = run.get("bin_width")
    curve = spdc.correlation_curve(lw, tau_max=run.get("tau_max"))
    hist = spdc.sample_histogram(curve, run.get("background"), pairs, bw, _child_seed(run, "correlate"))
    cf.write_csv(run.output_dir / "histogram.csv", ["tau_ns", "counts"], zip(hist.centers * 1e9, hist.counts))
    fit = measure.fit_linewidth(hist)
    payload = {"delta_nu_hz": fit["delta_nu"], "C": fit["C"], "background": fit["background"],
               "sigma_hz": fit["sigma"], "fwhm_ns": fit["fwhm"] * 1e9, "pairs": pairs, "seed": run.seed}
    cf.write_json(run.output_dir / "fit.json", payload)
    print(f"fitted linewidth {fit['delta_nu'] / 1e6:.3f} +- {fit['sigma'] / 1e6:.3f} MHz, "
          f"FWHM {fit['fwhm'] * 1e9:.2f} ns")
    return 0


def _setting_counts(run: cf.RunConfig, args, rate: float) -> int:
    if args.counts is not None:
        _positive_counts(args.counts)
        return args.counts
    return measure.counts_for(rate, run.get("setting_duration"))


def _power(run: cf.RunConfig, args) -> float:
    p = run.source.pump_power if getattr(args, "power", None) is None else args.power
    if p < 0:
        raise UsageError("--power must be non-negative")
    return p


def cmd_oam_fidelity(run: cf.RunConfig, args) -> int:
    p = _power(run, args)
    total = _setting_counts(run, args, spdc.pair_rate(run.source, pump_power=p))
    rho = measure.oam_experiment_state(run.noise, p)
    res = measure.estimate_oam_fidelity(rho, total, _child_seed(run, "oam"), run.get("bootstrap"))
    cf.write_csv(run.output_dir / "oam_counts.csv", ["setting_id", "outcome", "counts"], _records_rows(res["records"]))
    cf.write_json(run.output_dir / "oam_fidelity.json", {
        "pump_power_mw": p, "counts_per_setting": total, "expectations": res["expectations"],
        "fidelity": res["fidelity"], "sigma": res["sigma"]})
    e = res["expectations"]
    print(f"<XX>={e['XX']:.4f} <YY>={e['YY']:.4f} <ZZ>={e['ZZ']:.4f}  F={res['fidelity']:.4f}+-{res['sigma']:.4f}")
    return 0


def cmd_tomo(run: cf.RunConfig, args) -> int:
    _positive_counts(args.counts)
    p = _power(run, args)
    total = _setting_counts(run, args, spdc.pair_rate(run.source, pump_power=p))
    if args.state == "bell-pol":
        rho = measure.polarization_experiment_state(run.noise, p)
        target = optics.pol_bell()
    else:
        rho = measure.oam_experiment_state(run.noise, p)
        target = optics.oam_bell()
    res = measure.estimate_tomography(rho, target, total, _child_seed(run, "tomo"), run.get("bootstrap"))
    cf.write_csv(run.output_dir / "tomo_counts.csv", ["setting_id", "outcome", "counts"], _records_rows(res["records"]))
    cf.write_json(run.output_dir / "tomography.json", cf.density_payload(res["rho"], {
        "state": args.state, "pump_power_mw": p, "counts_per_setting": total,
        "fidelity": res["fidelity"], "sigma": res["sigma"]}))
    print(f"reconstructed {args.state}: F={res['fidelity']:.4f}+-{res['sigma']:.4f}")
    return 0


def _hyper_state(run: cf.RunConfig, p: float, pipeline: str | None):
    if pipeline is None:
        return measure.hyper_experiment_state(run.noise, p)
    _, steps = optics.load_pipeline(pipeline)
    if not steps or steps[-1].kind.upper() != "PBS" or steps[-1].target != "interfere":
        raise UsageError("a hyper pipeline must end with a PBS 'interfere' step")
    pre = optics.run_pipeline(measure.source_density(run.noise, p), steps[:-1])
    post = optics.hyper_postselect(pre)
    if post["success_probability"] == 0:
        raise UsageError("pipeline leaves no postselected events")
    red = qs.partial_trace(post["state"].state, ["pol_A", "pol_B", "oam_A", "oam_B"])
    red = qs.permute(red, ["pol_A", "pol_B", "oam_A", "oam_B"])
    return qs.depolarize(red, ["pol_A", "pol_B"], run.noise.interference_weight), post["success_probability"]


def cmd_hyper(run: cf.RunConfig, args) -> int:
    p = _power(run, args)
    rho, success = _hyper_state(run, p, args.pipeline)
    total = _setting_counts(run, args, spdc.pair_rate(run.source, pump_power=p) * success)
    res = measure.estimate_hyper_fidelity(rho, total, _child_seed(run, "hyper"), run.get("bootstrap"))
    cf.write_csv(run.output_dir / "hyper_counts.csv", ["setting_id", "outcome", "counts"], _records_rows(res["records"]))
    cf.write_json(run.output_dir / "hyper_fidelity.json", {
        "pump_power_mw": p, "success_probability": success, "counts_per_setting": total,
        "expectations": res["expectations"], "fidelity": res["fidelity"], "sigma": res["sigma"]})
    print(f"postselection success {success:.3f}, F={res['fidelity']:.4f}+-{res['sigma']:.4f}")
    return 0


def cmd_brightness(run: cf.RunConfig, args) -> int:
    powers = _parse_floats(args.powers)
    if any(p < 0 for p in powers):
        raise UsageError("pump powers must be non-negative")
    rows = []
    for p in powers:
        r = measure.brightness_and_fidelity(p, run.source, run.noise)
        rows.append((p, r["pairs_per_second"], 0.5 * r["pairs_per_second"], r["fidelity"], r["werner_weight"]))
    cf.write_csv(run.output_dir / "brightness.csv",
                 ["pump_power_mw", "pairs_per_second", "hyper_pairs_per_second", "fidelity", "werner_weight"], rows)
    for row in rows:
        print(f"{row[0]:7.1f} mW  {row[1]:8.1f} pairs/s  F={row[3]:.4f}")
    return 0


def cmd_pipeline(run: cf.RunConfig, args) -> int:
    """Run a pipeline file on the noiseless source pair and report overlaps with the reference states."""
    _, steps = optics.load_pipeline(args.file)
    st = optics.run_pipeline(spdc.BiphotonState(spdc.oam_pol_state()), steps)
    names = [d.name for d in st.dofs]
    out = {"survival_probability": st.survival_probability, "dofs": names}
    refs = {"oam_bell": optics.oam_bell(), "pol_bell": optics.pol_bell(), "pol_phi_plus": optics.pol_phi_plus(),
            "hyper": optics.hyper_target()}
    for key, ref in refs.items():
        if all(d.name in names for d in ref.dofs):
            red = qs.partial_trace(st.state, [d.name for d in ref.dofs])
            out[f"fidelity_{key}"] = qs.fidelity(red, ref)
    cf.write_json(run.output_dir / "pipeline.json", out)
    for k, v in out.items():
        print(f"{k}: {v}")
    return 0


def cmd_verify(run: cf.RunConfig, args) -> int:
    checks = acceptance.run_all(run.seed, run.source, run.etalon, run.noise,
                                run.get("setting_duration"), run.get("bootstrap"))
    for c in checks:
        print(c.line())
    ok = acceptance.all_passed(checks)
    print(f"{sum(c.passed for c in checks)}/{len(checks)} checks passed")
    cf.write_json(run.output_dir / "verify.json", {
        "seed": run.seed, "passed": ok,
        "checks": [{"number": c.number, "name": c.name, "passed": c.passed, "detail": c.detail} for c in checks]})
    return 0 if ok else 1


def cmd_keys(run: cf.RunConfig, args) -> int:
    print(cf.describe_keys())
    return 0


COMMANDS = {
    "cavity-scan": (cmd_cavity_scan, "resonance-length scans per LG mode (CSV per mode)"),
    "comb": (cmd_comb, "frequency-comb weights and etalon filtering (CSV)"),
    "correlate": (cmd_correlate, "synthetic coincidence histogram and linewidth fit (CSV + JSON)"),
    "oam-fidelity": (cmd_oam_fidelity, "OAM Bell-state fidelity from three correlators (JSON)"),
    "tomo": (cmd_tomo, "two-qubit state tomography (JSON)"),
    "hyper": (cmd_hyper, "hyperentangled-state fidelity from 15 correlators (JSON)"),
    "brightness": (cmd_brightness, "pair rate and fidelity versus pump power (CSV)"),
    "pipeline": (cmd_pipeline, "run an optical pipeline file on the noiseless pair (JSON)"),
    "verify": (cmd_verify, "run the acceptance checks; exit 1 if any fails"),
    "keys": (cmd_keys, "list configuration keys with defaults"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master random seed")
    common.add_argument("--output-dir", default=argparse.SUPPRESS, help="directory for written files")
    common.add_argument("--config", default=argparse.SUPPRESS, help="flat key = value configuration file")

    parser = argparse.ArgumentParser(prog="oamcav", parents=[common],
                                     description="Cavity-enhanced OAM/polarization photon-pair source simulator")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)
    ps = {name: sub.add_parser(name, parents=[common], help=h, description=h) for name, (_, h) in COMMANDS.items()}

    ps["cavity-scan"].add_argument("--modes", default="0:0,0:1,0:-1,0:2", help="comma list of p:m (default %(default)s)")
    ps["cavity-scan"].add_argument("--samples", type=int, default=4001)
    ps["cavity-scan"].add_argument("--span-nm", type=float, default=None, help="scan span (default lambda/2)")
    ps["correlate"].add_argument("--delta-nu-mhz", type=float, default=None, help="biphoton linewidth, MHz")
    ps["correlate"].add_argument("--pairs", type=int, default=None, help="pairs in the histogram")
    for name in ("oam-fidelity", "tomo", "hyper"):
        ps[name].add_argument("--counts", type=int, default=None,
                              help="coincidences per setting (default: pair rate x setting_duration)")
        ps[name].add_argument("--power", type=float, default=None, help="pump power, mW")
    ps["tomo"].add_argument("--state", choices=("bell-pol", "bell-oam"), default="bell-pol")
    ps["hyper"].add_argument("--pipeline", default=None, help="pipeline JSON ending with a PBS interfere step")
    ps["brightness"].add_argument("--powers", default="0,10,20,30,40,50,60,70,80,90,100", help="pump powers, mW")
    ps["pipeline"].add_argument("file", help="pipeline JSON file")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {k: getattr(args, k) for k in ("seed", "output_dir") if hasattr(args, k)}
    try:
        if getattr(args, "config", None) is not None and not Path(args.config).is_file():
            raise cf.ConfigError("config", f"file not found: {args.config}")
        run = cf.build(overrides, getattr(args, "config", None))
        return COMMANDS[args.command][0](run, args)
    except cf.ConfigError as exc:
        print(f"oamcav: configuration error: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"oamcav: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"oamcav: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
