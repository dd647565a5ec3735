import csv
import json
import math
import os

import pytest

from oamcav import cli, optics


def run(*args):
    return cli.main([str(a) for a in args])


def test_correlate_example(tmp_path, capsys):
    assert run("correlate", "--delta-nu-mhz", 13.8, "--pairs", 1000000, "--seed", 7, "--output-dir", tmp_path) == 0
    fit = json.loads((tmp_path / "fit.json").read_text())
    assert {"delta_nu_hz", "C", "background", "sigma_hz"} <= set(fit)
    assert abs(fit["delta_nu_hz"] - 13.8e6) <= 0.3e6
    with open(tmp_path / "histogram.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["tau_ns", "counts"]
    assert len(rows) == 201


def test_tomo_zero_counts_is_usage_error(tmp_path, capsys):
    assert run("--output-dir", tmp_path, "tomo", "--state", "bell-pol", "--counts", 0) == 2
    assert "zero counts" in capsys.readouterr().err
    assert not any(tmp_path.iterdir())


def test_unknown_command_exit_2():
    with pytest.raises(SystemExit) as info:
        run("bogus")
    assert info.value.code == 2


def test_invalid_config_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("finesse = 0.5\n")
    assert run("--config", cfg, "comb", "--output-dir", tmp_path / "o") == 2
    assert "finesse" in capsys.readouterr().err
    assert run("--config", tmp_path / "missing.cfg", "comb") == 2


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"seed = 5\noutput_dir = {tmp_path / 'from_file'}\npairs = 200000\n")
    assert run("--config", cfg, "correlate", "--seed", 9) == 0
    fit = json.loads((tmp_path / "from_file" / "fit.json").read_text())
    assert fit["seed"] == 9 and fit["pairs"] == 200000


def test_outputs_deterministic_and_confined(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    for d in ("a", "b"):
        for cmd in (["comb"], ["correlate", "--pairs", 100000], ["tomo", "--counts", 2000],
                    ["oam-fidelity"], ["hyper", "--counts", 1000], ["brightness"],
                    ["cavity-scan", "--samples", 101]):
            assert run(*cmd, "--output-dir", d, "--seed", 3) == 0
    assert sorted(os.listdir(tmp_path)) == ["a", "b"]
    names = sorted(os.listdir(tmp_path / "a"))
    assert names == sorted(os.listdir(tmp_path / "b"))
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes(), n


def test_seed_changes_sampled_outputs(tmp_path):
    run("correlate", "--pairs", 100000, "--seed", 1, "--output-dir", tmp_path / "x")
    run("correlate", "--pairs", 100000, "--seed", 2, "--output-dir", tmp_path / "y")
    assert (tmp_path / "x" / "histogram.csv").read_bytes() != (tmp_path / "y" / "histogram.csv").read_bytes()


def test_command_payloads(tmp_path):
    out = tmp_path
    run("--output-dir", out, "oam-fidelity")
    doc = json.loads((out / "oam_fidelity.json").read_text())
    assert set(doc["expectations"]) == {"XX", "YY", "ZZ"}
    assert doc["counts_per_setting"] == 14490
    assert abs(doc["fidelity"] - 0.969) < 0.005

    run("--output-dir", out, "tomo")
    doc = json.loads((out / "tomography.json").read_text())
    assert len(doc["real"]) == 4 and len(doc["imag"][0]) == 4
    assert abs(sum(doc["real"][i][i] for i in range(4)) - 1) < 1e-9
    assert abs(doc["fidelity"] - 0.946) < 0.006 and doc["sigma"] > 0

    run("--output-dir", out, "hyper")
    doc = json.loads((out / "hyper_fidelity.json").read_text())
    assert len(doc["expectations"]) == 15
    assert doc["success_probability"] == 0.5
    assert abs(doc["fidelity"] - 0.85) < 0.01

    run("--output-dir", out, "brightness", "--powers", "0,50,100")
    with open(out / "brightness.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["pump_power_mw"]) for r in rows] == [0, 50, 100]
    assert float(rows[2]["pairs_per_second"]) == 2 * float(rows[1]["pairs_per_second"])
    assert abs(float(rows[1]["fidelity"]) - 0.969) < 1e-9

    run("--output-dir", out, "comb")
    with open(out / "comb.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 35 and list(rows[0]) == ["m", "c_m", "etalon_T", "weight_after_etalon"]

    run("--output-dir", out, "cavity-scan", "--modes", "0:0,0:1", "--samples", 11)
    assert (out / "cavity_scan_p0_m+1.csv").read_text().splitlines()[0] == "detuning_m,transmission"


def test_bad_arguments(tmp_path):
    assert run("--output-dir", tmp_path, "cavity-scan", "--modes", "0:20") == 2
    assert run("--output-dir", tmp_path, "cavity-scan", "--modes", "x") == 2
    assert run("--output-dir", tmp_path, "brightness", "--powers", "-5") == 2
    assert run("--output-dir", tmp_path, "correlate", "--pairs", 0) == 2


def _write_pipeline(path, final=True):
    steps = [{"kind": "PBS", "target": "split"},
             {"kind": "HWP", "target": "A", "angle": math.pi / 4},
             {"kind": "HWP", "target": "A", "angle": math.pi / 8},
             {"kind": "HWP", "target": "B", "angle": math.pi / 8}]
    if final:
        steps.append({"kind": "PBS", "target": "interfere"})
    path.write_text(json.dumps({"source": "single-mode", "steps": steps}))
    return path


def test_pipeline_and_hyper_with_file(tmp_path):
    p = _write_pipeline(tmp_path / "hyper.json")
    assert run("--output-dir", tmp_path / "o", "pipeline", p) == 0
    doc = json.loads((tmp_path / "o" / "pipeline.json").read_text())
    assert abs(doc["fidelity_hyper"] - 1) < 1e-12
    assert abs(doc["survival_probability"] - 0.5) < 1e-12
    assert run("--output-dir", tmp_path / "o", "hyper", "--pipeline", p, "--counts", 2000) == 0
    assert run("--output-dir", tmp_path / "o", "hyper", "--pipeline", _write_pipeline(tmp_path / "n.json", False)) == 2


def test_pipeline_reports_eq6(tmp_path):
    p = tmp_path / "otp.json"
    p.write_text(json.dumps({"steps": [{"kind": "PBS", "target": "split"},
                                       {"kind": "OTP", "target": "A"}, {"kind": "OTP", "target": "B"}]}))
    assert run("--output-dir", tmp_path, "pipeline", p) == 0
    doc = json.loads((tmp_path / "pipeline.json").read_text())
    assert abs(doc["fidelity_pol_bell"] - 1) < 1e-12


def test_verify_exits_zero(tmp_path, capsys):
    assert run("--output-dir", tmp_path, "verify") == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 9
    assert json.loads((tmp_path / "verify.json").read_text())["passed"] is True


def test_verify_exits_one_on_failure(tmp_path, capsys):
    cfg = tmp_path / "off.cfg"
    cfg.write_text("spectral_brightness = 3.0\n")
    assert run("--config", cfg, "--output-dir", tmp_path, "verify") == 1
    assert "[FAIL] 8." in capsys.readouterr().out


def test_keys_command(capsys):
    assert run("keys") == 0
    assert "etalon_finesse = 30.0" in capsys.readouterr().out


def test_reference_states_unchanged():
    assert abs(optics.hyper_target().norm - 1) < 1e-12
