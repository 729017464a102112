import csv
import hashlib
import io
import subprocess
import sys

import numpy as np
import pytest

from qmem.cli import main
from qmem.scenario import load, loads, parse_override, preset_text
from qmem.errors import ConfigError


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def report(text):
    return dict(line.split(" = ", 1) for line in text.splitlines() if " = " in line)


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


# efficiency


def test_efficiency_report(capsys):
    code, out, _ = run_cli(capsys, "efficiency", "--scenario", "nd_yso", "--set", "memory.mode=afc")
    r = report(out)
    assert code == 0
    assert float(r["eta_afc"]) <= 4 * np.exp(-2)
    assert float(r["echo_time_s"]) == pytest.approx(50e-9)
    assert r["multimode_capacity"] == "6"


def test_efficiency_sweep_peaks_at_two(capsys):
    code, out, _ = run_cli(capsys, "efficiency", "--scenario", "nd_yso", "--sweep", "d_eff=0:6:0.05")
    data = rows(out)
    assert code == 0
    best = max(data, key=lambda r: float(r["eta_forward"]))
    assert float(best["d_eff"]) == pytest.approx(2.0)
    assert float(data[-1]["d_eff"]) == pytest.approx(6.0)


def test_efficiency_other_sweeps(capsys):
    code, out, _ = run_cli(capsys, "--scenario", "pr_yso", "efficiency", "--sweep", "spin_wave_time_us=0:20:5")
    eta = [float(r["eta_spin"]) for r in rows(out)]
    assert code == 0 and eta[0] == 1.0
    code, out, _ = run_cli(capsys, "efficiency", "--scenario", "pr_yso", "--sweep", "finesse=2:10:1")
    assert code == 0 and len(rows(out)) == 9


@pytest.mark.parametrize(
    "argv",
    [
        ["efficiency", "--scenario", "nd_yso", "--set", "memory.bogus_mhz=3"],
        ["efficiency", "--scenario", "nd_yso", "--set", "memory.delta=20"],
        ["efficiency", "--scenario", "nd_yso", "--sweep", "depth=0:1:0.1"],
        ["efficiency", "--scenario", "nd_yso", "--sweep", "d_eff=1:0:0.1"],
        ["efficiency"],
    ],
)
def test_config_errors_exit_2(capsys, argv):
    code, _, err = run_cli(capsys, *argv)
    assert code == 2
    assert "configuration error" in err


def test_missing_scenario_file_is_io_error(capsys):
    code, _, err = run_cli(capsys, "efficiency", "--scenario", "no_such_preset")
    assert code == 4 and "I/O" in err


def test_out_file(capsys, tmp_path):
    target = tmp_path / "eff.txt"
    code, out, _ = run_cli(capsys, "efficiency", "--scenario", "nd_yso", "--out", str(target))
    assert code == 0 and out == ""
    assert "eta_total" in target.read_text()


# source


def test_source_stats_monotone(capsys):
    code, out, _ = run_cli(capsys, "source", "--scenario", "nd_yso", "--stats", "--powers", "1,2,5,10,20,30")
    g2 = [float(r["g2_cross"]) for r in rows(out)]
    assert code == 0
    assert all(a > b for a, b in zip(g2, g2[1:]))
    p5 = rows(out)[2]
    assert float(p5["p"]) == pytest.approx(0.013545)


def test_source_curve_pr(capsys):
    code, out, _ = run_cli(capsys, "source", "--scenario", "pr_yso", "--curve", "g2", "--tau-range=-300:300:0.05")
    data = rows(out)
    assert code == 0
    assert list(data[0]) == ["tau_s", "value", "error"]
    taus = np.array([float(r["tau_s"]) for r in data])
    vals = np.array([float(r["value"]) for r in data])
    from qmem.analysis import oscillation_period
    from qmem.spdc import CorrelationCurve

    near = (taus >= 0) & (taus < 40e-9)
    period = oscillation_period(CorrelationCurve(taus[near], vals[near]))
    assert period == pytest.approx(1 / 401.7857142857143e6, abs=0.05e-9)


def test_source_report_fwhm(capsys):
    code, out, _ = run_cli(capsys, "source", "--scenario", "pr_yso")
    r = report(out)
    assert code == 0
    assert float(r["correlation_fwhm_s"]) == pytest.approx(103e-9, rel=0.01)
    assert float(r["vernier_period_hz"]) == pytest.approx(45e9, rel=1e-6)


def test_zero_power_is_domain_error(capsys):
    code, _, err = run_cli(capsys, "source", "--scenario", "nd_yso", "--set", "source.pump_power_mw=0")
    assert code == 3 and "pair probability" in err


# simulate and analyze


@pytest.fixture(scope="module")
def pr_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("pr")
    path = d / "pr.tags"
    code = main(["simulate", "--scenario", "pr_yso", "--seed", "5", "--out", str(path), "--set", "run.duration_s=10"])
    assert code == 0
    return path


def test_simulate_same_seed_same_sha(capsys, tmp_path):
    digests = []
    for name in ("a.tags", "b.tags"):
        code, out, _ = run_cli(capsys, "simulate", "--scenario", "nd_yso", "--seed", "9", "--out", str(tmp_path / name), "--set", "run.duration_s=0.001")
        assert code == 0
        digests.append(report(out)["tag_sha256"])
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digests[-1]
    assert digests[0] == digests[1]
    code, out, _ = run_cli(capsys, "simulate", "--scenario", "nd_yso", "--seed", "10", "--out", str(tmp_path / "c.tags"), "--set", "run.duration_s=0.001")
    assert report(out)["tag_sha256"] != digests[0]


def test_simulate_needs_out(capsys):
    code, _, _ = run_cli(capsys, "simulate", "--scenario", "nd_yso")
    assert code == 2


def test_simulate_unwritable_is_io_error(capsys, tmp_path):
    code, _, err = run_cli(capsys, "simulate", "--scenario", "nd_yso", "--out", str(tmp_path / "no" / "x.tags"), "--set", "run.duration_s=0.001")
    assert code == 4 and "I/O" in err


def test_analyze_echo_peak_present(capsys, pr_run):
    code, out, _ = run_cli(capsys, "analyze", "g2", str(pr_run), "--scenario", "pr_yso", "--center-ns", "0", "--center-ns", "2000")
    r = report(out)
    assert code == 0
    assert r["normalization"] == "floor"
    echo = float(r["g2[2000ns]"])
    assert echo - 3 * float(r["g2[2000ns].error"]) > 1


def test_analyze_fit_pr(capsys, tmp_path):
    path = tmp_path / "pr_plain.tags"
    sets = ["--set", "memory.mode=none", "--set", "run.pump_gating=cw", "--set", "source.broadband_noise_rate_hz_per_mw=0", "--set", "run.duration_s=5"]
    assert main(["simulate", "--scenario", "pr_yso", "--seed", "1", "--out", str(path), *sets]) == 0
    capsys.readouterr()
    code, out, _ = run_cli(capsys, "analyze", "fit", str(path), "--scenario", "pr_yso", "--bin-ns", "10", "--tau-min-ns", "-1000", "--tau-max-ns", "1000")
    r = report(out)
    assert code == 0
    assert float(r["delta_nu_plus_hz"]) == pytest.approx(2.9e6, rel=0.05 + 3 * float(r["delta_nu_plus_error_hz"]) / 2.9e6)
    assert float(r["delta_nu_minus_hz"]) == pytest.approx(1.7e6, rel=0.05 + 3 * float(r["delta_nu_minus_error_hz"]) / 1.7e6)


def test_analyze_curve_csv(capsys, pr_run):
    code, out, _ = run_cli(capsys, "analyze", "g2", str(pr_run), "--curve", "--bin-ns", "50", "--tau-min-ns", "-500", "--tau-max-ns", "500")
    data = rows(out)
    assert code == 0 and len(data) == 20
    assert set(data[0]) == {"tau_s", "value", "error"}


def test_analyze_witness_reports(capsys):
    code, out, _ = run_cli(capsys, "analyze", "witness-chsh", "--visibility", "0.7071067811865475")
    r = report(out)
    assert code == 0 and float(r["value"]) == 2.0 and r["violated"] == "false"
    code, out, _ = run_cli(capsys, "analyze", "concurrence", "--visibility", "1", "--p00", "0", "--p01", "0.5", "--p10", "0.5", "--p11", "0")
    assert report(out)["concurrence"] == "1"
    code, out, _ = run_cli(capsys, "analyze", "mu1", "--noise-prob", "0.01", "--eta", "0.1", "--eta-herald", "0.05")
    r = report(out)
    assert float(r["mu1"]) == pytest.approx(0.1) and r["herald_compatible"] == "false"


def test_analyze_domain_errors(capsys):
    code, _, _ = run_cli(capsys, "analyze", "mu1", "--noise-prob", "0.01", "--eta", "0")
    assert code == 3
    code, _, _ = run_cli(capsys, "analyze", "witness-chsh", "--visibility", "1.5")
    assert code == 3


def test_analyze_io_errors(capsys, tmp_path, pr_run):
    code, _, _ = run_cli(capsys, "analyze", "g2", str(tmp_path / "missing.tags"))
    assert code == 4
    bad = tmp_path / "v2.tags"
    bad.write_text(pr_run.read_text().replace("#qmemtags v1", "#qmemtags v2", 1))
    code, _, err = run_cli(capsys, "analyze", "g2", str(bad))
    assert code == 4 and "v2" in err
    code, _, _ = run_cli(capsys, "analyze", "g2")
    assert code == 2


def test_analyze_is_repeatable(capsys, pr_run):
    results = [run_cli(capsys, "analyze", "witness-cs", str(pr_run), "--scenario", "pr_yso") for _ in range(2)]
    assert [code for code, _, _ in results] == [0, 0]
    assert results[0][1] == results[1][1] and "value = " in results[0][1]


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "qmem.cli", "analyze", "mu1", "--noise-prob", "0.0025", "--eta", "0.001"], capture_output=True, text=True)
    assert res.returncode == 0 and "mu1 = 2.5" in res.stdout


def test_threads_env_does_not_change_output(capsys, tmp_path, monkeypatch):
    digests = []
    for threads in ("1", "3"):
        monkeypatch.setenv("QMEM_THREADS", threads)
        code, out, _ = run_cli(capsys, "simulate", "--scenario", "pr_yso", "--out", str(tmp_path / f"t{threads}.tags"), "--set", "run.duration_s=0.3", "--set", "run.block_slots=20000")
        digests.append(report(out)["tag_sha256"])
    assert digests[0] == digests[1]


# scenario files


def test_presets_load():
    nd, pr = load("nd_yso"), load("pr_yso")
    assert nd.source.spectral_brightness == 6.3e3 and nd.source.filter_bandwidth == 43e6
    assert pr.experiment().pair_probability == pytest.approx(0.0128)
    assert pr.memory is not None and pr.gating.mode == "off_after_herald"


def test_overrides_are_typed():
    assert parse_override("run.seed=7") == ("run", "seed", 7)
    assert parse_override("memory.mode=afc") == ("memory", "mode", "afc")
    with pytest.raises(ConfigError):
        parse_override("seed")


def test_strict_parsing_of_files(tmp_path):
    text = preset_text("nd_yso")
    assert loads(text).seed == load("nd_yso").seed
    with pytest.raises(ConfigError):
        loads(text + "\n[extra]\nx_ns = 1\n")
    with pytest.raises(ConfigError):
        loads(text.replace("[run]", "[run]\nwindow = 10"))
    path = tmp_path / "s.toml"
    path.write_text(text)
    assert load(path).source == load("nd_yso").source
