import json
import subprocess
import sys

import pytest

from eprb import __version__
from eprb.cli import main, parse_angles, parse_grid


@pytest.fixture(scope="module")
def singlet_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("singlet")
    assert main(["simulate", "--model", "singlet", "--pairs", "100000", "--seed", "7", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def table2_csv():
    from importlib.resources import files

    return str(files("eprb").joinpath("data/fixed_run_counts.csv"))


def report(out):
    return json.loads((out / "run_report.json").read_text())


def test_parse_helpers():
    deg, rad = parse_angles("chsh-default")
    assert deg == (0.0, 45.0, 22.5, 67.5)
    assert parse_grid("1000:3000:1000") == [1000, 2000, 3000]


def test_simulate_then_sweep(singlet_dir, tmp_path):
    rep = report(singlet_dir)
    assert rep["exit_code"] == 0 and rep["command"] == "simulate"
    assert rep["sim_config"]["seed"] == 7
    names = {m["path"] for m in rep["manifest"]}
    assert {"meta.json", "station1.csv", "station2.csv"} <= names
    out = tmp_path / "sweep"
    assert main(["sweep", "--data", str(singlet_dir), "--angles", "chsh-default",
                 "--window-grid", "1000:20000:1000", "--out", str(out)]) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("W_ps,S,S_bound,Nc") and len(lines) == 21
    assert (out / "sweep.json").exists()


def test_chsh_rotated_runs_prints_s(table2_csv, tmp_path, capsys):
    code = main(["chsh", "--counts", table2_csv, "--angles", "0,45,22.5,67.5", "--rotated-runs",
                 "--out", str(tmp_path)])
    assert code == 0
    assert "S=2.730" in capsys.readouterr().out
    assert report(tmp_path)["verdicts"]["chsh"]["abs_S_gt_2"] is True


def test_hypothesis_table2_warnings(table2_csv, tmp_path, capsys):
    code = main(["hypothesis", "--counts", table2_csv, "--rotated-runs", "--strict", "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "pass-with-warnings" in out and out.count("warning:") == 3
    doc = json.loads((tmp_path / "hypothesis_report.json").read_text())
    assert doc["overall"] == "pass-with-warnings"


def test_hypothesis_strict_failure(tmp_path):
    counts = tmp_path / "c.csv"
    counts.write_text(
        "a_deg,b_deg,Cpp,Cpm,Cmp,Cmm\n"
        "0,22.5,4000,1000,1000,4000\n"
        "0,67.5,6000,1500,500,2000\n"
        "45,22.5,4000,1000,1000,4000\n"
        "45,67.5,4000,1000,1000,4000\n"
    )
    args = ["hypothesis", "--counts", str(counts), "--out", str(tmp_path / "o")]
    assert main(args) == 0
    assert main(args + ["--strict"]) == 4
    assert report(tmp_path / "o")["verdicts"]["hypothesis"] == "fail"


def test_unknown_flag_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["sweep", "--no-such-flag"])
    assert exc.value.code == 2
    assert "usage:" in capsys.readouterr().err


def test_missing_window_exit_2(singlet_dir, tmp_path):
    assert main(["chsh", "--data", str(singlet_dir), "--out", str(tmp_path)]) == 2


def test_data_errors_exit_3(tmp_path, capsys):
    assert main(["sweep", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 3
    assert main(["report", "--out", str(tmp_path / "r")]) == 3
    assert "--data" in capsys.readouterr().err
    assert report(tmp_path / "r")["exit_code"] == 3


def test_report_refuses_offset_without_flag(singlet_dir, tmp_path):
    assert main(["report", "--data", str(singlet_dir), "--delta-g", "500", "--out", str(tmp_path)]) == 2


def test_report_artifacts(singlet_dir, tmp_path):
    out = tmp_path / "rep"
    assert main(["report", "--data", str(singlet_dir), "--window-grid", "2000:10000:2000", "--out", str(out)]) == 0
    for stem in ("s_vs_window", "singles_vs_window", "counts_vs_window", "correlation_vs_window"):
        assert (out / f"{stem}.csv").exists() and (out / f"{stem}.json").exists()
    rep = report(out)
    assert rep["acausal_flag"] is False
    assert set(rep["verdicts"]["hypothesis_by_window"]) == {"2000", "4000", "6000", "8000", "10000"}
    assert rep["verdicts"]["violation_windows_ps"]
    assert rep["version"] == __version__


def test_report_acausal_flag(singlet_dir, tmp_path):
    out = tmp_path / "acausal"
    assert main(["report", "--data", str(singlet_dir), "--window-grid", "5000:5000:1", "--delta-g", "300",
                 "--allow-acausal", "--out", str(out)]) == 0
    assert report(out)["acausal_flag"] is True


def test_offset_auto(singlet_dir, tmp_path):
    assert main(["offset", "--data", str(singlet_dir), "--out", str(tmp_path)]) == 0
    assert main(["coincidences", "--data", str(singlet_dir), "--window", "3000", "--delta-g", "auto",
                 "--out", str(tmp_path / "c")]) == 0
    rep = report(tmp_path / "c")
    assert "delta_g_estimated_ps" in rep
    assert rep["acausal_flag"] == (rep["delta_g_estimated_ps"] != 0)


def test_histogram_command(singlet_dir, tmp_path):
    assert main(["histogram", "--data", str(singlet_dir), "--bin-ps", "1000", "--range-ps", "20000",
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "histogram.csv").read_text().startswith("bin_center_ps,count")


def test_manifest_hashes_reproducible(singlet_dir, tmp_path):
    runs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert main(["chsh", "--data", str(singlet_dir), "--window", "4000", "--out", str(out)]) == 0
        runs.append({m["path"]: m["sha256"] for m in report(out)["manifest"]})
    assert runs[0] == runs[1] and runs[0]


def test_efficiency_fit(singlet_dir, tmp_path):
    assert main(["efficiency-fit", "--data", str(singlet_dir), "--window", "4000", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "efficiency.csv").read_text().startswith("r1,r2,")
    assert "efficiency_discrepancy" in report(tmp_path)["verdicts"]


def test_ingest_converter(tmp_path, monkeypatch):
    mod = tmp_path / "my_conv.py"
    mod.write_text(
        "from eprb.sim import SimConfig, simulate\n"
        "def convert(source):\n"
        "    return simulate(SimConfig(n_pairs=int(source), seed=1))\n"
        "def wrong(source):\n"
        "    return 42\n"
    )
    monkeypatch.syspath_prepend(str(tmp_path))
    out = tmp_path / "ing"
    assert main(["ingest", "--converter", "my_conv:convert", "--source", "500", "--out", str(out)]) == 0
    assert (out / "station1.csv").exists()
    assert main(["ingest", "--converter", "my_conv:wrong", "--source", "5", "--out", str(tmp_path / "w")]) == 3
    assert main(["ingest", "--converter", "my_conv", "--source", "5", "--out", str(tmp_path / "x")]) == 2


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "eprb.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and __version__ in res.stdout
