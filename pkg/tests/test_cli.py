import csv
import json
import math
import shutil
import subprocess

import numpy as np
import pytest

from pharmlab.cli import THREADS_ENV, read_profile_csv, run


def load(path):
    return json.loads(path.read_text())


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_scan_schwarzschild_matches_closed_form(tmp_path):
    out, rep = tmp_path / "s.csv", tmp_path / "r.json"
    code = run(["scan", "--model", "schwarzschild", "--mass", "1", "--p", "2", "--t", "1:100:50",
                "--out", str(out), "--report", str(rep)])
    assert code == 0
    rows = read_rows(out)
    assert len(rows) == 50 and list(rows[0]) == ["t", "s", "F", "A", "B", "D", "G", "m_H", "regular"]
    for row in rows:
        t = float(row["t"])
        assert float(row["B"]) == pytest.approx(4 * math.pi - math.pi / t, rel=1e-10)
        assert row["regular"] == "1"
    report = load(rep)
    assert report["command"] == "scan" and report["timings"] is None
    assert report["config_echo"]["model"] == "schwarzschild"


def test_scan_threads_give_same_rows(tmp_path, monkeypatch):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["scan", "--model", "schwarzschild", "--p", "1.5", "--t", "2:50:40"]
    assert run(args + ["--out", str(a)]) == 0
    monkeypatch.setenv(THREADS_ENV, "4")
    assert run(args + ["--out", str(b)]) == 0
    assert a.read_text() == b.read_text()


def test_t_below_boundary_level_is_error(capsys):
    assert run(["scan", "--model", "schwarzschild", "--p", "1.25", "--t", "1:10:5"]) == 1
    assert "boundary level" in capsys.readouterr().err


def test_check_mass_euclidean_rigidity(tmp_path):
    rep = tmp_path / "r.json"
    assert run(["check-mass", "--model", "euclidean", "--r0", "1", "--p", "1.5", "--report", str(rep)]) == 0
    res = load(rep)["results"]
    assert res["rigidity"]
    for entry in res["inequalities"][:3]:
        assert abs(entry["slack"]) < 1e-8


def test_check_mass_with_region(tmp_path):
    rep = tmp_path / "r.json"
    assert run(["check-mass", "--model", "schwarzschild", "--r0", "3", "--p", "2", "--region", "3,5",
                "--report", str(rep)]) == 0
    loc = load(rep)["results"]["hmax"]["localized"]
    assert loc["test_bound_holds"]


def test_check_monotone_hypothesis_failure(tmp_path):
    prof = tmp_path / "dip.csv"
    rr = np.linspace(1.0, 20.0, 100)
    with open(prof, "w") as fh:
        fh.write("r,phi\n")
        for r in rr:
            fh.write(f"{float(r)!r},{1.0 - 0.5 * math.exp(-(r - 3.0) ** 2)!r}\n")
    rep = tmp_path / "r.json"
    code = run(["check-monotone", "--model", "profile", "--profile", str(prof), "--p", "2",
                "--t", "1.2:40:60", "--report", str(rep)])
    assert code == 2
    report = load(rep)
    assert report["violations"] and not report["results"]["hypotheses"]["scalar_curvature_nonnegative"]


def test_check_monotone_schwarzschild_clean(tmp_path):
    rep = tmp_path / "r.json"
    assert run(["check-monotone", "--model", "schwarzschild", "--p", "1.5", "--report", str(rep), "--timings"]) == 0
    report = load(rep)
    assert report["violations"] == [] and "solve" in report["timings"]


def test_config_file_and_override(tmp_path):
    cfg, rep = tmp_path / "c.json", tmp_path / "r.json"
    cfg.write_text(json.dumps({"model": {"kind": "schwarzschild", "mass": 2.0}, "p": "2"}))
    assert run(["solve-radial", "--config", str(cfg), "--p", "1.5", "--report", str(rep)]) == 0
    echo = load(rep)["config_echo"]
    assert echo["mass"] == 2.0 and echo["p"] == "1.5" and echo["model"] == "schwarzschild"


@pytest.mark.parametrize("content, msg", [('{"model": "euclidean",\n "p": }', "line 2"),
                                          ('{"bogus": 1}', "unknown field 'bogus'"),
                                          ('{"model": "torus"}', "unknown kind")])
def test_config_errors(tmp_path, capsys, content, msg):
    cfg = tmp_path / "c.json"
    cfg.write_text(content)
    assert run(["solve-radial", "--config", str(cfg)]) == 1
    assert msg in capsys.readouterr().err


def test_solve_radial_stdout_report(capsys):
    assert run(["solve-radial", "--model", "euclidean", "--p", "1.5"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["results"]["C_p"] == pytest.approx(4 * math.pi * 3**0.5, rel=1e-10)


def test_solve_grid_reports_capacity(tmp_path, capsys):
    rep = tmp_path / "r.json"
    assert run(["solve-grid", "--model", "euclidean", "--p", "2", "--resolution", "64x64", "--r-out", "8",
                "--report", str(rep)]) == 0
    run_ = load(rep)["results"]["runs"][0]
    assert run_["eps"] == 0.0 and run_["relative_error"] < 0.02
    assert "capacity" in capsys.readouterr().err


def test_capacity_sweep_and_limit(tmp_path):
    rep = tmp_path / "r.json"
    assert run(["capacity-sweep", "--model", "euclidean", "--p", "1.25,1.5,2", "--p-limit",
                "--report", str(rep)]) == 0
    res = load(rep)["results"]
    assert [r["p"] for r in res["capacities"]] == [1.25, 1.5, 2.0]
    assert res["p_limit"]["relative_gap"] < 1e-3


@pytest.mark.parametrize("mode", ["p-harmonic", "imcf", "n-harmonic"])
def test_identity_command(tmp_path, mode):
    rep = tmp_path / "r.json"
    assert run(["identity", "--model", "schwarzschild", "--p", "1.5", "--mode", mode, "--report", str(rep)]) == 0
    for check in load(rep)["results"]["checks"]:
        assert check["max_pointwise_relative"] < 1e-7
        assert max(w["gap"] for w in check["integrated"]) < 1e-6


def test_rigidity_gen_round_trip(tmp_path):
    out, rep = tmp_path / "m.csv", tmp_path / "r.json"
    assert run(["rigidity-gen", "--m-h", "2", "--rho-min", "3", "--out", str(out), "--report", str(rep)]) == 0
    table = read_profile_csv(str(out))
    assert len(table) == 400 and table[0][0] == 3.0
    np.testing.assert_allclose(load(rep)["results"]["hawking_mass"], 1.0, rtol=1e-12)


def test_bad_arguments_exit_nonzero(capsys):
    assert run(["scan", "--model", "schwarzschild", "--t", "1:2"]) == 1
    assert run(["solve-radial", "--p", "3.5"]) == 1
    assert run(["frobnicate"]) == 1
    capsys.readouterr()


def test_profile_csv_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("r,phi\n1.0,1.1\nx,y\n")
    with pytest.raises(ValueError, match="bad.csv:3"):
        read_profile_csv(str(bad))


def test_p_above_two_is_hypothesis_violation(tmp_path, capsys):
    rep = tmp_path / "r.json"
    assert run(["check-mass", "--p", "2.5", "--report", str(rep)]) == 2
    assert load(rep)["results"]["hypotheses"]["p_in_theorem_range"] is False
    assert "hypotheses violated" in capsys.readouterr().err


@pytest.mark.skipif(shutil.which("pharmlab") is None, reason="console script not installed")
def test_console_script():
    proc = subprocess.run(["pharmlab", "capacity-sweep", "--p", "2"], capture_output=True, text=True)
    assert proc.returncode == 0 and "12.566" in proc.stdout
