"""CLI subcommands, exit codes, output determinism."""

import numpy as np
import pytest
from click.testing import CliRunner

from mfgz.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def test_solve_hji_writes_surface_and_matrix(tmp_path, runner):
    out = tmp_path / "fig"
    res = runner.invoke(main, [
        "solve-hji", "example2_dirac", "--kind", "lower", "--steps", "300",
        "--grid", "-2,2,201", "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert (out / "surface.csv").exists()
    assert (out / "surface_matrix.dat").exists()
    manifest = (out / "manifest.txt").read_text()
    assert "sha256=" in manifest and "subcommand = solve-hji" in manifest
    header = (out / "surface.csv").read_text().splitlines()[0]
    assert header == "t,x1,value"


def test_solve_hji_deterministic_outputs(tmp_path, runner):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        res = runner.invoke(main, [
            "solve-hji", "example2_dirac", "--steps", "300",
            "--grid", "-2,2,101", "--out", str(out)])
        assert res.exit_code == 0, res.output
        outs.append((out / "surface.csv").read_bytes())
    assert outs[0] == outs[1]


def test_value_terminal_only_game_exact(tmp_path, runner):
    cfg = tmp_path / "static.cfg"
    cfg.write_text(
        "horizon = 1.0\ndim = 1\nf = 0\nl = 0\nm = sin(x1) - z1\n"
        "U = 0, 1\nV = 0, 1\nx_law = dirac(%.17g)\nz_law = dirac(0)\n"
        "particles = 1\ncontrol_resolution = 2\ntime_steps = 4\n"
        "grid = -2, 2, 41\n" % (np.pi / 2))
    out = tmp_path / "val"
    res = runner.invoke(main, ["value", str(cfg), "--mode", "exact",
                               "--out", str(out)])
    assert res.exit_code == 0, res.output
    report = (out / "value_report.txt").read_text()
    values = dict(line.split(" = ") for line in report.strip().splitlines())
    assert float(values["lower_value"]) == pytest.approx(1.0, abs=1e-12)
    assert float(values["upper_value"]) == pytest.approx(1.0, abs=1e-12)
    assert (out / "strategy_lower.csv").exists()
    # grid mode only adds interpolation error at the off-lattice atom
    res2 = runner.invoke(main, ["value", str(cfg), "--out", str(tmp_path / "g")])
    assert res2.exit_code == 0, res2.output
    report2 = (tmp_path / "g" / "value_report.txt").read_text()
    values2 = dict(line.split(" = ") for line in report2.strip().splitlines())
    assert float(values2["lower_value"]) == pytest.approx(1.0, abs=5e-3)


def test_value_vehicles_runs_and_is_ordered(tmp_path, runner):
    out = tmp_path / "veh"
    res = runner.invoke(main, ["value", "vehicles", "--steps", "4",
                               "--with-strategies", "--out", str(out)])
    assert res.exit_code == 0, res.output
    report = (out / "value_report.txt").read_text()
    values = dict(line.split(" = ") for line in report.strip().splitlines())
    lo, up = float(values["lower_value"]), float(values["upper_value"])
    assert np.isfinite(lo) and np.isfinite(up)
    assert lo <= up + 1e-12
    assert values["ordered_lower_le_upper"] == "True"


def test_unknown_config_exits_2(runner):
    res = runner.invoke(main, ["value", "no_such_game"])
    assert res.exit_code == 2


def test_bad_config_file_exits_2(tmp_path, runner):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("horizon = 1.0\ndim = 1\nf = u1 +* 2\nl = 0\nm = x1\n"
                   "U = 0,1\nV = 0,1\nx_law = dirac(0)\nz_law = dirac(0)\n")
    res = runner.invoke(main, ["solve-hji", str(cfg)])
    assert res.exit_code == 2


def test_cfl_violation_exits_3(tmp_path, runner):
    res = runner.invoke(main, ["solve-hji", "example2_dirac", "--steps", "3",
                               "--out", str(tmp_path / "x")])
    assert res.exit_code == 3


def test_grid_excursion_exits_5(tmp_path, runner):
    res = runner.invoke(main, [
        "value", "example2_dirac", "--steps", "4", "--resolution", "2",
        "--grid", "-0.3,0.3,7", "--out", str(tmp_path / "x")])
    assert res.exit_code == 5


def test_unknown_suite_exits_2(runner):
    res = runner.invoke(main, ["check", "example1_gaussian", "bogus"])
    assert res.exit_code == 2


def test_check_isaacs_pass_and_fail(runner):
    ok = runner.invoke(main, ["check", "example1_gaussian", "isaacs",
                              "--trials", "10"])
    assert ok.exit_code == 0, ok.output
    bad = runner.invoke(main, ["check", "nonseparable_quadratic", "isaacs",
                               "--trials", "5"])
    assert bad.exit_code == 1
    assert "FAIL" in bad.output


def test_check_seed_changes_samples_not_verdict(runner):
    out0 = runner.invoke(main, ["check", "example1_gaussian", "isaacs",
                                "--trials", "5", "--seed", "0"])
    out1 = runner.invoke(main, ["check", "example1_gaussian", "isaacs",
                                "--trials", "5", "--seed", "7"])
    assert out0.exit_code == 0 and out1.exit_code == 0


def test_wasserstein_command(tmp_path, runner):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    a.write_text("weight,x1\n0.5,0\n0.5,2\n")
    b.write_text("weight,x1\n0.5,1\n0.5,3\n")
    res = runner.invoke(main, ["wasserstein", str(a), str(b)])
    assert res.exit_code == 0, res.output
    assert "W1 = 1" in res.output and "W2 = 1" in res.output


def test_simulate_writes_trajectory(tmp_path, runner):
    out = tmp_path / "sim"
    res = runner.invoke(main, ["simulate", "example1_gaussian", "--particles",
                               "3", "--steps", "5", "--out", str(out)])
    assert res.exit_code == 0, res.output
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "t,atom,x1,weight"
    assert len(lines) == 1 + 3 * 6  # header + atoms x (steps+1)


def test_simulate_deterministic(tmp_path, runner):
    blobs = []
    for name in ("s1", "s2"):
        out = tmp_path / name
        res = runner.invoke(main, ["simulate", "example2_dirac", "--steps", "4",
                                   "--out", str(out)])
        assert res.exit_code == 0
        blobs.append((out / "trajectory.csv").read_bytes())
    assert blobs[0] == blobs[1]
