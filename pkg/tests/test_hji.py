"""Monotone LF solver: terminal data, stepping, ordering, convergence."""

import numpy as np
import pytest
from conftest import make_game

from mfgz.game import control_grid, load_config
from mfgz.hji import (CflViolation, SchemeConfig, SpatialGrid, comparison_check,
                      solve, step_backward, suggest_steps, terminal_field)
from mfgz.measures import EmpiricalMeasure, QuantizationSpec, quantize

Z0 = EmpiricalMeasure.dirac(0.0)


def paper_game():
    spec, defaults, _ = load_config("example2_dirac")
    return spec


def test_terminal_dirac_target_is_sine():
    spec = paper_game()
    grid = SpatialGrid([(-2.0, 2.0, 401)])
    fld = terminal_field(spec, grid, Z0)
    xs = grid.axis_points(0)
    assert np.array_equal(fld.values, np.sin(xs))


def test_terminal_two_atom_average():
    spec = make_game(m="x1")
    grid = SpatialGrid([(-1.0, 1.0, 5), (-1.0, 1.0, 5)])
    fld = terminal_field(spec, grid, Z0)
    a, b = np.meshgrid(grid.axis_points(0), grid.axis_points(1), indexing="ij")
    assert fld.values == pytest.approx((a + b) / 2.0, abs=1e-15)


def test_terminal_quantized_target_mean_cancels():
    spec = paper_game()
    grid = SpatialGrid([(-2.0, 2.0, 101)])
    z51 = quantize(QuantizationSpec("gaussian", (0.0, 1.0), 51))
    fld = terminal_field(spec, grid, z51)
    xs = grid.axis_points(0)
    assert fld.values == pytest.approx(np.sin(xs), abs=1e-13)


def test_step_zero_game_is_identity():
    spec = make_game(f="0", l="0", m="sin(x1)")
    grid = SpatialGrid([(-2.0, 2.0, 41)])
    fld = terminal_field(spec, grid, Z0)
    ug = control_grid(spec.u_box, 2)
    vg = control_grid(spec.v_box, 2)
    cfg = SchemeConfig(4)
    out = step_backward(fld, spec, ug, vg, cfg)
    assert np.array_equal(out.values, fld.values)


def test_step_constant_cost_adds_dt():
    spec = make_game(f="0", l="1", m="0")
    grid = SpatialGrid([(-1.0, 1.0, 21)])
    fld = terminal_field(spec, grid, Z0)
    ug = control_grid(spec.u_box, 2)
    vg = control_grid(spec.v_box, 2)
    cfg = SchemeConfig(4)
    out = step_backward(fld, spec, ug, vg, cfg)
    assert out.values == pytest.approx(np.full(21, 0.25), abs=1e-15)


def test_single_node_update_against_scalar_oracle():
    # independent scalar recomputation of the LF update at x = 0
    spec = paper_game()
    grid = SpatialGrid([(-2.0, 2.0, 401)])
    fld = terminal_field(spec, grid, Z0)
    ug = control_grid(spec.u_box, 5)
    vg = control_grid(spec.v_box, 5)
    cfg = SchemeConfig(300)
    out = step_backward(fld, spec, ug, vg, cfg)
    dt = 1.0 / 300
    dx = grid.dxs[0]
    xs = grid.axis_points(0)
    i = 200
    assert xs[i] == 0.0
    p = (np.sin(xs[i + 1]) - np.sin(xs[i - 1])) / (2 * dx)
    d2 = np.sin(xs[i + 1]) - 2 * np.sin(xs[i]) + np.sin(xs[i - 1])
    best_v = -np.inf
    for v in vg[:, 0]:
        best_u = np.inf
        for u in ug[:, 0]:
            drift = 1.0 / (1.0 + 0.0) + np.sin(0.0) + u - 0.1 * v
            run = np.sin(0.0) + 0.0 + u - v
            best_u = min(best_u, p * drift + run)
        best_v = max(best_v, best_u)
    sigma = cfg.sigma[0]
    oracle = np.sin(xs[i]) + dt * (best_v + sigma * 0.5 * d2 / dx)
    assert out.values[i] == pytest.approx(oracle, abs=1e-13)


def test_solve_static_game_constant_in_time():
    spec = make_game(f="0", l="0", m="x1")
    grid = SpatialGrid([(-1.0, 1.0, 11)])
    res = solve(spec, grid, Z0, "lower", SchemeConfig(8), snapshot_times=(0.5,))
    assert np.array_equal(res.field.values, grid.axis_points(0))
    assert np.array_equal(res.snapshots[0].values, grid.axis_points(0))


def test_paper_surface_terminal_and_departure():
    spec = paper_game()
    grid = SpatialGrid([(-2.0, 2.0, 401)])
    ug = control_grid(spec.u_box, 5)
    vg = control_grid(spec.v_box, 5)
    steps = suggest_steps(spec, grid, ug, vg)
    res = solve(spec, grid, Z0, "lower", SchemeConfig(steps),
                snapshot_times=(0.0, 0.25, 0.5, 0.75, 1.0),
                u_grid=ug, v_grid=vg)
    xs = grid.axis_points(0)
    snaps = sorted(res.snapshots, key=lambda s: -s.t)
    assert snaps[0].t == 1.0
    assert np.array_equal(snaps[0].values, np.sin(xs))
    # the profile departs from the terminal sine monotonically as t decreases
    departures = [float(np.max(np.abs(s.values - np.sin(xs)))) for s in snaps]
    assert all(departures[i] < departures[i + 1] for i in range(len(departures) - 1))


def test_self_convergence_under_refinement():
    spec = paper_game()
    solutions = {}
    for pts in (101, 201, 401):
        grid = SpatialGrid([(-2.0, 2.0, pts)])
        ug = control_grid(spec.u_box, 5)
        vg = control_grid(spec.v_box, 5)
        steps = suggest_steps(spec, grid, ug, vg)
        res = solve(spec, grid, Z0, "lower", SchemeConfig(steps),
                    u_grid=ug, v_grid=vg)
        solutions[pts] = res.field.values
    coarse_diff = np.max(np.abs(solutions[201][::2] - solutions[101]))
    fine_diff = np.max(np.abs(solutions[401][::2] - solutions[201]))
    assert fine_diff < coarse_diff


def test_comparison_identical_terminal_zero_gap():
    spec = paper_game()
    grid = SpatialGrid([(-2.0, 2.0, 101)])
    gap = comparison_check(spec, grid, Z0, "lower", SchemeConfig(80),
                           "sin(x1) - z1", "sin(x1) - z1", resolution=3)
    assert gap == 0.0


def test_comparison_constant_shift_rides_through():
    spec = paper_game()
    grid = SpatialGrid([(-2.0, 2.0, 101)])
    gap = comparison_check(spec, grid, Z0, "lower", SchemeConfig(80),
                           "sin(x1) - z1", "sin(x1) - z1 + 1", resolution=3)
    assert gap == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("kind", ["lower", "upper"])
def test_comparison_ordered_terminals_stay_ordered(kind):
    spec = paper_game()
    grid = SpatialGrid([(-2.0, 2.0, 201)])
    gap = comparison_check(spec, grid, Z0, kind, SchemeConfig(160),
                           "sin(x1) - z1", "sin(x1) - z1 + 0.1*x1*x1",
                           resolution=5)
    assert gap >= -1e-12


def test_comparison_rejects_unordered_terminal():
    spec = paper_game()
    grid = SpatialGrid([(-2.0, 2.0, 51)])
    with pytest.raises(Exception):
        comparison_check(spec, grid, Z0, "lower", SchemeConfig(40),
                         "x1", "x1 - 1")


def test_lower_solution_below_upper_and_isaacs_collapse():
    spec = paper_game()
    grid = SpatialGrid([(-2.0, 2.0, 201)])
    ug = control_grid(spec.u_box, 5)
    vg = control_grid(spec.v_box, 5)
    steps = suggest_steps(spec, grid, ug, vg)
    lo = solve(spec, grid, Z0, "lower", SchemeConfig(steps), u_grid=ug, v_grid=vg)
    up = solve(spec, grid, Z0, "upper", SchemeConfig(steps), u_grid=ug, v_grid=vg)
    diff = up.field.values - lo.field.values
    assert np.min(diff) >= -1e-9
    # separable Hamiltonian: the two solutions coincide
    assert np.max(np.abs(diff)) <= 1e-9


def test_lift_symmetry_two_atoms():
    spec, _, _ = load_config("example1_gaussian")
    grid = SpatialGrid([(-2.0, 3.0, 51), (-2.0, 3.0, 51)])
    ug = control_grid(spec.u_box, 3)
    vg = control_grid(spec.v_box, 3)
    steps = suggest_steps(spec, grid, ug, vg)
    res = solve(spec, grid, Z0, "lower", SchemeConfig(steps), u_grid=ug, v_grid=vg)
    vals = res.field.values
    assert np.max(np.abs(vals - vals.T)) <= 1e-10


def test_max_principle_bound_holds():
    spec = paper_game()
    grid = SpatialGrid([(-2.0, 2.0, 201)])
    ug = control_grid(spec.u_box, 5)
    vg = control_grid(spec.v_box, 5)
    steps = suggest_steps(spec, grid, ug, vg)
    res = solve(spec, grid, Z0, "lower", SchemeConfig(steps), u_grid=ug, v_grid=vg)
    assert res.max_principle_slack <= 1e-9


def test_cfl_violation_detected():
    spec = paper_game()
    grid = SpatialGrid([(-2.0, 2.0, 401)])
    with pytest.raises(CflViolation):
        solve(spec, grid, Z0, "lower", SchemeConfig(5), resolution=3)


def test_axis_cap_enforced():
    spec = make_game(m="x1")
    grid = SpatialGrid([(-1.0, 1.0, 5)] * 4)
    with pytest.raises(Exception):
        terminal_field(spec, grid, Z0)


def test_time_dependent_tables_rebuilt_per_step():
    # a vanishing t-term forces the per-step table path; the solution must
    # match the time-independent equivalent exactly
    static = make_game(f="0.4", l="x1", m="sin(x1)")
    timed = make_game(f="0.4 + 0*t", l="x1", m="sin(x1)")
    assert timed.time_dependent and not static.time_dependent
    grid = SpatialGrid([(-1.5, 1.5, 61)])
    out = {}
    for name, spec in (("static", static), ("timed", timed)):
        res = solve(spec, grid, Z0, "lower", SchemeConfig(30), resolution=2)
        out[name] = res.field.values
        assert res.comparison_theory_applies == (name == "static")
    assert np.array_equal(out["static"], out["timed"])


def test_time_dependent_drift_transports():
    # f = t: characteristics shift by the integral of t
    spec = make_game(f="t", l="0", m="x1")
    grid = SpatialGrid([(-2.0, 2.0, 81)])
    res = solve(spec, grid, Z0, "lower", SchemeConfig(60), resolution=2)
    xs = grid.axis_points(0)
    inner = slice(20, 61)
    # V(0, x) = x + int_0^1 t dt = x + 1/2 away from the boundary layer
    assert res.field.values[inner] == pytest.approx(xs[inner] + 0.5, abs=2e-2)
