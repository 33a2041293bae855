"""Configuration-driven experiment runner.

Subcommands: solve-hji, value, check, wasserstein, simulate.  Every run
writes plain-text outputs plus a manifest with resolved parameters and
content checksums; data files carry no wall-clock, so identical inputs give
byte-identical outputs.

Exit codes: 2 bad config/arguments, 3 CFL violation, 4 numeric failure,
5 interpolation-grid excursion.
"""

from __future__ import annotations

import hashlib
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from . import calculus as calc
from . import dynamics as dyn
from . import game as gm
from . import hamilton as ham
from . import hji as hj
from . import dpp as dp
from .accel import backend_name
from .expr import ExpressionError
from .interp import GridExcursionError, multilinear
from .measures import (EmpiricalMeasure, MeasureError, QuantizationSpec,
                       quantize, wasserstein)

EXIT_CONFIG = 2
EXIT_CFL = 3
EXIT_NUMERIC = 4
EXIT_GRID = 5


class _Manifest:
    def __init__(self, subcommand, config_path, outdir):
        self.entries = [
            ("tool_version", __version__),
            ("backend", backend_name()),
            ("subcommand", subcommand),
            ("config", str(config_path)),
            ("output_dir", str(outdir)),
        ]
        self.outputs = []
        self.t0 = time.time()

    def param(self, key, value):
        self.entries.append((key, value))

    def output(self, path):
        digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        self.outputs.append((Path(path).name, digest))

    def write(self, outdir):
        path = Path(outdir) / "manifest.txt"
        with open(path, "w") as fh:
            for key, value in self.entries:
                fh.write("%s = %s\n" % (key, value))
            fh.write("wall_clock_s = %.3f\n" % (time.time() - self.t0))
            for name, digest in self.outputs:
                fh.write("output %s sha256=%s\n" % (name, digest))
        return path


def _fail(code, message):
    click.echo("error: %s" % message, err=True)
    sys.exit(code)


def _load(config):
    try:
        return gm.load_config(config)
    except gm.ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))


def _guarded(fn):
    try:
        return fn()
    except hj.CflViolation as exc:
        _fail(EXIT_CFL, str(exc))
    except GridExcursionError as exc:
        _fail(EXIT_GRID, str(exc))
    except (hj.NumericFailure, ExpressionError) as exc:
        _fail(EXIT_NUMERIC, str(exc))
    except (gm.GameError, gm.ConfigError, MeasureError) as exc:
        _fail(EXIT_CONFIG, str(exc))


def _ensemble(spec, defaults, particles, z_particles):
    n_x = particles if particles else defaults.particles
    n_z = z_particles if z_particles else n_x
    ens_x = gm.make_ensemble(defaults, spec.dim, particles=n_x)
    z_spec = QuantizationSpec(defaults.z_law.family, defaults.z_law.params, n_z)
    return gm.TargetedEnsemble(ens_x.x_measure, quantize(z_spec))


def _outdir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


@click.group()
@click.version_option(__version__, prog_name="mfgz")
def main():
    """Zero-sum games with distribution-dependent dynamics."""


@main.command("solve-hji")
@click.argument("config")
@click.option("--kind", type=click.Choice(["lower", "upper"]), default="lower")
@click.option("--particles", type=int, default=None, help="atoms in the state law")
@click.option("--z-particles", type=int, default=None, help="atoms in the target law")
@click.option("--grid", "grid_text", default=None,
              help="per-axis 'lo,hi,points' specs joined by ';'")
@click.option("--steps", type=int, default=None, help="time steps (default from CFL)")
@click.option("--resolution", type=int, default=None, help="control points per axis")
@click.option("--snapshots", default=None, help="comma-separated snapshot times")
@click.option("--out", "out_path", default="out", help="output directory")
def cmd_solve_hji(config, kind, particles, z_particles, grid_text, steps,
                  resolution, snapshots, out_path):
    """Solve the lifted HJI equation backward and emit the value surface."""
    spec, defaults, cfg_path = _load(config)

    def run():
        ens = _ensemble(spec, defaults, particles, z_particles)
        n_atoms = ens.x_measure.count
        if grid_text is not None:
            axes = gm._parse_grid(grid_text)
            if len(axes) == 1 and n_atoms * spec.dim > 1:
                axes = axes * (n_atoms * spec.dim)
        else:
            axes = defaults.grid_axes * n_atoms
        grid = hj.SpatialGrid(axes)
        res_ctrl = resolution or defaults.control_resolution
        u_grid = gm.control_grid(spec.u_box, res_ctrl)
        v_grid = gm.control_grid(spec.v_box, res_ctrl)
        n_steps = steps or hj.suggest_steps(spec, grid, u_grid, v_grid)
        if snapshots is not None:
            snap_times = [float(tok) for tok in snapshots.split(",") if tok.strip()]
        else:
            snap_times = list(np.linspace(0.0, spec.horizon, 5))
        scheme = hj.SchemeConfig(n_steps)
        result = hj.solve(spec, grid, ens.z_measure, kind, scheme,
                          snapshot_times=snap_times, u_grid=u_grid, v_grid=v_grid)
        outdir = _outdir(out_path)
        manifest = _Manifest("solve-hji", cfg_path, outdir)
        manifest.param("kind", kind)
        manifest.param("particles", n_atoms)
        manifest.param("grid", ";".join("%g,%g,%d" % a for a in grid.axes))
        manifest.param("time_steps", n_steps)
        manifest.param("control_resolution", res_ctrl)
        manifest.param("sigma", " ".join("%.6g" % s for s in result.sigma))
        manifest.param("comparison_theory_applies", result.comparison_theory_applies)
        surface = outdir / "surface.csv"
        hj.write_surface_csv(surface, result.snapshots or [result.field])
        manifest.output(surface)
        if grid.ndim == 1:
            matrix = outdir / "surface_matrix.dat"
            hj.write_matrix(matrix, result.snapshots or [result.field])
            manifest.output(matrix)
        node = ens.x_measure.atoms.reshape(1, -1)
        value_at_node = float(multilinear(result.field.values, grid.lows,
                                          grid.dxs, node)[0])
        bound = result.bound_at(0.0, spec.horizon)
        peak = float(np.max(np.abs(result.field.values)))
        click.echo("value at the quantized initial configuration: %.6g" % value_at_node)
        click.echo("max|value| = %.6g vs max-principle bound %.6g -> %s"
                   % (peak, bound, "ok" if result.max_principle_slack <= 0 else
                      "slack %.3g" % result.max_principle_slack))
        manifest.param("value_at_node", "%.17g" % value_at_node)
        manifest.param("max_principle_ok", result.max_principle_slack <= 0)
        path = manifest.write(outdir)
        click.echo("wrote %s" % path)

    _guarded(run)


@main.command("value")
@click.argument("config")
@click.option("--kind", type=click.Choice(["both", "lower", "upper"]), default="both")
@click.option("--particles", type=int, default=None)
@click.option("--z-particles", type=int, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--resolution", type=int, default=None)
@click.option("--grid", "grid_text", default=None,
              help="per-axis 'lo,hi,points'; default sized from the reachable tube")
@click.option("--mode", type=click.Choice(["grid", "exact"]), default="grid")
@click.option("--scheme", type=click.Choice(["euler", "rk4"]), default="euler")
@click.option("--substeps", type=int, default=1)
@click.option("--with-strategies/--no-strategies", default=True)
@click.option("--out", "out_path", default="out")
def cmd_value(config, kind, particles, z_particles, steps, resolution,
              grid_text, mode, scheme, substeps, with_strategies, out_path):
    """Backward dynamic-programming game value at the configured law."""
    spec, defaults, cfg_path = _load(config)

    def run():
        ens = _ensemble(spec, defaults, particles, z_particles)
        n_steps = steps or defaults.time_steps
        res_ctrl = resolution or defaults.control_resolution
        integrator = dyn.IntegratorConfig(scheme, substeps)
        if mode == "exact":
            grid = None
        elif grid_text is not None:
            axes = gm._parse_grid(grid_text)
            if len(axes) == 1 and ens.x_measure.count * spec.dim > 1:
                axes = axes * (ens.x_measure.count * spec.dim)
            grid = hj.SpatialGrid(axes)
        else:
            lo, hi, pts = defaults.grid_axes[0]
            dx = (hi - lo) / (pts - 1)
            grid = dp.suggest_grid(spec, ens, n_steps, res_ctrl, res_ctrl, dx)
        cfg = dp.DppConfig(n_steps, res_ctrl, res_ctrl, grid, integrator)
        want = None if kind == "both" else kind
        report = dp.dpp_value(spec, ens, cfg, kind=want,
                              with_strategies=with_strategies)
        outdir = _outdir(out_path)
        manifest = _Manifest("value", cfg_path, outdir)
        manifest.param("particles", ens.x_measure.count)
        manifest.param("steps", n_steps)
        manifest.param("control_resolution", res_ctrl)
        manifest.param("mode", mode)
        manifest.param("integrator", "%s/%d" % (scheme, substeps))
        report_path = outdir / "value_report.txt"
        report_path.write_text(report.to_text())
        manifest.output(report_path)
        for side in ("lower", "upper"):
            strat = getattr(report, side + "_strategy")
            if strat is None:
                continue
            spath = outdir / ("strategy_%s.csv" % side)
            with open(spath, "w") as fh:
                fh.write("step,opponent_index,own_index\n")
                for s, opp, own in strat.rows():
                    fh.write("%d,%d,%d\n" % (s, opp, own))
            manifest.output(spath)
        click.echo(report.to_text().rstrip())
        if not report.ordered():
            _fail(EXIT_NUMERIC, "lower value exceeds upper value")
        path = manifest.write(outdir)
        click.echo("wrote %s" % path)

    _guarded(run)


@main.command("wasserstein")
@click.argument("file_a")
@click.argument("file_b")
def cmd_wasserstein(file_a, file_b):
    """W1 and W2 between two measure files (CSV columns: weight, x1..xn)."""

    def run():
        mu_a = _read_measure(file_a)
        mu_b = _read_measure(file_b)
        click.echo("W1 = %.17g" % wasserstein(1, mu_a, mu_b))
        click.echo("W2 = %.17g" % wasserstein(2, mu_a, mu_b))

    _guarded(run)


def _read_measure(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                rows.append([float(tok) for tok in parts])
            except ValueError:
                continue  # header line
    if not rows:
        raise MeasureError("no numeric rows in %s" % path)
    data = np.asarray(rows)
    return EmpiricalMeasure(data[:, 1:], data[:, 0])


@main.command("simulate")
@click.argument("config")
@click.option("--particles", type=int, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--u", "u_text", default=None, help="constant control for player 1")
@click.option("--v", "v_text", default=None, help="constant control for player 2")
@click.option("--substeps", type=int, default=8)
@click.option("--out", "out_path", default="out")
def cmd_simulate(config, particles, steps, u_text, v_text, substeps, out_path):
    """Propagate the configured ensemble and write the trajectory CSV."""
    spec, defaults, cfg_path = _load(config)

    def run():
        ens = _ensemble(spec, defaults, particles, None)
        n_steps = steps or defaults.time_steps
        mesh = gm.TimeMesh(0.0, spec.horizon, n_steps)
        u_val = ([float(t) for t in u_text.split(",")] if u_text
                 else [lo for lo, _ in spec.u_box])
        v_val = ([float(t) for t in v_text.split(",")] if v_text
                 else [lo for lo, _ in spec.v_box])
        u_path = gm.ControlPath.constant(mesh, np.asarray(u_val), spec.u_box)
        v_path = gm.ControlPath.constant(mesh, np.asarray(v_val), spec.v_box)
        cfg = dyn.IntegratorConfig("rk4", substeps)
        state = dyn.ParticleState(0.0, ens.x_measure)
        outdir = _outdir(out_path)
        manifest = _Manifest("simulate", cfg_path, outdir)
        manifest.param("particles", ens.x_measure.count)
        manifest.param("steps", n_steps)
        manifest.param("u", ",".join("%g" % x for x in u_val))
        manifest.param("v", ",".join("%g" % x for x in v_val))
        traj = outdir / "trajectory.csv"
        with open(traj, "w") as fh:
            fh.write("t,atom," + ",".join("x%d" % (i + 1) for i in range(spec.dim))
                     + ",weight\n")

            def dump(st):
                for i in range(st.measure.count):
                    coords = ",".join("%.17g" % c for c in st.measure.atoms[i])
                    fh.write("%.17g,%d,%s,%.17g\n"
                             % (st.time, i, coords, st.measure.weights[i]))

            dump(state)
            total_cost = 0.0
            for t_next in mesh.times()[1:]:
                state, c = dyn.running_cost_accumulate(
                    spec, state, u_path, v_path, float(t_next), cfg)
                total_cost += c
                dump(state)
        manifest.output(traj)
        terminal = gm.eval_terminal_cost(spec, ens, state.measure.atoms)
        click.echo("running cost %.6g, terminal cost %.6g, total %.6g"
                   % (total_cost, terminal, total_cost + terminal))
        manifest.param("objective", "%.17g" % (total_cost + terminal))
        path = manifest.write(outdir)
        click.echo("wrote %s" % path)

    _guarded(run)


SUITES = ("metric", "flow", "estimates", "isaacs", "gradient", "dpp-oracle",
          "comparison")


@main.command("check")
@click.argument("config")
@click.argument("suite")
@click.option("--seed", type=int, default=0)
@click.option("--trials", type=int, default=None)
def cmd_check(config, suite, seed, trials):
    """Run one named property suite; exit 0 iff every property holds."""
    if suite not in SUITES:
        _fail(EXIT_CONFIG, "unknown suite %r (choose from %s)" % (suite, ", ".join(SUITES)))
    spec, defaults, _ = _load(config)

    def run():
        rng = np.random.default_rng(seed)
        checks = _SUITE_RUNNERS[suite](spec, defaults, rng, trials)
        failed = 0
        for name, ok, detail in checks:
            click.echo("%-44s %s (%s)" % (name, "pass" if ok else "FAIL", detail))
            failed += 0 if ok else 1
        if failed:
            sys.exit(1)

    _guarded(run)


def _suite_metric(spec, defaults, rng, trials):
    n_trials = trials or 200
    sym = ident = tri = order = cross = cost_eq = 0.0
    for _ in range(n_trials):
        mus = []
        for _k in range(3):
            n = int(rng.integers(1, 9))
            atoms = rng.normal(size=n) * 2.0
            w = rng.uniform(0.1, 1.0, n)
            mus.append(EmpiricalMeasure(atoms, w / w.sum()))
        a, b, c = mus
        dab = wasserstein(2, a, b)
        sym = max(sym, abs(dab - wasserstein(2, b, a)))
        ident = max(ident, wasserstein(2, a, a))
        tri = max(tri, dab - wasserstein(2, a, c) - wasserstein(2, c, b))
        order = max(order, wasserstein(1, a, b) - dab)
        from .measures import optimal_coupling
        cost_eq = max(cost_eq, abs(optimal_coupling(a, b).cost(2) - dab * dab))
        e1 = EmpiricalMeasure(np.column_stack([a.atoms[:, 0], np.zeros(a.count)]),
                              a.weights)
        e2 = EmpiricalMeasure(np.column_stack([b.atoms[:, 0], np.zeros(b.count)]),
                              b.weights)
        cross = max(cross, abs(wasserstein(2, e1, e2) - dab))
    return [
        ("W2 symmetry", sym <= 1e-10, "max %.3g" % sym),
        ("W2 identity", ident == 0.0, "max %.3g" % ident),
        ("triangle inequality", tri <= 1e-9, "max violation %.3g" % tri),
        ("W1 <= W2", order <= 1e-12, "max %.3g" % order),
        ("assignment vs quantile", cross <= 1e-10, "max %.3g" % cross),
        ("coupling cost equals W2^2", cost_eq <= 1e-10, "max %.3g" % cost_eq),
    ]


def _suite_flow(spec, defaults, rng, trials):
    mu = gm.make_ensemble(defaults, spec.dim, particles=max(defaults.particles, 8)
                          if defaults.x_law.family != "dirac" else None).x_measure
    mesh = gm.TimeMesh(0.0, spec.horizon, 2)
    u_path = gm.ControlPath.constant(mesh, np.array([lo for lo, _ in spec.u_box]),
                                     spec.u_box)
    v_path = gm.ControlPath.constant(mesh, np.array([lo for lo, _ in spec.v_box]),
                                     spec.v_box)
    devs = []
    for k in (4, 8, 16, 32):
        devs.append(dyn.check_flow_property(
            spec, dyn.ParticleState(0.0, mu), u_path, v_path,
            0.0, 0.25 * spec.horizon, spec.horizon, dyn.IntegratorConfig("rk4", k)))
    mono = all(devs[i] > devs[i + 1] for i in range(len(devs) - 1))
    return [
        ("flow deviation at k=32", devs[-1] <= 1e-8, "%.3g" % devs[-1]),
        ("deviation monotone in substeps", mono,
         " -> ".join("%.2g" % d for d in devs)),
    ]


def _suite_estimates(spec, defaults, rng, trials):
    if spec.lipschitz_k is None:
        raise gm.GameError("config lacks lipschitz_K")
    fam = defaults.x_law.family
    if fam == "dirac":
        nu1 = quantize(defaults.x_law)
        nu2 = EmpiricalMeasure(nu1.atoms + 0.3, nu1.weights.copy())
    else:
        nu1 = quantize(QuantizationSpec(fam, defaults.x_law.params, 16))
        shifted = (defaults.x_law.params[0] + 0.3,) + defaults.x_law.params[1:]
        nu2 = quantize(QuantizationSpec(fam, shifted, 16))
    mesh = gm.TimeMesh(0.0, spec.horizon, 4)
    u_path = gm.ControlPath.constant(mesh, np.array([lo for lo, _ in spec.u_box]),
                                     spec.u_box)
    v_path = gm.ControlPath.constant(mesh, np.array([lo for lo, _ in spec.v_box]),
                                     spec.v_box)
    rep = dyn.check_estimates(spec, nu1, nu2, u_path, v_path,
                              dyn.IntegratorConfig("rk4", 8))
    return [
        ("time-regularity ratio", rep.max_time_ratio <= rep.bound,
         "%.3g vs bound %.3g" % (rep.max_time_ratio, rep.bound)),
        ("law-stability ratio", rep.max_stability_ratio <= rep.bound,
         "%.3g vs bound %.3g" % (rep.max_stability_ratio, rep.bound)),
    ]


def _suite_isaacs(spec, defaults, rng, trials):
    n_samples = trials or 50
    res = defaults.control_resolution
    u_grid = gm.control_grid(spec.u_box, res)
    v_grid = gm.control_grid(spec.v_box, res)
    samples = []
    for _ in range(n_samples):
        n = int(rng.integers(1, 7))
        atoms = rng.normal(size=(n, spec.dim))
        nu = EmpiricalMeasure(atoms, np.full(n, 1.0 / n))
        samples.append((rng.random() * spec.horizon, nu,
                        rng.normal(size=(n, spec.dim))))
    gap = ham.isaacs_check(spec, samples, u_grid, v_grid)
    return [("sup-inf equals inf-sup", gap <= 1e-12, "max gap %.3g" % gap)]


def _suite_gradient(spec, defaults, rng, trials):
    funs = [calc.MeasureFunctional.mean(), calc.MeasureFunctional.squared_mean(),
            calc.MeasureFunctional.expectation_of("sin(x1)")]
    worst = 0.0
    for n in (1, 2, 4, 8):
        mu = quantize(QuantizationSpec("gaussian", (0.1, 1.0), n))
        for fun in funs:
            worst = max(worst, calc.gradient_fd_check(fun, mu, 1e-5))
    game = gm.GameSpec(1.0, 1, ["feature(mean)"], "0", "x1",
                       ((0.0, 1.0),), ((0.0, 1.0),))
    mesh = gm.TimeMesh(0.0, 1.0, 1)
    u_path = gm.ControlPath.constant(mesh, 0.0, game.u_box)
    v_path = gm.ControlPath.constant(mesh, 0.0, game.v_box)
    state = dyn.ParticleState(0.0, EmpiricalMeasure.uniform_atoms(np.array([1.0, 3.0])))
    fun = calc.MeasureFunctional.squared_mean()
    r1 = calc.chain_rule_check(fun, game, state, u_path, v_path, 0.02)
    r2 = calc.chain_rule_check(fun, game, state, u_path, v_path, 0.01)
    return [
        ("lift gradient matches differences", worst <= 1e-6, "max rel err %.3g" % worst),
        ("chain-rule residual first order", r1 / max(r2, 1e-300) >= 1.9,
         "ratio %.3g" % (r1 / max(r2, 1e-300))),
    ]


def _suite_dpp_oracle(spec, defaults, rng, trials):
    games = [
        (gm.GameSpec(1.0, 1, ["u1 - v1"], "0", "x1", ((0.0, 1.0),), ((0.0, 1.0),)),
         2, 2, 2),
        (gm.GameSpec(1.0, 1, ["u1 - 0.5*v1 + 0.2*sin(x1)"], "0.3*x1*x1 + u1 - v1",
                     "sin(x1) - z1", ((0.0, 1.0),), ((0.0, 1.0),)), 3, 2, 2),
        (spec, 1, 2, 2),
    ]
    worst = 0.0
    residual = 0.0
    for game, steps, r_u, r_v in games:
        ens = gm.TargetedEnsemble(EmpiricalMeasure.dirac(np.zeros(game.dim)),
                                  EmpiricalMeasure.dirac(np.zeros(game.dim)))
        cfg = dp.DppConfig(steps, r_u, r_v)
        rep = dp.dpp_value(game, ens, cfg)
        for kind in ("lower", "upper"):
            oracle = dp.brute_force_value(game, ens, cfg, kind)
            worst = max(worst, abs(getattr(rep, kind) - oracle))
        if steps >= 2:
            split = gm.TimeMesh(0.0, game.horizon, steps).times()[steps // 2]
            residual = max(residual, dp.dpp_residual(game, ens, cfg, "lower",
                                                     float(split)))
    return [
        ("recursion equals strategy enumeration", worst == 0.0, "max |diff| %.3g" % worst),
        ("split-point residual", residual == 0.0, "max %.3g" % residual),
    ]


def _suite_comparison(spec, defaults, rng, trials):
    axes = defaults.grid_axes * (1 if spec.dim > 1 else 1)
    grid = hj.SpatialGrid(axes)
    z_measure = quantize(defaults.z_law)
    u_grid = gm.control_grid(spec.u_box, defaults.control_resolution)
    v_grid = gm.control_grid(spec.v_box, defaults.control_resolution)
    steps = hj.suggest_steps(spec, grid, u_grid, v_grid)
    m_hi = spec.m_expr.source + " + 0.1*x1*x1"
    gaps = {}
    for kind in ("lower", "upper"):
        gaps[kind] = hj.comparison_check(spec, grid, z_measure, kind,
                                         hj.SchemeConfig(steps),
                                         spec.m_expr.source, m_hi,
                                         u_grid=u_grid, v_grid=v_grid)
    lo = hj.solve(spec, grid, z_measure, "lower", hj.SchemeConfig(steps),
                  u_grid=u_grid, v_grid=v_grid)
    up = hj.solve(spec, grid, z_measure, "upper", hj.SchemeConfig(steps),
                  u_grid=u_grid, v_grid=v_grid)
    kind_gap = float(np.min(up.field.values - lo.field.values))
    return [
        ("ordered terminals stay ordered (lower)", gaps["lower"] >= -1e-12,
         "min gap %.3g" % gaps["lower"]),
        ("ordered terminals stay ordered (upper)", gaps["upper"] >= -1e-12,
         "min gap %.3g" % gaps["upper"]),
        ("lower solution below upper", kind_gap >= -1e-9, "min gap %.3g" % kind_gap),
    ]


_SUITE_RUNNERS = {
    "metric": _suite_metric,
    "flow": _suite_flow,
    "estimates": _suite_estimates,
    "isaacs": _suite_isaacs,
    "gradient": _suite_gradient,
    "dpp-oracle": _suite_dpp_oracle,
    "comparison": _suite_comparison,
}


if __name__ == "__main__":
    main()
