"""Monotone Lax-Friedrichs solver for the lifted lower/upper HJI equations.

The equations are solved on particle configurations: a grid node is an
N-atom configuration (uniform weights), so the lattice has N*n axes (capped
at 3).  The costate fed to the Hamiltonian at atom i is N times the central
difference in atom i's coordinates; with the 1/N atom weights that scaling
cancels and the update reduces to the classical LF step of the coupled
particle system with measure-averaged running cost.

Per-axis dissipation is sigma_a = sup |drift component| over grid x control
grids, the time step obeys dt * sum_a sigma_a / dx_a <= theta, and boundary
nodes use the inward one-sided difference for the inflow part of the drift
with no dissipation across the boundary (so order preservation survives at
the edges).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import game as gm
from .accel import NUMBA_ENABLED
from .expr import Expression, parse_expression
from .measures import EmpiricalMeasure

AXIS_CAP = 3


class CflViolation(RuntimeError):
    pass


class NumericFailure(RuntimeError):
    pass


class SpatialGrid:
    """Uniform lattice over the particle coordinates: per-axis (lo, hi, points)."""

    def __init__(self, axes):
        axes = tuple((float(lo), float(hi), int(pts)) for lo, hi, pts in axes)
        if len(axes) < 1:
            raise gm.GameError("grid needs at least one axis")
        for lo, hi, pts in axes:
            if not lo < hi:
                raise gm.GameError("grid axis needs lo < hi")
            if pts < 3:
                raise gm.GameError("grid axis needs at least 3 points")
        self.axes = axes
        self.lows = np.array([a[0] for a in axes])
        self.highs = np.array([a[1] for a in axes])
        self.shape = tuple(a[2] for a in axes)
        self.dxs = (self.highs - self.lows) / (np.array(self.shape) - 1)

    @property
    def ndim(self):
        return len(self.axes)

    def axis_points(self, a):
        lo, hi, pts = self.axes[a]
        return np.linspace(lo, hi, pts)

    def nodes(self):
        """All node coordinates, shape (M, d), C order (last axis fastest)."""
        mesh = np.meshgrid(*[self.axis_points(a) for a in range(self.ndim)],
                           indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def strides(self):
        out = np.empty(self.ndim, dtype=np.int64)
        acc = 1
        for a in range(self.ndim - 1, -1, -1):
            out[a] = acc
            acc *= self.shape[a]
        return out


@dataclass
class ValueField:
    grid: SpatialGrid
    t: float
    values: np.ndarray
    kind: str
    z_context: EmpiricalMeasure

    def copy_at(self, t, values):
        return ValueField(self.grid, t, values, self.kind, self.z_context)


@dataclass
class SchemeConfig:
    time_steps: int
    theta: float = 0.9
    sigma: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.time_steps < 1:
            raise gm.GameError("need at least one time step")
        if not 0.0 < self.theta <= 1.0:
            raise gm.GameError("CFL safety factor must be in (0, 1]")

    def check_cfl(self, horizon, grid):
        dt = horizon / self.time_steps
        load = dt * float(np.sum(self.sigma / grid.dxs))
        if load > self.theta + 1e-12:
            raise CflViolation(
                "CFL violated: dt * sum(sigma/dx) = %.4f > theta = %.3f; "
                "need >= %d steps" % (load, self.theta, int(np.ceil(
                    self.time_steps * load / self.theta)))
            )
        return dt


def _atoms_of_nodes(grid, dim):
    nodes = grid.nodes()
    n_atoms = grid.ndim // dim
    return nodes, nodes.reshape(nodes.shape[0], n_atoms, dim), n_atoms


def _terminal_values(spec, grid, z_measure, m_expr=None):
    m_expr = spec.m_expr if m_expr is None else m_expr
    _, configs, n_atoms = _atoms_of_nodes(grid, spec.dim)
    z_atoms = z_measure.atoms
    env = {}
    x = configs[:, :, None, :]
    z = z_atoms[None, None, :, :]
    env.update({"x%d" % (i + 1): x[..., i] for i in range(spec.dim)})
    env.update({"z%d" % (i + 1): z[..., i] for i in range(spec.dim)})
    vals = np.asarray(m_expr(**env), dtype=np.float64)
    vals = np.broadcast_to(vals, (configs.shape[0], n_atoms, z_atoms.shape[0]))
    per_atom = vals @ z_measure.weights
    out = np.mean(per_atom, axis=1)
    if not np.all(np.isfinite(out)):
        raise NumericFailure("terminal cost produced non-finite values")
    return out.reshape(grid.shape)


def terminal_field(spec, grid: SpatialGrid, z_measure, kind="lower") -> ValueField:
    """Terminal condition: average of m over the configuration and the target law."""
    if grid.ndim % spec.dim != 0:
        raise gm.GameError("grid axes must be a multiple of the state dimension")
    if grid.ndim > AXIS_CAP:
        raise gm.GameError("LF solver is capped at %d grid axes" % AXIS_CAP)
    vals = _terminal_values(spec, grid, z_measure)
    return ValueField(grid, spec.horizon, vals, kind, z_measure)


def _control_tables(spec, grid, u_grid, v_grid, t):
    """Drift (P, d, M) and mean running cost (P, M) tables over all control pairs."""
    nodes, configs, n_atoms = _atoms_of_nodes(grid, spec.dim)
    m_nodes = nodes.shape[0]
    d = grid.ndim
    feats = gm.batch_features(spec, configs)
    n_pairs = len(u_grid) * len(v_grid)
    drift = np.empty((n_pairs, d, m_nodes))
    lrun = np.empty((n_pairs, m_nodes))
    for iu in range(len(u_grid)):
        for iv in range(len(v_grid)):
            pair = iu * len(v_grid) + iv
            dr = gm.drift_batch(spec, t, configs, feats, u_grid[iu], v_grid[iv])
            drift[pair] = dr.reshape(m_nodes, d).T
            lrun[pair] = np.mean(
                gm.running_batch(spec, t, configs, feats, u_grid[iu], v_grid[iv]),
                axis=-1,
            )
    if not (np.all(np.isfinite(drift)) and np.all(np.isfinite(lrun))):
        raise NumericFailure("drift or running cost non-finite on the grid")
    return drift, lrun


def _one_sided_diffs(values, dxs):
    d = values.ndim
    dplus, dminus = [], []
    for a in range(d):
        dp = np.zeros_like(values)
        dm = np.zeros_like(values)
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        diff = (values[tuple(hi)] - values[tuple(lo)]) / dxs[a]
        dp[tuple(lo)] = diff
        dm[tuple(hi)] = diff
        dplus.append(dp)
        dminus.append(dm)
    return dplus, dminus


def _axis_masks(shape):
    d = len(shape)
    lo_masks, hi_masks = [], []
    for a in range(d):
        idx = np.arange(shape[a]).reshape([-1 if i == a else 1 for i in range(d)])
        lo_masks.append(idx == 0)
        hi_masks.append(idx == shape[a] - 1)
    return lo_masks, hi_masks


def hji_step_numpy(values, drift, lrun, sigma, dxs, dt, ru, rv, lower):
    shape = values.shape
    dplus, dminus = _one_sided_diffs(values, dxs)
    lo_masks, hi_masks = _axis_masks(shape)
    diss = np.zeros_like(values)
    for a in range(len(shape)):
        interior = ~(lo_masks[a] | hi_masks[a])
        diss += np.where(interior, sigma[a] * 0.5 * (dplus[a] - dminus[a]), 0.0)
    outer = None
    outer_n, inner_n = (rv, ru) if lower else (ru, rv)
    for oidx in range(outer_n):
        inner = None
        for iidx in range(inner_n):
            iu, iv = (iidx, oidx) if lower else (oidx, iidx)
            pair = iu * rv + iv
            tr = np.array(np.broadcast_to(lrun[pair].reshape(shape), shape))
            for a in range(len(shape)):
                fa = drift[pair, a].reshape(shape)
                contrib = np.where(
                    lo_masks[a],
                    np.maximum(fa, 0.0) * dplus[a],
                    np.where(hi_masks[a], np.minimum(fa, 0.0) * dminus[a],
                             fa * 0.5 * (dplus[a] + dminus[a])),
                )
                tr = tr + contrib
            inner = tr if inner is None else (
                np.minimum(inner, tr) if lower else np.maximum(inner, tr))
        outer = inner if outer is None else (
            np.maximum(outer, inner) if lower else np.minimum(outer, inner))
    return values + dt * (outer + diss)


def step_backward(fld: ValueField, spec, u_grid, v_grid, cfg: SchemeConfig,
                  horizon_start=0.0, tables=None) -> ValueField:
    """One explicit backward step of size dt = (T - t0) / time_steps."""
    grid = fld.grid
    if cfg.sigma is None:
        drift, lrun = _control_tables(spec, grid, u_grid, v_grid, fld.t)
        cfg.sigma = np.max(np.abs(drift), axis=(0, 2))
        tables = (drift, lrun)
    dt = cfg.check_cfl(spec.horizon - horizon_start, grid)
    if tables is None:
        tables = _control_tables(spec, grid, u_grid, v_grid, fld.t)
    drift, lrun = tables
    lower = 1 if fld.kind == "lower" else 0
    if NUMBA_ENABLED:
        from .kernels import hji_step_nb

        out = np.empty(fld.values.size)
        hji_step_nb(
            fld.values.ravel(), np.asarray(grid.shape, dtype=np.int64),
            grid.strides(), drift, lrun, cfg.sigma, 1.0 / grid.dxs, dt,
            len(u_grid), len(v_grid), lower, out,
        )
        new_vals = out.reshape(grid.shape)
    else:
        new_vals = hji_step_numpy(fld.values, drift, lrun, cfg.sigma, grid.dxs,
                                  dt, len(u_grid), len(v_grid), lower)
    if not np.all(np.isfinite(new_vals)):
        raise NumericFailure("non-finite value produced by the LF step")
    return fld.copy_at(fld.t - dt, new_vals)


@dataclass
class SolveResult:
    field: ValueField
    snapshots: list
    sigma: np.ndarray
    max_abs_terminal: float
    max_abs_running: float
    max_principle_slack: float
    comparison_theory_applies: bool

    def bound_at(self, t, horizon):
        return self.max_abs_terminal + (horizon - t) * self.max_abs_running + 1e-9


def suggest_steps(spec, grid, u_grid, v_grid, theta=0.9, t=0.0):
    """Smallest step count satisfying the CFL condition for this game and grid."""
    drift, _ = _control_tables(spec, grid, u_grid, v_grid, t)
    sigma = np.max(np.abs(drift), axis=(0, 2))
    load = float(np.sum(sigma / grid.dxs))
    return max(1, int(np.ceil(spec.horizon * load / theta)))


def solve(spec, grid, z_measure, kind, cfg: SchemeConfig,
          snapshot_times=(), u_grid=None, v_grid=None, t0=0.0,
          resolution=None) -> SolveResult:
    """March the terminal condition back to t0, keeping requested snapshots."""
    if u_grid is None or v_grid is None:
        res = 3 if resolution is None else resolution
        u_grid = gm.control_grid(spec.u_box, res) if u_grid is None else u_grid
        v_grid = gm.control_grid(spec.v_box, res) if v_grid is None else v_grid
    fld = terminal_field(spec, grid, z_measure, kind)
    drift, lrun = _control_tables(spec, grid, u_grid, v_grid, spec.horizon)
    cfg.sigma = np.max(np.abs(drift), axis=(0, 2))
    dt = cfg.check_cfl(spec.horizon - t0, grid)
    max_term = float(np.max(np.abs(fld.values)))
    max_run = float(np.max(np.abs(lrun)))
    tables = (drift, lrun) if not spec.time_dependent else None
    snaps = []
    wanted = sorted(snapshot_times, reverse=True)
    slack = 0.0

    def maybe_snap(f):
        while wanted and f.t <= wanted[0] + 0.5 * dt:
            snaps.append(ValueField(grid, f.t, f.values.copy(), kind, z_measure))
            wanted.pop(0)

    maybe_snap(fld)
    for step in range(cfg.time_steps):
        step_tables = tables
        if step_tables is None:
            step_tables = _control_tables(spec, grid, u_grid, v_grid, fld.t)
        fld = step_backward(fld, spec, u_grid, v_grid, cfg,
                            horizon_start=t0, tables=step_tables)
        # stamp from the step index; repeated subtraction drifts at roundoff
        fld.t = t0 + (spec.horizon - t0) * (cfg.time_steps - step - 1) / cfg.time_steps
        bound = max_term + (spec.horizon - fld.t) * max_run + 1e-9
        slack = max(slack, float(np.max(np.abs(fld.values))) - bound)
        maybe_snap(fld)
    return SolveResult(
        field=fld, snapshots=snaps, sigma=cfg.sigma,
        max_abs_terminal=max_term, max_abs_running=max_run,
        max_principle_slack=slack,
        comparison_theory_applies=not spec.time_dependent,
    )


def comparison_check(spec, grid, z_measure, kind, cfg, m_lo, m_hi,
                     u_grid=None, v_grid=None, resolution=None):
    """Solve twice with ordered terminal data; min nodewise gap over all steps.

    Order preservation of the monotone step should keep the gap >= -1e-12.
    """
    m_lo = m_lo if isinstance(m_lo, Expression) else parse_expression(m_lo)
    m_hi = m_hi if isinstance(m_hi, Expression) else parse_expression(m_hi)
    if u_grid is None:
        u_grid = gm.control_grid(spec.u_box, resolution or 3)
    if v_grid is None:
        v_grid = gm.control_grid(spec.v_box, resolution or 3)
    lo_vals = _terminal_values(spec, grid, z_measure, m_lo)
    hi_vals = _terminal_values(spec, grid, z_measure, m_hi)
    if np.min(hi_vals - lo_vals) < 0.0:
        raise gm.GameError("terminal ordering violated: m_lo > m_hi somewhere")
    drift, lrun = _control_tables(spec, grid, u_grid, v_grid, spec.horizon)
    sigma = np.max(np.abs(drift), axis=(0, 2))
    cfg_lo = SchemeConfig(cfg.time_steps, cfg.theta, sigma)
    cfg_hi = SchemeConfig(cfg.time_steps, cfg.theta, sigma)
    fld_lo = ValueField(grid, spec.horizon, lo_vals, kind, z_measure)
    fld_hi = ValueField(grid, spec.horizon, hi_vals, kind, z_measure)
    tables = (drift, lrun) if not spec.time_dependent else None
    min_gap = float(np.min(fld_hi.values - fld_lo.values))
    for _ in range(cfg.time_steps):
        step_tables = tables
        if step_tables is None:
            step_tables = _control_tables(spec, grid, u_grid, v_grid, fld_lo.t)
        fld_lo = step_backward(fld_lo, spec, u_grid, v_grid, cfg_lo, tables=step_tables)
        fld_hi = step_backward(fld_hi, spec, u_grid, v_grid, cfg_hi, tables=step_tables)
        min_gap = min(min_gap, float(np.min(fld_hi.values - fld_lo.values)))
    return min_gap


def write_surface_csv(path, snapshots):
    """CSV rows (t, x1..xd, value) for every snapshot node."""
    with open(path, "w") as fh:
        d = snapshots[0].grid.ndim
        fh.write("t," + ",".join("x%d" % (a + 1) for a in range(d)) + ",value\n")
        for snap in snapshots:
            nodes = snap.grid.nodes()
            vals = snap.values.ravel()
            for row in range(nodes.shape[0]):
                coords = ",".join("%.17g" % c for c in nodes[row])
                fh.write("%.17g,%s,%.17g\n" % (snap.t, coords, vals[row]))


def write_matrix(path, snapshots):
    """Gnuplot nonuniform-matrix file for 1-axis grids: rows are times."""
    grid = snapshots[0].grid
    if grid.ndim != 1:
        raise gm.GameError("matrix output needs a 1-axis grid")
    xs = grid.axis_points(0)
    with open(path, "w") as fh:
        fh.write("%d " % (len(xs) + 1))
        fh.write(" ".join("%.17g" % x for x in xs) + "\n")
        for snap in sorted(snapshots, key=lambda s: s.t):
            fh.write("%.17g " % snap.t)
            fh.write(" ".join("%.17g" % v for v in snap.values.ravel()) + "\n")
