"""Backward dynamic programming over time, controls and step strategies.

Two modes share the same step semantics:

* grid mode: the value lives on an interpolation lattice over particle
  configurations.  Only the forward-reachable tube of the evaluation
  ensemble is stored per time step (an index box per axis); every stored
  node's one-step image lands inside the next step's box by construction,
  and a configuration leaving the declared lattice is a hard error, never
  an extrapolation.
* exact particle-node mode: the recursion walks the reachable game tree of
  one configuration with no interpolation at all.  This is the mode the
  brute-force strategy-enumeration oracle must match bit for bit.

The lower value lets the minimizer react to the current step's opponent
control (sup over v of inf over u per step); the upper value mirrors it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from . import game as gm
from . import hji as hj
from .accel import NUMBA_ENABLED, backend_name
from .expr import split_control_separable
from .interp import GridExcursionError, multilinear

BRUTE_FORCE_CAP = 10**6
STRATEGY_CAP = 2 * 10**6


def _default_integrator():
    return dyn.IntegratorConfig("rk4", 1)


@dataclass
class DppConfig:
    steps: int
    r_u: int = 2
    r_v: int = 2
    grid: hj.SpatialGrid = None  # None selects exact particle-node mode
    integrator: dyn.IntegratorConfig = field(default_factory=_default_integrator)
    margin: float = 0.1

    def __post_init__(self):
        if self.steps < 1:
            raise gm.GameError("steps must be >= 1")
        if self.r_u < 1 or self.r_v < 1:
            raise gm.GameError("control resolutions must be >= 1")


@dataclass
class GameValueReport:
    lower: float = None
    upper: float = None
    lower_strategy: gm.DiscreteStrategy = None
    upper_strategy: gm.DiscreteStrategy = None
    diagnostics: dict = field(default_factory=dict)

    def ordered(self, tol=1e-12):
        if self.lower is None or self.upper is None:
            return True
        return self.lower <= self.upper + tol

    def to_text(self):
        lines = []
        for key in ("lower", "upper"):
            val = getattr(self, key)
            if val is not None:
                lines.append("%s_value = %.17g" % (key, val))
        for key in sorted(self.diagnostics):
            lines.append("%s = %s" % (key, self.diagnostics[key]))
        lines.append("ordered_lower_le_upper = %s" % self.ordered())
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# batched one-step propagation (numpy backend and strategy extraction)
# ---------------------------------------------------------------------------

def _rate_batch(spec, t, configs, u, v):
    feats = gm.batch_features(spec, configs)
    drift = gm.drift_batch(spec, t, configs, feats, u, v)
    lrate = np.mean(gm.running_batch(spec, t, configs, feats, u, v), axis=-1)
    return drift, lrate


def _substep_batch(spec, t, configs, u, v, h, scheme):
    if scheme == "euler":
        k1, c1 = _rate_batch(spec, t, configs, u, v)
        return configs + h * k1, h * c1
    k1, c1 = _rate_batch(spec, t, configs, u, v)
    k2, c2 = _rate_batch(spec, t + 0.5 * h, configs + 0.5 * h * k1, u, v)
    k3, c3 = _rate_batch(spec, t + 0.5 * h, configs + 0.5 * h * k2, u, v)
    k4, c4 = _rate_batch(spec, t + h, configs + h * k3, u, v)
    new = configs + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    return new, h * (c1 + 2.0 * c2 + 2.0 * c3 + c4) / 6.0


def advance_batch(spec, t, configs, u, v, tau, integrator):
    """Advance a batch of configurations one control step; returns (X, costs)."""
    h = tau / integrator.substeps
    cost = np.zeros(configs.shape[0])
    for j in range(integrator.substeps):
        configs, dc = _substep_batch(spec, t + j * h, configs, u, v, h,
                                     integrator.scheme)
        cost = cost + dc
    return configs, cost


# ---------------------------------------------------------------------------
# forward tube boxes
# ---------------------------------------------------------------------------

_TWO_PI = 2.0 * np.pi


def _sin_range(lo, hi):
    if hi - lo >= _TWO_PI:
        return -1.0, 1.0
    smin = min(np.sin(lo), np.sin(hi))
    smax = max(np.sin(lo), np.sin(hi))
    # peak at pi/2 + 2k*pi inside [lo, hi]?
    k_hi = np.floor((hi - 0.5 * np.pi) / _TWO_PI)
    if 0.5 * np.pi + k_hi * _TWO_PI >= lo:
        smax = 1.0
    k_lo = np.floor((hi + 0.5 * np.pi) / _TWO_PI)
    if -0.5 * np.pi + k_lo * _TWO_PI >= lo:
        smin = -1.0
    return smin, smax


def _sq_range(lo, hi):
    top = max(lo * lo, hi * hi)
    return (0.0, top) if lo <= 0.0 <= hi else (min(lo * lo, hi * hi), top)


def _feature_ranges(spec, box_lo, box_hi, n_atoms):
    """Exact intervals of the registered features over a per-axis box."""
    ranges = []
    for fv in spec.features_used:
        name = fv.split(":", 1)[1]
        if name == "mean":
            ranges.append((fv, (float(np.mean(box_lo)), float(np.mean(box_hi)))))
        elif name == "second_moment":
            if spec.dim == 1:
                pairs = [_sq_range(box_lo[a], box_hi[a]) for a in range(n_atoms)]
            else:
                comp = [_sq_range(box_lo[c], box_hi[c]) for c in range(spec.dim)]
                pairs = [(sum(p[0] for p in comp), sum(p[1] for p in comp))]
            ranges.append((fv, (float(np.mean([p[0] for p in pairs])),
                                float(np.mean([p[1] for p in pairs])))))
        else:
            pairs = [_sin_range(box_lo[a], box_hi[a]) for a in range(n_atoms)]
            ranges.append((fv, (float(np.mean([p[0] for p in pairs])),
                                float(np.mean([p[1] for p in pairs])))))
    return ranges


def _bounds_one_component(expr, coords_cols, feats, u_grid, v_grid, times):
    """Min/max of one drift component over samples x controls x times.

    coords_cols maps x-variable names to sample columns; control grids enter
    as broadcast axes, so each (feature combo, t) costs one evaluation.
    """
    lo, hi = np.inf, -np.inf
    env_base = {}
    for name, col in coords_cols.items():
        env_base[name] = col[:, None, None]
    for j in range(u_grid.shape[1]):
        env_base["u%d" % (j + 1)] = u_grid[None, :, None, j]
    for j in range(v_grid.shape[1]):
        env_base["v%d" % (j + 1)] = v_grid[None, None, :, j]
    for t in times:
        env = dict(env_base)
        env["t"] = t
        env.update(feats)
        vals = np.asarray(expr(**env), dtype=np.float64)
        lo = min(lo, float(vals.min()))
        hi = max(hi, float(vals.max()))
    return lo, hi


def _drift_bounds_box(spec, box_lo, box_hi, n_atoms, u_grid, v_grid, times):
    """Per-axis drift brackets over one step's box.

    Feature intervals are exact over the box; the x dependence is sampled
    densely per axis.  An overly tight bracket can only surface as a loud
    lattice-excursion error downstream, never as a wrong value.
    """
    n = spec.dim
    d = len(box_lo)
    feat_ranges = _feature_ranges(spec, box_lo, box_hi, n_atoms)
    combos = (list(itertools.product(*[rng for _, rng in feat_ranges]))
              if feat_ranges else [()])
    fmin = np.full(d, np.inf)
    fmax = np.full(d, -np.inf)
    for combo in combos:
        feats = {fv: val for (fv, _), val in zip(feat_ranges, combo)}
        if n == 1:
            for a in range(d):
                xs = np.linspace(box_lo[a], box_hi[a], 33)
                lo, hi = _bounds_one_component(
                    spec.f_exprs[0], {"x1": xs}, feats, u_grid, v_grid, times)
                fmin[a] = min(fmin[a], lo)
                fmax[a] = max(fmax[a], hi)
        else:
            per_axis = [np.linspace(box_lo[c], box_hi[c], 9) for c in range(n)]
            mesh = np.meshgrid(*per_axis, indexing="ij")
            cols = {"x%d" % (c + 1): mesh[c].ravel() for c in range(n)}
            for c in range(n):
                lo, hi = _bounds_one_component(
                    spec.f_exprs[c], cols, feats, u_grid, v_grid, times)
                fmin[c] = min(fmin[c], lo)
                fmax[c] = max(fmax[c], hi)
    return fmin, fmax


@dataclass
class _Tube:
    lo_idx: np.ndarray  # (S+1, d) inclusive lattice index boxes
    hi_idx: np.ndarray

    def cells(self):
        return int(np.sum(np.prod(self.hi_idx - self.lo_idx + 1, axis=1)))


def _build_tube(spec, grid, start_lo, start_hi, steps, tau, u_grid, v_grid,
                margin, t0=0.0):
    """Per-step index boxes covering the forward-reachable configurations.

    Each step's box is snapped to the lattice, then grown by that step's own
    per-axis drift brackets (the snapped nodes are the ones that propagate).
    """
    d = grid.ndim
    n = spec.dim
    n_atoms = d // n
    lo = np.asarray(start_lo, dtype=np.float64).copy()
    hi = np.asarray(start_hi, dtype=np.float64).copy()
    lo_idx = np.empty((steps + 1, d), dtype=np.int64)
    hi_idx = np.empty((steps + 1, d), dtype=np.int64)
    points = np.array(grid.shape, dtype=np.int64)
    for s in range(steps + 1):
        li = np.floor((lo - grid.lows) / grid.dxs + 1e-12).astype(np.int64)
        hi_ = np.ceil((hi - grid.lows) / grid.dxs - 1e-12).astype(np.int64)
        lo_idx[s] = np.clip(li, 0, points - 2)
        hi_idx[s] = np.clip(hi_, lo_idx[s] + 1, points - 1)
        if s == steps:
            break
        snapped_lo = grid.lows + lo_idx[s] * grid.dxs
        snapped_hi = grid.lows + hi_idx[s] * grid.dxs
        t_s = t0 + s * tau
        times = (t_s, t_s + 0.5 * tau, t_s + tau) if spec.time_dependent else (0.0,)
        fmin, fmax = _drift_bounds_box(spec, snapped_lo, snapped_hi, n_atoms,
                                       u_grid, v_grid, times)
        pad = margin * np.maximum(fmax - fmin, 0.5) + 1e-9
        lo = snapped_lo + tau * (fmin - pad)
        hi = snapped_hi + tau * (fmax + pad)
    return _Tube(lo_idx, hi_idx)


def suggest_grid(spec, ensemble, steps, r_u, r_v, dx, margin=0.1,
                 integrator=None) -> hj.SpatialGrid:
    """Lattice sized to hold the full dependency cone of one DP solve.

    The backward recursion's domain of dependence widens by one cell per
    step per side on top of the drift reach (interpolation needs both cell
    corners), so the lattice extent depends on the step count and spacing.
    """
    q0 = ensemble.x_measure.atoms.reshape(-1)
    n_atoms = ensemble.x_measure.count
    d = q0.shape[0]
    u_grid = gm.control_grid(spec.u_box, r_u)
    v_grid = gm.control_grid(spec.v_box, r_v)
    tau = spec.horizon / steps
    lo = q0 - 2.0 * dx
    hi = q0 + 2.0 * dx
    for s in range(steps):
        lo = np.floor(lo / dx + 1e-12) * dx
        hi = np.ceil(hi / dx - 1e-12) * dx
        t_s = s * tau
        times = (t_s, t_s + 0.5 * tau, t_s + tau) if spec.time_dependent else (0.0,)
        fmin, fmax = _drift_bounds_box(spec, lo, hi, n_atoms, u_grid, v_grid, times)
        pad = margin * np.maximum(fmax - fmin, 0.5) + 1e-9
        lo = lo + tau * (fmin - pad)
        hi = hi + tau * (fmax + pad)
    axes = []
    for a in range(d):
        a_lo = float(np.floor(lo[a] / dx) - 2) * dx
        a_hi = float(np.ceil(hi[a] / dx) + 2) * dx
        axes.append((a_lo, a_hi, int(round((a_hi - a_lo) / dx)) + 1))
    return hj.SpatialGrid(axes)


def _box_nodes(grid, lo_idx, hi_idx):
    axes = [grid.axis_points(a)[lo_idx[a]: hi_idx[a] + 1] for a in range(grid.ndim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)
    shape = tuple(int(hi_idx[a] - lo_idx[a] + 1) for a in range(grid.ndim))
    lows = np.array([axes[a][0] for a in range(grid.ndim)])
    return nodes, shape, lows


def _terminal_on_nodes(spec, nodes, n_atoms, z_measure):
    configs = nodes.reshape(nodes.shape[0], n_atoms, spec.dim)
    z_atoms = z_measure.atoms
    env = {}
    x = configs[:, :, None, :]
    z = z_atoms[None, None, :, :]
    env.update({"x%d" % (i + 1): x[..., i] for i in range(spec.dim)})
    env.update({"z%d" % (i + 1): z[..., i] for i in range(spec.dim)})
    vals = np.broadcast_to(
        np.asarray(spec.m_expr(**env), dtype=np.float64),
        (nodes.shape[0], n_atoms, z_atoms.shape[0]),
    )
    return np.mean(vals @ z_measure.weights, axis=1)


def _step_values_numpy(spec, nodes, n_atoms, next_vals, next_lows, dxs, t0, tau,
                       integrator, u_grid, v_grid, lower):
    configs0 = nodes.reshape(nodes.shape[0], n_atoms, spec.dim)
    ru, rv = len(u_grid), len(v_grid)
    outer = None
    outer_iter, inner_iter = (range(rv), range(ru)) if lower else (range(ru), range(rv))
    for oidx in outer_iter:
        inner = None
        for iidx in inner_iter:
            iu, iv = (iidx, oidx) if lower else (oidx, iidx)
            moved, cost = advance_batch(spec, t0, configs0, u_grid[iu], v_grid[iv],
                                        tau, integrator)
            cont = multilinear(next_vals, next_lows, dxs,
                               moved.reshape(nodes.shape[0], -1))
            qv = cost + cont
            if inner is None:
                inner = qv
            else:
                inner = np.minimum(inner, qv) if lower else np.maximum(inner, qv)
        if outer is None:
            outer = inner
        else:
            outer = np.maximum(outer, inner) if lower else np.minimum(outer, inner)
    return outer


def _grid_meta(next_vals):
    shape = np.asarray(next_vals.shape, dtype=np.int64)
    strides = np.empty(len(shape), dtype=np.int64)
    acc = 1
    for a in range(len(shape) - 1, -1, -1):
        strides[a] = acc
        acc *= shape[a]
    return shape, strides


def _eval_exprs_batch(exprs, dim, t, coords, feats):
    env = {"t": t}
    env.update({"x%d" % (i + 1): coords[..., i] for i in range(dim)})
    env.update(feats)
    parts = [np.broadcast_to(np.asarray(e(**env), dtype=np.float64),
                             coords.shape[:-1]) for e in exprs]
    return np.stack(parts, axis=-1)


class _SeparableTables:
    """Control tables for drift/cost that split as base(x) + cu(u) + cv(v)."""

    def __init__(self, spec, f_parts, l_parts, u_grid, v_grid, tau):
        from .kernels import PackedPrograms

        ru, rv = len(u_grid), len(v_grid)
        n = spec.dim
        du = np.zeros((n, ru))
        dv = np.zeros((n, rv))
        u_env = {"u%d" % (j + 1): u_grid[:, j] for j in range(u_grid.shape[1])}
        v_env = {"v%d" % (j + 1): v_grid[:, j] for j in range(v_grid.shape[1])}
        for c, (_, cu, cv) in enumerate(f_parts):
            du[c] = np.broadcast_to(np.asarray(cu(**u_env), dtype=np.float64), (ru,))
            dv[c] = np.broadcast_to(np.asarray(cv(**v_env), dtype=np.float64), (rv,))
        lu = np.broadcast_to(np.asarray(l_parts[1](**u_env), dtype=np.float64), (ru,))
        lv = np.broadcast_to(np.asarray(l_parts[2](**v_env), dtype=np.float64), (rv,))
        self.delta = np.empty((ru * rv, n))
        self.lshift = np.empty(ru * rv)
        for iu in range(ru):
            for iv in range(rv):
                pair = iu * rv + iv
                self.delta[pair] = tau * (du[:, iu] + dv[:, iv])
                self.lshift[pair] = lu[iu] + lv[iv]
        self.f_base = [p[0] for p in f_parts]
        self.l_base = l_parts[0]
        self.packed = PackedPrograms([e.program for e in self.f_base],
                                     self.l_base.program)
        self.ru = ru
        self.rv = rv


def _try_separable(spec, u_grid, v_grid, tau):
    f_parts = [split_control_separable(e) for e in spec.f_exprs]
    l_parts = split_control_separable(spec.l_expr)
    if l_parts is None or any(p is None for p in f_parts):
        return None
    return _SeparableTables(spec, f_parts, l_parts, u_grid, v_grid, tau)


def _step_values_numba(spec, nodes, n_atoms, next_vals, next_lows, dxs, t0, tau,
                       integrator, u_grid, v_grid, lower):
    from .kernels import dpp_step_nb, get_packed

    packed = get_packed(spec)
    shape, strides = _grid_meta(next_vals)
    out = np.empty(nodes.shape[0])
    err = np.zeros(3)
    dpp_step_nb(
        np.ascontiguousarray(nodes), n_atoms, spec.dim,
        next_vals.ravel(), np.asarray(next_lows), np.asarray(dxs), shape, strides,
        packed.f_ops, packed.f_args, packed.f_consts, packed.f_sem, packed.f_len,
        packed.l_ops, packed.l_args, packed.l_consts, packed.l_sem,
        np.ascontiguousarray(u_grid), np.ascontiguousarray(v_grid),
        t0, tau, integrator.substeps,
        1 if integrator.scheme == "euler" else 0, 1 if lower else 0,
        out, err,
    )
    if err[0] != 0.0:
        raise GridExcursionError(float(err[1]), int(err[2]))
    return out


def _step_values_sep_numba(spec, nodes, n_atoms, next_vals, next_lows, dxs,
                           t0, tau, sep, lower):
    from .kernels import dpp_step_sep_nb

    shape, strides = _grid_meta(next_vals)
    out = np.empty(nodes.shape[0])
    err = np.zeros(3)
    pk = sep.packed
    dpp_step_sep_nb(
        np.ascontiguousarray(nodes), n_atoms, spec.dim,
        next_vals.ravel(), np.asarray(next_lows), np.asarray(dxs), shape, strides,
        pk.f_ops, pk.f_args, pk.f_consts, pk.f_sem, pk.f_len,
        pk.l_ops, pk.l_args, pk.l_consts, pk.l_sem,
        sep.delta, sep.lshift, t0, tau, sep.ru, sep.rv,
        1 if lower else 0, out, err,
    )
    if err[0] != 0.0:
        raise GridExcursionError(float(err[1]), int(err[2]))
    return out


def _step_values_sep_numpy(spec, nodes, n_atoms, next_vals, next_lows, dxs,
                           t0, tau, sep, lower):
    configs = nodes.reshape(nodes.shape[0], n_atoms, spec.dim)
    feats = gm.batch_features(spec, configs)
    kbase = _eval_exprs_batch(sep.f_base, spec.dim, t0, configs, feats)
    qbase = configs + tau * kbase
    env = {"t": t0}
    env.update({"x%d" % (i + 1): configs[..., i] for i in range(spec.dim)})
    env.update(feats)
    lmean = np.mean(np.broadcast_to(
        np.asarray(sep.l_base(**env), dtype=np.float64), configs.shape[:-1]), axis=-1)
    outer = None
    outer_iter, inner_iter = ((range(sep.rv), range(sep.ru)) if lower
                              else (range(sep.ru), range(sep.rv)))
    for oidx in outer_iter:
        inner = None
        for iidx in inner_iter:
            iu, iv = (iidx, oidx) if lower else (oidx, iidx)
            pair = iu * sep.rv + iv
            moved = qbase + sep.delta[pair][None, None, :]
            cont = multilinear(next_vals, next_lows, dxs,
                               moved.reshape(nodes.shape[0], -1))
            qv = tau * (lmean + sep.lshift[pair]) + cont
            if inner is None:
                inner = qv
            else:
                inner = np.minimum(inner, qv) if lower else np.maximum(inner, qv)
        if outer is None:
            outer = inner
        else:
            outer = np.maximum(outer, inner) if lower else np.minimum(outer, inner)
    return outer


@dataclass
class _GridSolve:
    tube: _Tube
    fields: list      # per step: (values ndarray over the box, lows (d,))
    mesh: gm.TimeMesh
    value_at_start: float


def _dual_reduce_numpy(qv_by_pair, ru, rv, lower):
    outer = None
    outer_iter, inner_iter = (range(rv), range(ru)) if lower else (range(ru), range(rv))
    for oidx in outer_iter:
        inner = None
        for iidx in inner_iter:
            iu, iv = (iidx, oidx) if lower else (oidx, iidx)
            qv = qv_by_pair[iu * rv + iv]
            if inner is None:
                inner = qv
            else:
                inner = np.minimum(inner, qv) if lower else np.maximum(inner, qv)
        if outer is None:
            outer = inner
        else:
            outer = np.maximum(outer, inner) if lower else np.minimum(outer, inner)
    return outer


def _sort_queries_numpy(flat, wedge):
    """Canonical (sorted) coordinates of 1-d query configurations."""
    wedge_order, _ = wedge
    if wedge_order.shape[0] < 2:
        return flat
    out = np.empty_like(flat)
    out[:, wedge_order] = np.sort(flat, axis=1)
    return out


def _step_dual_numpy(spec, nodes, n_atoms, next_lo, next_up, next_lows, dxs,
                     t0, tau, cfg, sep, u_grid, v_grid, wedge):
    """Shared-propagation lower+upper step, numpy backend."""
    m = nodes.shape[0]
    configs0 = nodes.reshape(m, n_atoms, spec.dim)
    ru, rv = len(u_grid), len(v_grid)
    qv_lo = [None] * (ru * rv)
    qv_up = [None] * (ru * rv)
    if sep is not None:
        feats = gm.batch_features(spec, configs0)
        kbase = _eval_exprs_batch(sep.f_base, spec.dim, t0, configs0, feats)
        qbase = configs0 + tau * kbase
        env = {"t": t0}
        env.update({"x%d" % (i + 1): configs0[..., i] for i in range(spec.dim)})
        env.update(feats)
        lmean = np.mean(np.broadcast_to(
            np.asarray(sep.l_base(**env), dtype=np.float64),
            configs0.shape[:-1]), axis=-1)
    for iu in range(ru):
        for iv in range(rv):
            pair = iu * rv + iv
            if sep is not None:
                moved = qbase + sep.delta[pair][None, None, :]
                cost = tau * (lmean + sep.lshift[pair])
            else:
                moved, cost = advance_batch(spec, t0, configs0, u_grid[iu],
                                            v_grid[iv], tau, cfg.integrator)
            flat = _sort_queries_numpy(moved.reshape(m, -1), wedge)
            qv_lo[pair] = cost + multilinear(next_lo, next_lows, dxs, flat)
            qv_up[pair] = cost + multilinear(next_up, next_lows, dxs, flat)
    return (_dual_reduce_numpy(qv_lo, ru, rv, True),
            _dual_reduce_numpy(qv_up, ru, rv, False))


def _step_dual_numba(spec, nodes, n_atoms, next_lo, next_up, next_lows, dxs,
                     t0, tau, cfg, sep, u_grid, v_grid, wedge):
    from .kernels import dpp_step_dual_nb, dpp_step_sep_dual_nb, get_packed

    wedge_order, wedge_eps = wedge
    shape, strides = _grid_meta(next_lo)
    out_lo = np.empty(nodes.shape[0])
    out_up = np.empty(nodes.shape[0])
    err = np.zeros(3)
    nodes_c = np.ascontiguousarray(nodes)
    if sep is not None:
        pk = sep.packed
        dpp_step_sep_dual_nb(
            nodes_c, n_atoms, spec.dim,
            next_lo.ravel(), next_up.ravel(), np.asarray(next_lows),
            np.asarray(dxs), shape, strides,
            pk.f_ops, pk.f_args, pk.f_consts, pk.f_sem, pk.f_len,
            pk.l_ops, pk.l_args, pk.l_consts, pk.l_sem,
            sep.delta, sep.lshift, t0, tau, sep.ru, sep.rv,
            wedge_order, wedge_eps, out_lo, out_up, err,
        )
    else:
        pk = get_packed(spec)
        dpp_step_dual_nb(
            nodes_c, n_atoms, spec.dim,
            next_lo.ravel(), next_up.ravel(), np.asarray(next_lows),
            np.asarray(dxs), shape, strides,
            pk.f_ops, pk.f_args, pk.f_consts, pk.f_sem, pk.f_len,
            pk.l_ops, pk.l_args, pk.l_consts, pk.l_sem,
            np.ascontiguousarray(u_grid), np.ascontiguousarray(v_grid),
            t0, tau, cfg.integrator.substeps,
            1 if cfg.integrator.scheme == "euler" else 0,
            wedge_order, wedge_eps, out_lo, out_up, err,
        )
    if err[0] != 0.0:
        raise GridExcursionError(float(err[1]), int(err[2]))
    return out_lo, out_up


def _order_preservation_margin(spec, grid, u_grid, v_grid):
    """min over samples of the drift's explicit x-slope (1-d games).

    Atom ordering is preserved by the step map when 1 + tau * slope stays
    positive; feature terms shift every atom equally and cannot reorder.
    """
    lo = float(min(a[0] for a in grid.axes))
    hi = float(max(a[1] for a in grid.axes))
    xs = np.linspace(lo, hi, 257)
    feat_ranges = _feature_ranges(spec, np.full(grid.ndim, lo),
                                  np.full(grid.ndim, hi), grid.ndim)
    combos = (list(itertools.product(*[rng for _, rng in feat_ranges]))
              if feat_ranges else [()])
    slope_min = np.inf
    times = (0.0, 0.5 * spec.horizon, spec.horizon) if spec.time_dependent else (0.0,)
    for combo in combos:
        feats = {fv: val for (fv, _), val in zip(feat_ranges, combo)}
        env = {"x1": xs[:, None, None]}
        env.update(feats)
        for j in range(u_grid.shape[1]):
            env["u%d" % (j + 1)] = u_grid[None, :, None, j]
        for j in range(v_grid.shape[1]):
            env["v%d" % (j + 1)] = v_grid[None, None, :, j]
        for t in times:
            env_t = dict(env)
            env_t["t"] = t
            vals = np.broadcast_to(
                np.asarray(spec.f_exprs[0](**env_t), dtype=np.float64),
                (len(xs), len(u_grid), len(v_grid)))
            slopes = np.gradient(vals, xs, axis=0)
            slope_min = min(slope_min, float(slopes.min()))
    return slope_min


def _wedge_params(spec, grid, n_atoms, q0, u_grid, v_grid, tau):
    """Sorted-wedge restriction parameters, or an empty order when unsafe."""
    off = (np.zeros(0, dtype=np.int64), 0.0)
    if spec.dim != 1 or n_atoms < 2:
        return off
    slope_min = _order_preservation_margin(spec, grid, u_grid, v_grid)
    if 1.0 + tau * slope_min <= 0.2:
        return off
    order = np.argsort(q0, kind="stable").astype(np.int64)
    return order, 3.0 * float(grid.dxs.max())


def _solve_grid(spec, ensemble, cfg, kind, mesh=None, terminal=None,
                start_lo=None, start_hi=None):
    """Backward recursion on the lattice tube; returns stored per-step fields.

    ``terminal`` overrides the terminal values with a callable nodes->values,
    and ``start_lo``/``start_hi`` widen the tube's starting box (both used by
    the split-consistency check).
    """
    mu = ensemble.x_measure
    w = mu.weights
    if not np.all(w == w[0]):
        raise gm.GameError("grid mode needs uniform atom weights")
    n_atoms = mu.count
    if spec.dim > 1 and n_atoms > 1:
        raise gm.GameError("grid mode supports n > 1 only with one atom")
    grid = cfg.grid
    if grid.ndim != n_atoms * spec.dim:
        raise gm.GameError(
            "grid has %d axes but the lift needs %d" % (grid.ndim, n_atoms * spec.dim))
    if mesh is None:
        mesh = gm.TimeMesh(0.0, spec.horizon, cfg.steps)
    u_grid = gm.control_grid(spec.u_box, cfg.r_u)
    v_grid = gm.control_grid(spec.v_box, cfg.r_v)
    q0 = mu.atoms.reshape(-1)
    for a in range(grid.ndim):
        if q0[a] < grid.lows[a] or q0[a] > grid.highs[a]:
            raise GridExcursionError(
                float(max(grid.lows[a] - q0[a], q0[a] - grid.highs[a]) / grid.dxs[a]), a)
    if start_lo is None:
        start_lo = q0 - 2.0 * grid.dxs
        start_hi = q0 + 2.0 * grid.dxs
    tube = _build_tube(spec, grid, start_lo, start_hi, mesh.steps, mesh.tau,
                       u_grid, v_grid, cfg.margin)
    times = mesh.times()
    steps = mesh.steps
    fields = [None] * (steps + 1)
    nodes, shape, lows = _box_nodes(grid, tube.lo_idx[steps], tube.hi_idx[steps])
    if terminal is None:
        vals = _terminal_on_nodes(spec, nodes, n_atoms, ensemble.z_measure)
    else:
        vals = terminal(nodes)
    fields[steps] = (vals.reshape(shape), lows)
    lower = kind == "lower"
    sep = None
    if cfg.integrator.scheme == "euler" and cfg.integrator.substeps == 1:
        sep = _try_separable(spec, u_grid, v_grid, mesh.tau)
    for s in range(steps - 1, -1, -1):
        nodes, shape, lows = _box_nodes(grid, tube.lo_idx[s], tube.hi_idx[s])
        next_vals, next_lows = fields[s + 1]
        if sep is not None:
            stepper = _step_values_sep_numba if NUMBA_ENABLED else _step_values_sep_numpy
            vals = stepper(spec, nodes, n_atoms, next_vals, next_lows, grid.dxs,
                           times[s], mesh.tau, sep, lower)
        else:
            stepper = _step_values_numba if NUMBA_ENABLED else _step_values_numpy
            vals = stepper(spec, nodes, n_atoms, next_vals, next_lows, grid.dxs,
                           times[s], mesh.tau, cfg.integrator, u_grid, v_grid, lower)
        if not np.all(np.isfinite(vals)):
            raise hj.NumericFailure("non-finite value in DP recursion")
        fields[s] = (vals.reshape(shape), lows)
    v0, lows0 = fields[0]
    value = float(multilinear(v0, lows0, grid.dxs, q0[None, :])[0])
    return _GridSolve(tube, fields, mesh, value)


def _solve_grid_dual(spec, ensemble, cfg):
    """Lower and upper recursions marched together on one tube.

    The propagation per (node, control pair) is kind-independent, so fusing
    the two solves shares it; reductions and continuation fields stay fully
    separate per kind.
    """
    mu = ensemble.x_measure
    w = mu.weights
    if not np.all(w == w[0]):
        raise gm.GameError("grid mode needs uniform atom weights")
    n_atoms = mu.count
    if spec.dim > 1 and n_atoms > 1:
        raise gm.GameError("grid mode supports n > 1 only with one atom")
    grid = cfg.grid
    if grid.ndim != n_atoms * spec.dim:
        raise gm.GameError(
            "grid has %d axes but the lift needs %d" % (grid.ndim, n_atoms * spec.dim))
    mesh = gm.TimeMesh(0.0, spec.horizon, cfg.steps)
    u_grid = gm.control_grid(spec.u_box, cfg.r_u)
    v_grid = gm.control_grid(spec.v_box, cfg.r_v)
    q0 = mu.atoms.reshape(-1)
    for a in range(grid.ndim):
        if q0[a] < grid.lows[a] or q0[a] > grid.highs[a]:
            raise GridExcursionError(
                float(max(grid.lows[a] - q0[a], q0[a] - grid.highs[a]) / grid.dxs[a]), a)
    tube = _build_tube(spec, grid, q0 - 2.0 * grid.dxs, q0 + 2.0 * grid.dxs,
                       mesh.steps, mesh.tau, u_grid, v_grid, cfg.margin)
    times = mesh.times()
    steps = mesh.steps
    fields_lo = [None] * (steps + 1)
    fields_up = [None] * (steps + 1)
    nodes, shape, lows = _box_nodes(grid, tube.lo_idx[steps], tube.hi_idx[steps])
    vals = _terminal_on_nodes(spec, nodes, n_atoms, ensemble.z_measure)
    fields_lo[steps] = (vals.reshape(shape), lows)
    fields_up[steps] = (vals.reshape(shape).copy(), lows)
    sep = None
    if cfg.integrator.scheme == "euler" and cfg.integrator.substeps == 1:
        sep = _try_separable(spec, u_grid, v_grid, mesh.tau)
    wedge = _wedge_params(spec, grid, n_atoms, q0, u_grid, v_grid, mesh.tau)
    for s in range(steps - 1, -1, -1):
        nodes, shape, lows = _box_nodes(grid, tube.lo_idx[s], tube.hi_idx[s])
        next_lo, next_lows = fields_lo[s + 1]
        next_up, _ = fields_up[s + 1]
        if NUMBA_ENABLED:
            out_lo, out_up = _step_dual_numba(
                spec, nodes, n_atoms, next_lo, next_up, next_lows, grid.dxs,
                times[s], mesh.tau, cfg, sep, u_grid, v_grid, wedge)
        else:
            out_lo, out_up = _step_dual_numpy(
                spec, nodes, n_atoms, next_lo, next_up, next_lows, grid.dxs,
                times[s], mesh.tau, cfg, sep, u_grid, v_grid, wedge)
        if not (np.all(np.isfinite(out_lo)) and np.all(np.isfinite(out_up))):
            raise hj.NumericFailure("non-finite value in DP recursion")
        fields_lo[s] = (out_lo.reshape(shape), lows)
        fields_up[s] = (out_up.reshape(shape), lows)
    v_lo, lows0 = fields_lo[0]
    v_up, _ = fields_up[0]
    return (
        _GridSolve(tube, fields_lo, mesh,
                   float(multilinear(v_lo, lows0, grid.dxs, q0[None, :])[0])),
        _GridSolve(tube, fields_up, mesh,
                   float(multilinear(v_up, lows0, grid.dxs, q0[None, :])[0])),
    )


def _extract_strategy_grid(spec, ensemble, cfg, kind, solved: _GridSolve):
    """Realized per-step reaction tables along the equilibrium path."""
    mesh = solved.mesh
    times = mesh.times()
    u_grid = gm.control_grid(spec.u_box, cfg.r_u)
    v_grid = gm.control_grid(spec.v_box, cfg.r_v)
    side = "player1_alpha" if kind == "lower" else "player2_beta"
    strat = gm.DiscreteStrategy(mesh, side)
    config = ensemble.x_measure.atoms.copy()[None, :, :]
    grid = cfg.grid
    wedge = _wedge_params(spec, grid, ensemble.x_measure.count,
                          ensemble.x_measure.atoms.reshape(-1),
                          u_grid, v_grid, mesh.tau)
    for s in range(mesh.steps):
        next_vals, next_lows = solved.fields[s + 1]
        a_mat = np.empty((len(u_grid), len(v_grid)))
        for iu in range(len(u_grid)):
            for iv in range(len(v_grid)):
                moved, cost = advance_batch(spec, times[s], config, u_grid[iu],
                                            v_grid[iv], mesh.tau, cfg.integrator)
                flat = _sort_queries_numpy(moved.reshape(1, -1), wedge)
                cont = multilinear(next_vals, next_lows, grid.dxs, flat)
                a_mat[iu, iv] = cost[0] + cont[0]
        if kind == "lower":
            table = np.argmin(a_mat, axis=0)
            inner = a_mat[table, np.arange(a_mat.shape[1])]
            pick_v = int(np.argmax(inner))
            pick_u = int(table[pick_v])
        else:
            table = np.argmax(a_mat, axis=1)
            inner = a_mat[np.arange(a_mat.shape[0]), table]
            pick_u = int(np.argmin(inner))
            pick_v = int(table[pick_u])
        strat.tables.append(table)
        config, _ = advance_batch(spec, times[s], config, u_grid[pick_u],
                                  v_grid[pick_v], mesh.tau, cfg.integrator)
    return strat


# ---------------------------------------------------------------------------
# exact particle-node mode
# ---------------------------------------------------------------------------

def _check_cap(cfg):
    if (cfg.r_u * cfg.r_v) ** cfg.steps > BRUTE_FORCE_CAP:
        raise gm.GameError(
            "instance too large for exact enumeration: (r_u*r_v)^steps > %d"
            % BRUTE_FORCE_CAP)


def _exact_value(spec, ensemble, cfg, kind, mesh, terminal_fn=None):
    """Tree recursion over reachable configurations, no interpolation."""
    u_grid = gm.control_grid(spec.u_box, cfg.r_u)
    v_grid = gm.control_grid(spec.v_box, cfg.r_v)
    w = ensemble.x_measure.weights
    times = mesh.times()
    lower = kind == "lower"

    def recurse(step, atoms):
        if step == mesh.steps:
            if terminal_fn is not None:
                return terminal_fn(atoms)
            return gm.eval_terminal_cost(spec, ensemble, atoms)
        a_mat = np.empty((len(u_grid), len(v_grid)))
        for iu in range(len(u_grid)):
            for iv in range(len(v_grid)):
                moved, cost = dyn.advance_step(
                    spec, times[step], atoms, w, u_grid[iu], v_grid[iv],
                    mesh.tau, cfg.integrator)
                a_mat[iu, iv] = cost + recurse(step + 1, moved)
        if lower:
            inner = a_mat[np.argmin(a_mat, axis=0), np.arange(a_mat.shape[1])]
            return float(inner[np.argmax(inner)])
        inner = a_mat[np.arange(a_mat.shape[0]), np.argmax(a_mat, axis=1)]
        return float(inner[np.argmin(inner)])

    return recurse(0, ensemble.x_measure.atoms.copy())


def _exact_q_matrix(spec, ensemble, cfg, kind, mesh, step, atoms, u_grid, v_grid):
    """Q values over the control pairs at one tree node, continuations exact."""
    w = ensemble.x_measure.weights
    times = mesh.times()
    a_mat = np.empty((len(u_grid), len(v_grid)))
    for iu in range(len(u_grid)):
        for iv in range(len(v_grid)):
            moved, cost = dyn.advance_step(spec, times[step], atoms, w,
                                           u_grid[iu], v_grid[iv], mesh.tau,
                                           cfg.integrator)
            a_mat[iu, iv] = cost + _exact_tail(spec, ensemble, cfg, kind, mesh,
                                               step + 1, moved, u_grid, v_grid)
    return a_mat


def _exact_tail(spec, ensemble, cfg, kind, mesh, step, atoms, u_grid, v_grid):
    if step == mesh.steps:
        return gm.eval_terminal_cost(spec, ensemble, atoms)
    a_mat = _exact_q_matrix(spec, ensemble, cfg, kind, mesh, step, atoms,
                            u_grid, v_grid)
    if kind == "lower":
        inner = a_mat[np.argmin(a_mat, axis=0), np.arange(a_mat.shape[1])]
        return float(inner[np.argmax(inner)])
    inner = a_mat[np.arange(a_mat.shape[0]), np.argmax(a_mat, axis=1)]
    return float(inner[np.argmin(inner)])


def _extract_strategy_exact(spec, ensemble, cfg, kind, mesh):
    u_grid = gm.control_grid(spec.u_box, cfg.r_u)
    v_grid = gm.control_grid(spec.v_box, cfg.r_v)
    w = ensemble.x_measure.weights
    times = mesh.times()
    side = "player1_alpha" if kind == "lower" else "player2_beta"
    strat = gm.DiscreteStrategy(mesh, side)
    atoms = ensemble.x_measure.atoms.copy()
    for s in range(mesh.steps):
        a_mat = _exact_q_matrix(spec, ensemble, cfg, kind, mesh, s, atoms,
                                u_grid, v_grid)
        if kind == "lower":
            table = np.argmin(a_mat, axis=0)
            inner = a_mat[table, np.arange(a_mat.shape[1])]
            pick_v = int(np.argmax(inner))
            pick_u = int(table[pick_v])
        else:
            table = np.argmax(a_mat, axis=1)
            inner = a_mat[np.arange(a_mat.shape[0]), table]
            pick_u = int(np.argmin(inner))
            pick_v = int(table[pick_u])
        strat.tables.append(table)
        atoms, _ = dyn.advance_step(spec, times[s], atoms, w, u_grid[pick_u],
                                    v_grid[pick_v], mesh.tau, cfg.integrator)
    return strat


def dpp_value(spec, ensemble, cfg: DppConfig, kind=None,
              with_strategies=False) -> GameValueReport:
    """Lower/upper discretized game value; ``kind`` None computes both."""
    kinds = ("lower", "upper") if kind is None else (kind,)
    report = GameValueReport()
    report.diagnostics["backend"] = backend_name()
    report.diagnostics["steps"] = cfg.steps
    report.diagnostics["r_u"] = cfg.r_u
    report.diagnostics["r_v"] = cfg.r_v
    report.diagnostics["mode"] = "grid" if cfg.grid is not None else "exact-node"
    mesh = gm.TimeMesh(0.0, spec.horizon, cfg.steps)
    if kind is None and cfg.grid is not None:
        solved_lo, solved_up = _solve_grid_dual(spec, ensemble, cfg)
        report.lower = solved_lo.value_at_start
        report.upper = solved_up.value_at_start
        report.diagnostics["tube_cells"] = solved_lo.tube.cells()
        if with_strategies:
            report.lower_strategy = _extract_strategy_grid(
                spec, ensemble, cfg, "lower", solved_lo)
            report.upper_strategy = _extract_strategy_grid(
                spec, ensemble, cfg, "upper", solved_up)
        report.diagnostics["isaacs_gap"] = abs(report.upper - report.lower)
        return report
    for k in kinds:
        if cfg.grid is not None:
            solved = _solve_grid(spec, ensemble, cfg, k)
            setattr(report, k, solved.value_at_start)
            report.diagnostics.setdefault("tube_cells", solved.tube.cells())
            if with_strategies:
                strat = _extract_strategy_grid(spec, ensemble, cfg, k, solved)
                setattr(report, k + "_strategy", strat)
        else:
            _check_cap(cfg)
            value = _exact_value(spec, ensemble, cfg, k, mesh)
            setattr(report, k, value)
            if with_strategies:
                strat = _extract_strategy_exact(spec, ensemble, cfg, k, mesh)
                setattr(report, k + "_strategy", strat)
    if report.lower is not None and report.upper is not None:
        report.diagnostics["isaacs_gap"] = abs(report.upper - report.lower)
    return report


# ---------------------------------------------------------------------------
# brute-force oracle: explicit nonanticipative path maps
# ---------------------------------------------------------------------------

def _path_costs(spec, ensemble, cfg, mesh):
    """Cost of every (u-path, v-path) pair, folded terminal-first.

    Returns an array C[u_flat, v_flat] with mixed-radix path indices.
    """
    u_grid = gm.control_grid(spec.u_box, cfg.r_u)
    v_grid = gm.control_grid(spec.v_box, cfg.r_v)
    w = ensemble.x_measure.weights
    times = mesh.times()
    s_total = mesh.steps
    n_u, n_v = len(u_grid) ** s_total, len(v_grid) ** s_total
    costs = np.empty((n_u, n_v))
    for ui, upath in enumerate(itertools.product(range(len(u_grid)), repeat=s_total)):
        for vi, vpath in enumerate(itertools.product(range(len(v_grid)), repeat=s_total)):
            atoms = ensemble.x_measure.atoms.copy()
            step_costs = []
            for s in range(s_total):
                atoms, c = dyn.advance_step(spec, times[s], atoms, w,
                                            u_grid[upath[s]], v_grid[vpath[s]],
                                            mesh.tau, cfg.integrator)
                step_costs.append(c)
            total = gm.eval_terminal_cost(spec, ensemble, atoms)
            for c in reversed(step_costs):
                total = c + total
            costs[ui, vi] = total
    return costs


def _enumerate_maps_value(costs, r_own, r_opp, steps, minimize):
    """Extremum over all nonanticipative maps opponent-path -> own-path.

    The own control at step s may depend on the opponent's controls at steps
    0..s.  Maps are enumerated explicitly; for each one the opponent plays
    the worst full path.
    """
    opp_paths = list(itertools.product(range(r_opp), repeat=steps))
    # offsets of each level's prefix block inside the flat assignment vector
    offsets = []
    total = 0
    for s in range(steps):
        offsets.append(total)
        total += r_opp ** (s + 1)
    if r_own ** total > STRATEGY_CAP:
        raise gm.GameError("strategy enumeration too large: %d^%d maps"
                           % (r_own, total))
    prefix_index = []
    for path in opp_paths:
        per_level = []
        for s in range(steps):
            idx = 0
            for j in range(s + 1):
                idx = idx * r_opp + path[j]
            per_level.append(offsets[s] + idx)
        prefix_index.append(per_level)
    own_radix = [r_own ** (steps - 1 - s) for s in range(steps)]
    best = None
    for assignment in itertools.product(range(r_own), repeat=total):
        worst = None
        for pi, path in enumerate(opp_paths):
            own_flat = 0
            for s in range(steps):
                own_flat += assignment[prefix_index[pi][s]] * own_radix[s]
            val = costs[own_flat, pi] if minimize else costs[pi, own_flat]
            if worst is None:
                worst = val
            elif minimize and val > worst:
                worst = val
            elif not minimize and val < worst:
                worst = val
        if best is None:
            best = worst
        elif minimize and worst < best:
            best = worst
        elif not minimize and worst > best:
            best = worst
    return float(best)


def brute_force_value(spec, ensemble, cfg: DppConfig, kind) -> float:
    """Exact discretized value by full enumeration of strategy maps and paths."""
    _check_cap(cfg)
    mesh = gm.TimeMesh(0.0, spec.horizon, cfg.steps)
    costs = _path_costs(spec, ensemble, cfg, mesh)
    if kind == "lower":
        return _enumerate_maps_value(costs, cfg.r_u, cfg.r_v, cfg.steps, minimize=True)
    if kind == "upper":
        return _enumerate_maps_value(costs, cfg.r_v, cfg.r_u, cfg.steps, minimize=False)
    raise gm.GameError("kind must be lower or upper")


# ---------------------------------------------------------------------------
# split consistency and cross-route validation
# ---------------------------------------------------------------------------

def dpp_residual(spec, ensemble, cfg: DppConfig, kind, r) -> float:
    """|direct value - value recomputed through a split at mesh time r|."""
    mesh = gm.TimeMesh(0.0, spec.horizon, cfg.steps)
    j = mesh.index_of(r)
    if j <= 0 or j >= mesh.steps:
        raise gm.GameError("split time must be interior to the mesh")
    if cfg.grid is not None:
        grid = cfg.grid
        direct_solve = _solve_grid(spec, ensemble, cfg, kind)
        direct = direct_solve.value_at_start
        # tail on [r, T] must cover the head tube's box at the split time
        head_cfg = DppConfig(j, cfg.r_u, cfg.r_v, grid, cfg.integrator, cfg.margin)
        head_mesh = gm.TimeMesh(0.0, r, j)
        split_lo = grid.lows + (direct_solve.tube.lo_idx[j] - 2) * grid.dxs
        split_hi = grid.lows + (direct_solve.tube.hi_idx[j] + 2) * grid.dxs
        tail_cfg = DppConfig(cfg.steps - j, cfg.r_u, cfg.r_v, grid,
                             cfg.integrator, cfg.margin)
        tail_mesh = gm.TimeMesh(r, spec.horizon, cfg.steps - j)
        tail = _solve_grid(spec, ensemble, tail_cfg, kind, mesh=tail_mesh,
                           start_lo=split_lo, start_hi=split_hi)
        tail_vals, tail_lows = tail.fields[0]

        def continue_terminal(nodes):
            return multilinear(tail_vals, tail_lows, grid.dxs, nodes)

        head = _solve_grid(spec, ensemble, head_cfg, kind, mesh=head_mesh,
                           terminal=continue_terminal)
        return abs(direct - head.value_at_start)
    _check_cap(cfg)
    direct = _exact_value(spec, ensemble, cfg, kind, mesh)
    tail_mesh = gm.TimeMesh(r, spec.horizon, cfg.steps - j)
    tail_cfg = DppConfig(cfg.steps - j, cfg.r_u, cfg.r_v, None, cfg.integrator)

    def tail_value(atoms):
        return _exact_value(
            spec,
            gm.TargetedEnsemble(ensemble.x_measure.with_atoms(atoms),
                                ensemble.z_measure),
            tail_cfg, kind, tail_mesh)

    head_mesh = gm.TimeMesh(0.0, r, j)
    head_cfg = DppConfig(j, cfg.r_u, cfg.r_v, None, cfg.integrator)
    through = _exact_value(spec, ensemble, head_cfg, kind, head_mesh,
                           terminal_fn=tail_value)
    return abs(direct - through)


@dataclass
class CrossRouteReport:
    dpp_value: float
    hji_value: float
    discrepancy: float
    dpp_params: dict
    hji_params: dict


def cross_validate_vs_hji(spec, ensemble, kind, cfg: DppConfig, grid,
                          scheme: hj.SchemeConfig, resolution=3) -> CrossRouteReport:
    """Same value via backward DP and via the LF PDE solve, reported together."""
    report = dpp_value(spec, ensemble, cfg, kind)
    u_grid = gm.control_grid(spec.u_box, resolution)
    v_grid = gm.control_grid(spec.v_box, resolution)
    result = hj.solve(spec, grid, ensemble.z_measure, kind, scheme,
                      u_grid=u_grid, v_grid=v_grid)
    q0 = ensemble.x_measure.atoms.reshape(1, -1)
    hji_val = float(multilinear(result.field.values, grid.lows, grid.dxs, q0)[0])
    dpp_val = getattr(report, kind)
    return CrossRouteReport(
        dpp_value=dpp_val,
        hji_value=hji_val,
        discrepancy=abs(dpp_val - hji_val),
        dpp_params={"steps": cfg.steps, "r_u": cfg.r_u, "r_v": cfg.r_v,
                    "grid": None if cfg.grid is None else cfg.grid.axes},
        hji_params={"steps": scheme.time_steps, "grid": grid.axes,
                    "resolution": resolution},
    )
