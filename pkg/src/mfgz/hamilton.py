"""Lower/upper Hamiltonians over particle laws with exact grid extremization.

The lower Hamiltonian takes sup over the maximizer's grid of inf over the
minimizer's grid of the expected costate-weighted drift plus running cost;
the upper one swaps the order.  Ties resolve to the lowest grid index, inner
extremum first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import game as gm


class HamiltonianError(ValueError):
    pass


@dataclass
class HamiltonianEval:
    value: float
    arg_u: int
    arg_v: int
    kind: str


def as_costate(p, count, dim):
    """Normalize a costate to shape (N, n) aligned with a measure's atoms."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 0:
        p = np.full((count, dim), float(p))
    elif p.ndim == 1:
        if dim == 1 and p.shape[0] == count:
            p = p[:, None]
        elif p.shape[0] == dim and count == 1:
            p = p[None, :]
        else:
            raise HamiltonianError("costate length does not match atoms")
    if p.shape != (count, dim):
        raise HamiltonianError("costate must have shape (N, n)")
    return p


def _integrand_matrix(spec, t, nu_x, p, u_grid, v_grid):
    """A[iu, iv] = sum_i w_i (<p_i, f_i(u,v)> + l_i(u,v)) over the control grids."""
    if len(u_grid) == 0 or len(v_grid) == 0:
        raise HamiltonianError("control grids must be nonempty")
    atoms = nu_x.atoms
    w = nu_x.weights
    p = as_costate(p, nu_x.count, nu_x.dim)
    feats = gm._feature_env(spec, nu_x)
    ru, rv = len(u_grid), len(v_grid)
    coords = atoms[:, None, None, :]  # (N, 1, 1, n)
    env = {"t": t}
    env.update({"x%d" % (i + 1): coords[..., i] for i in range(spec.dim)})
    env.update(feats)
    env.update({"u%d" % (j + 1): u_grid[None, :, None, j] for j in range(u_grid.shape[1])})
    env.update({"v%d" % (j + 1): v_grid[None, None, :, j] for j in range(v_grid.shape[1])})
    total = np.zeros((nu_x.count, ru, rv))
    for c, f_expr in enumerate(spec.f_exprs):
        total += p[:, None, None, c] * np.broadcast_to(f_expr(**env), total.shape)
    total += np.broadcast_to(spec.l_expr(**env), total.shape)
    return np.tensordot(w, total, axes=(0, 0))


def _reduce(a_mat, kind):
    if kind == "lower":
        # sup_v inf_u; argmin/argmax take the first (lowest) index on ties
        iu_per_v = np.argmin(a_mat, axis=0)
        inner = a_mat[iu_per_v, np.arange(a_mat.shape[1])]
        iv = int(np.argmax(inner))
        return float(inner[iv]), int(iu_per_v[iv]), iv
    iv_per_u = np.argmax(a_mat, axis=1)
    inner = a_mat[np.arange(a_mat.shape[0]), iv_per_u]
    iu = int(np.argmin(inner))
    return float(inner[iu]), iu, int(iv_per_u[iu])


def hamiltonian_lower(spec, t, nu_x, p, u_grid, v_grid) -> HamiltonianEval:
    a_mat = _integrand_matrix(spec, t, nu_x, p, u_grid, v_grid)
    value, iu, iv = _reduce(a_mat, "lower")
    return HamiltonianEval(value, iu, iv, "lower")


def hamiltonian_upper(spec, t, nu_x, p, u_grid, v_grid) -> HamiltonianEval:
    a_mat = _integrand_matrix(spec, t, nu_x, p, u_grid, v_grid)
    value, iu, iv = _reduce(a_mat, "upper")
    return HamiltonianEval(value, iu, iv, "upper")


def lifted_hamiltonian(kind, spec, t, ensemble, p, u_grid, v_grid) -> HamiltonianEval:
    """Hamiltonian phrased as an expectation over the lifted ensemble.

    Assembled atom by atom (fixed order) and checked against the measure
    form, which it must match to 1e-12 on atomic laws.
    """
    if kind not in ("lower", "upper"):
        raise HamiltonianError("kind must be lower or upper")
    nu_x = ensemble.x_measure
    p = as_costate(p, nu_x.count, nu_x.dim)
    feats = gm._feature_env(spec, nu_x)
    ru, rv = len(u_grid), len(v_grid)
    a_mat = np.zeros((ru, rv))
    for i in range(nu_x.count):
        env = {"t": t}
        env.update({"x%d" % (c + 1): nu_x.atoms[i, c] for c in range(spec.dim)})
        env.update(feats)
        env.update({"u%d" % (j + 1): u_grid[:, None, j] for j in range(u_grid.shape[1])})
        env.update({"v%d" % (j + 1): v_grid[None, :, j] for j in range(v_grid.shape[1])})
        term = np.zeros((ru, rv))
        for c, f_expr in enumerate(spec.f_exprs):
            term += p[i, c] * np.broadcast_to(f_expr(**env), term.shape)
        term += np.broadcast_to(spec.l_expr(**env), term.shape)
        a_mat += nu_x.weights[i] * term
    value, iu, iv = _reduce(a_mat, kind)
    measure_form = _reduce(_integrand_matrix(spec, t, nu_x, p, u_grid, v_grid), kind)[0]
    if abs(value - measure_form) > 1e-12:
        raise HamiltonianError(
            "lifted and measure Hamiltonians disagree by %g" % abs(value - measure_form)
        )
    return HamiltonianEval(value, iu, iv, kind)


def isaacs_check(spec, samples, u_grid, v_grid):
    """Max |H+ - H-| over an iterable of (t, nu_x, p) samples."""
    gap = 0.0
    for t, nu_x, p in samples:
        a_mat = _integrand_matrix(spec, t, nu_x, p, u_grid, v_grid)
        lo = _reduce(a_mat, "lower")[0]
        hi = _reduce(a_mat, "upper")[0]
        gap = max(gap, abs(hi - lo))
    return gap
