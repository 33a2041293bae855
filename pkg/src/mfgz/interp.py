"""Multilinear interpolation on uniform lattices, numba and numpy paths.

Queries outside the stored lattice are hard errors (no extrapolation); the
error carries the worst excursion in units of the lattice spacing.
"""

from __future__ import annotations

import numpy as np

from .accel import NUMBA_ENABLED, njit


class GridExcursionError(RuntimeError):
    """A propagated configuration left the interpolation lattice."""

    def __init__(self, excursion, axis=None):
        self.excursion = excursion
        self.axis = axis
        where = "" if axis is None else " on axis %d" % axis
        super().__init__(
            "configuration leaves interpolation grid%s by %.6g spacings; "
            "the grid must be enlarged" % (where, excursion)
        )


_EDGE_TOL = 1e-9  # snap tolerance, in spacings, for queries at the lattice edge


def check_bounds(queries, lows, highs, dxs):
    """Raise GridExcursionError if any query leaves [lows, highs]."""
    over = (queries - highs) / dxs
    under = (lows - queries) / dxs
    worst = np.maximum(over, under)
    peak = float(worst.max(initial=0.0))
    if peak > _EDGE_TOL:
        axis = int(np.unravel_index(np.argmax(worst), worst.shape)[-1])
        raise GridExcursionError(peak, axis)


def multilinear_numpy(values, lows, dxs, shape, queries):
    """Interpolate ``values`` (ndarray of ``shape``) at ``queries`` (M, d)."""
    d = len(shape)
    rel = (queries - lows) / dxs
    base = np.floor(rel).astype(np.int64)
    np.clip(base, 0, np.asarray(shape) - 2, out=base)
    frac = rel - base
    np.clip(frac, 0.0, 1.0, out=frac)
    flat = values.ravel()
    strides = np.empty(d, dtype=np.int64)
    acc = 1
    for a in range(d - 1, -1, -1):
        strides[a] = acc
        acc *= shape[a]
    out = np.zeros(queries.shape[0])
    for corner in range(1 << d):
        idx = base.copy()
        weight = np.ones(queries.shape[0])
        for a in range(d):
            if corner >> a & 1:
                idx[:, a] += 1
                weight *= frac[:, a]
            else:
                weight *= 1.0 - frac[:, a]
        out += weight * flat[idx @ strides]
    return out


@njit(cache=True)
def _multilinear_nb(flat, lows, dxs, shape, strides, queries, out):
    m, d = queries.shape
    for row in range(m):
        base_flat = 0
        # gather corner offsets and fractions
        fr = np.empty(d)
        st = np.empty(d, dtype=np.int64)
        for a in range(d):
            rel = (queries[row, a] - lows[a]) / dxs[a]
            b = int(np.floor(rel))
            if b < 0:
                b = 0
            if b > shape[a] - 2:
                b = shape[a] - 2
            f = rel - b
            if f < 0.0:
                f = 0.0
            if f > 1.0:
                f = 1.0
            fr[a] = f
            st[a] = strides[a]
            base_flat += b * strides[a]
        total = 0.0
        for corner in range(1 << d):
            w = 1.0
            off = 0
            for a in range(d):
                if corner >> a & 1:
                    w *= fr[a]
                    off += st[a]
                else:
                    w *= 1.0 - fr[a]
            total += w * flat[base_flat + off]
        out[row] = total
    return out


def multilinear(values, lows, dxs, queries, check=True):
    """Backend-dispatched interpolation; bound-checks unless ``check=False``."""
    lows = np.asarray(lows, dtype=np.float64)
    dxs = np.asarray(dxs, dtype=np.float64)
    shape = np.asarray(values.shape, dtype=np.int64)
    queries = np.asarray(queries, dtype=np.float64)
    if check:
        highs = lows + dxs * (shape - 1)
        check_bounds(queries, lows, highs, dxs)
    if NUMBA_ENABLED:
        strides = np.empty(len(shape), dtype=np.int64)
        acc = 1
        for a in range(len(shape) - 1, -1, -1):
            strides[a] = acc
            acc *= shape[a]
        out = np.empty(queries.shape[0])
        return _multilinear_nb(values.ravel(), lows, dxs, shape, strides, queries, out)
    return multilinear_numpy(values, lows, dxs, tuple(values.shape), queries)
