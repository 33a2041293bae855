"""Weighted particle measures on R^n and exact Wasserstein transport.

Laws are always finite lists of weighted atoms.  Continuous laws enter only
through deterministic quantile-midpoint quantization.  The 1-d Wasserstein
distance is computed exactly by quantile matching; for n > 1 an exact
combinatorial/LP solve on the atom bipartite graph is used (never an
entropic approximation), size-capped at N*M <= 4096 atom pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.special import ndtri

PAIR_LIMIT = 4096


class MeasureError(ValueError):
    pass


class EmpiricalMeasure:
    """Probability law as weighted atoms: atoms (N, n), weights (N,) > 0."""

    __slots__ = ("atoms", "weights", "dim")

    def __init__(self, atoms, weights):
        atoms = np.atleast_1d(np.asarray(atoms, dtype=np.float64))
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if atoms.ndim != 2 or atoms.shape[0] < 1:
            raise MeasureError("atoms must be a nonempty (N, n) array")
        weights = np.asarray(weights, dtype=np.float64).ravel()
        if weights.shape[0] != atoms.shape[0]:
            raise MeasureError("weights length does not match atom count")
        if np.any(weights <= 0.0):
            raise MeasureError("every weight must be positive")
        if abs(float(np.sum(weights)) - 1.0) > 1e-12:
            raise MeasureError("weights must sum to 1 within 1e-12")
        if not np.all(np.isfinite(atoms)):
            raise MeasureError("atoms must be finite")
        self.atoms = atoms
        self.weights = weights
        self.dim = atoms.shape[1]

    @property
    def count(self):
        return self.atoms.shape[0]

    @classmethod
    def dirac(cls, point):
        point = np.atleast_1d(np.asarray(point, dtype=np.float64))
        return cls(point[None, :], np.ones(1))

    @classmethod
    def uniform_atoms(cls, atoms):
        atoms = np.asarray(atoms, dtype=np.float64)
        n = atoms.shape[0] if atoms.ndim > 0 else 1
        return cls(atoms, np.full(n, 1.0 / n))

    def with_atoms(self, atoms):
        return EmpiricalMeasure(atoms, self.weights.copy())

    def permuted(self, perm):
        perm = np.asarray(perm, dtype=np.intp)
        return EmpiricalMeasure(self.atoms[perm], self.weights[perm])

    def mean(self):
        m = self.weights @ self.atoms
        return float(m[0]) if self.dim == 1 else m

    def second_moment(self):
        return float(self.weights @ np.sum(self.atoms * self.atoms, axis=1))

    def mean_sin(self):
        if self.dim != 1:
            raise MeasureError("mean_sin requires dim == 1")
        return float(self.weights @ np.sin(self.atoms[:, 0]))

    def __repr__(self):
        return "EmpiricalMeasure(%d atoms, dim=%d)" % (self.count, self.dim)


FEATURES = {
    "mean": EmpiricalMeasure.mean,
    "second_moment": EmpiricalMeasure.second_moment,
    "mean_sin": EmpiricalMeasure.mean_sin,
}


def measure_feature(mu: EmpiricalMeasure, feature: str):
    """Weighted atom average of a registered feature (mean is vector for n>1)."""
    try:
        fn = FEATURES[feature]
    except KeyError:
        raise MeasureError("unsupported feature %r" % feature) from None
    return fn(mu)


@dataclass
class Coupling:
    """Transport plan between two atomic laws; marginals checked on build."""

    source: EmpiricalMeasure
    target: EmpiricalMeasure
    plan: np.ndarray

    def __post_init__(self):
        plan = np.asarray(self.plan, dtype=np.float64)
        if plan.shape != (self.source.count, self.target.count):
            raise MeasureError("plan shape does not match atom counts")
        if np.any(plan < -1e-12):
            raise MeasureError("plan has negative mass")
        if np.max(np.abs(plan.sum(axis=1) - self.source.weights)) > 1e-10:
            raise MeasureError("row sums do not match source weights")
        if np.max(np.abs(plan.sum(axis=0) - self.target.weights)) > 1e-10:
            raise MeasureError("column sums do not match target weights")
        self.plan = plan

    def cost(self, p=2):
        diff = self.source.atoms[:, None, :] - self.target.atoms[None, :, :]
        ground = np.sqrt(np.sum(diff * diff, axis=2))
        return float(np.sum(self.plan * ground**p))


@dataclass
class QuantizationSpec:
    """Analytic law to quantize: gaussian(mean, variance), dirac(point), uniform(lo, hi)."""

    family: str
    params: tuple
    atom_count: int = 1

    def __post_init__(self):
        if self.atom_count < 1:
            raise MeasureError("atom_count must be >= 1")
        if self.family == "gaussian":
            if len(self.params) != 2 or self.params[1] < 0:
                raise MeasureError("gaussian takes (mean, variance >= 0)")
        elif self.family == "uniform":
            if len(self.params) != 2 or self.params[0] > self.params[1]:
                raise MeasureError("uniform takes (lo, hi) with lo <= hi")
        elif self.family != "dirac":
            raise MeasureError("unknown family %r" % self.family)


def quantize(spec: QuantizationSpec) -> EmpiricalMeasure:
    """Deterministic N-atom quantization at quantile midpoints (i - 1/2)/N.

    Gaussian atoms are symmetrized explicitly so that the empirical mean of a
    centered law is exactly the requested mean.
    """
    n = spec.atom_count
    if spec.family == "dirac":
        point = np.atleast_1d(np.asarray(spec.params, dtype=np.float64))
        return EmpiricalMeasure(point[None, :], np.ones(1))
    qs = (np.arange(n) + 0.5) / n
    if spec.family == "gaussian":
        mean, var = spec.params
        z = np.empty(n)
        half = n // 2
        for i in range(half):
            hi = ndtri(qs[n - 1 - i])
            z[n - 1 - i] = hi
            z[i] = -hi
        if n % 2 == 1:
            z[half] = 0.0
        atoms = mean + np.sqrt(var) * z
    else:  # uniform
        lo, hi = spec.params
        atoms = lo + (hi - lo) * qs
    return EmpiricalMeasure(atoms, np.full(n, 1.0 / n))


def _merged_segments(x1, w1, x2, w2):
    """Monotone quantile alignment of two sorted weighted 1-d atom lists.

    Returns (idx1, idx2, seg) where seg[k] is the probability mass matched
    between atoms x1[idx1[k]] and x2[idx2[k]].
    """
    c1 = np.cumsum(w1)
    c2 = np.cumsum(w2)
    edges = np.union1d(c1, c2)
    edges = edges[edges <= 1.0 + 1e-12]
    edges[-1] = 1.0
    seg = np.diff(np.concatenate(([0.0], edges)))
    mids = np.concatenate(([0.0], edges))[:-1] + 0.5 * seg
    idx1 = np.minimum(np.searchsorted(c1, mids, side="right"), len(x1) - 1)
    idx2 = np.minimum(np.searchsorted(c2, mids, side="right"), len(x2) - 1)
    keep = seg > 0
    return idx1[keep], idx2[keep], seg[keep]


def _sorted_1d(mu):
    x = mu.atoms[:, 0]
    order = np.argsort(x, kind="stable")
    return x[order], mu.weights[order], order


def _wasserstein_1d(p, mu1, mu2):
    x1, w1, _ = _sorted_1d(mu1)
    x2, w2, _ = _sorted_1d(mu2)
    i1, i2, seg = _merged_segments(x1, w1, x2, w2)
    gaps = np.abs(x1[i1] - x2[i2])
    return float(np.sum(seg * gaps**p)) ** (1.0 / p)


def _uniform_equal(mu1, mu2):
    if mu1.count != mu2.count:
        return False
    w = mu1.weights
    return bool(np.all(w == w[0]) and np.all(mu2.weights == w[0]))


def _cost_matrix(mu1, mu2, p):
    diff = mu1.atoms[:, None, :] - mu2.atoms[None, :, :]
    ground = np.sqrt(np.sum(diff * diff, axis=2))
    return ground**p


def _transport_lp(mu1, mu2, p):
    """Exact transportation LP on the atom bipartite graph (HiGHS vertex solve)."""
    nr, nc = mu1.count, mu2.count
    cost = _cost_matrix(mu1, mu2, p)
    a_rows = []
    b = []
    for i in range(nr):
        row = np.zeros(nr * nc)
        row[i * nc : (i + 1) * nc] = 1.0
        a_rows.append(row)
        b.append(mu1.weights[i])
    for j in range(nc - 1):  # last column constraint is redundant
        col = np.zeros(nr * nc)
        col[j::nc] = 1.0
        a_rows.append(col)
        b.append(mu2.weights[j])
    res = linprog(
        cost.ravel(), A_eq=np.array(a_rows), b_eq=np.array(b),
        bounds=(0.0, None), method="highs",
    )
    if not res.success:
        raise MeasureError("transport LP failed: %s" % res.message)
    plan = np.maximum(res.x.reshape(nr, nc), 0.0)
    return plan, float(np.sum(plan * cost))


def _check_pair(mu1, mu2):
    if mu1.dim != mu2.dim:
        raise MeasureError("dimension mismatch: %d vs %d" % (mu1.dim, mu2.dim))
    if mu1.dim > 1 and mu1.count * mu2.count > PAIR_LIMIT:
        raise MeasureError(
            "atom pair count %d exceeds exact-transport limit %d; quantize coarser"
            % (mu1.count * mu2.count, PAIR_LIMIT)
        )


def wasserstein(p: int, mu1: EmpiricalMeasure, mu2: EmpiricalMeasure) -> float:
    """W_p(mu1, mu2) for p in {1, 2}; exact for atomic laws."""
    if p not in (1, 2):
        raise MeasureError("order p must be 1 or 2")
    _check_pair(mu1, mu2)
    if mu1.dim == 1:
        return _wasserstein_1d(p, mu1, mu2)
    if _uniform_equal(mu1, mu2):
        cost = _cost_matrix(mu1, mu2, p)
        rows, cols = linear_sum_assignment(cost)
        return float(np.sum(cost[rows, cols]) / mu1.count) ** (1.0 / p)
    _, total = _transport_lp(mu1, mu2, p)
    return float(total) ** (1.0 / p)


def optimal_coupling(mu1: EmpiricalMeasure, mu2: EmpiricalMeasure) -> Coupling:
    """A W_2-optimal transport plan; in 1-d the monotone quantile plan."""
    _check_pair(mu1, mu2)
    if mu1.dim == 1:
        x1, w1, o1 = _sorted_1d(mu1)
        x2, w2, o2 = _sorted_1d(mu2)
        i1, i2, seg = _merged_segments(x1, w1, x2, w2)
        plan = np.zeros((mu1.count, mu2.count))
        np.add.at(plan, (o1[i1], o2[i2]), seg)
        return Coupling(mu1, mu2, plan)
    if _uniform_equal(mu1, mu2):
        cost = _cost_matrix(mu1, mu2, 2)
        rows, cols = linear_sum_assignment(cost)
        plan = np.zeros_like(cost)
        plan[rows, cols] = mu1.weights[rows]
        return Coupling(mu1, mu2, plan)
    plan, _ = _transport_lp(mu1, mu2, 2)
    return Coupling(mu1, mu2, plan)
