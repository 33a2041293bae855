"""Derivatives of measure functionals on particle representations.

A functional of a law lifts to a function of the atom coordinates; for
uniform weights the coordinate gradient of the N-particle lift equals 1/N
times the measure derivative evaluated at the atom.  That scaling identity
is what the finite-difference check below pins down, and it is the one
convention the grid HJI solver relies on.
"""

from __future__ import annotations

import numpy as np

from . import dynamics as dyn
from .expr import Expression, parse_expression
from .measures import EmpiricalMeasure


class CalculusError(ValueError):
    pass


class MeasureFunctional:
    """Registered functional with a closed-form measure derivative.

    kinds: mean_power(k) for k in {1, 2} (mean and squared mean),
    expectation_of(phi) for a 1-d expression phi(x1).
    """

    def __init__(self, kind, power=None, phi=None):
        if kind == "mean_power":
            if power not in (1, 2):
                raise CalculusError("mean_power supports k in {1, 2}")
            self.power = power
        elif kind == "expectation_of":
            if phi is None:
                raise CalculusError("expectation_of needs an expression")
            self.phi = phi if isinstance(phi, Expression) else parse_expression(phi)
            if not self.phi.variables <= {"x1"}:
                raise CalculusError("expectation_of expression may only use x1")
            self.phi_prime = self.phi.derivative("x1")
        else:
            raise CalculusError("unknown functional kind %r" % kind)
        self.kind = kind
        self.closed_form_derivative = True

    @classmethod
    def mean(cls):
        return cls("mean_power", power=1)

    @classmethod
    def squared_mean(cls):
        return cls("mean_power", power=2)

    @classmethod
    def expectation_of(cls, phi):
        return cls("expectation_of", phi=phi)

    def label(self):
        if self.kind == "mean_power":
            return "mean" if self.power == 1 else "squared_mean"
        return "E[%s]" % self.phi.source


def _require_1d(mu):
    if mu.dim != 1:
        raise CalculusError("registered functionals are 1-d")
    return mu.atoms[:, 0]


def lifted_value(fun: MeasureFunctional, mu: EmpiricalMeasure) -> float:
    x = _require_1d(mu)
    if fun.kind == "mean_power":
        return float(mu.weights @ x) ** fun.power
    return float(mu.weights @ fun.phi(x1=x))


def lifted_gradient(fun: MeasureFunctional, mu: EmpiricalMeasure) -> np.ndarray:
    """Measure derivative evaluated at every atom, shape (N, 1)."""
    x = _require_1d(mu)
    if fun.kind == "mean_power":
        if fun.power == 1:
            g = np.ones_like(x)
        else:
            g = np.full_like(x, 2.0 * float(mu.weights @ x))
    else:
        g = np.broadcast_to(np.asarray(fun.phi_prime(x1=x), dtype=np.float64), x.shape).copy()
    return g[:, None]


def gradient_fd_check(fun, mu, h) -> float:
    """Max relative error of the 1/N lift identity against central differences.

    Only for uniform weights, where D_{x_i} of the N-particle lift equals
    (1/N) times the measure gradient at atom i.
    """
    if h <= 0:
        raise CalculusError("step h must be positive")
    w = mu.weights
    if not np.all(w == w[0]):
        raise CalculusError("fd check requires uniform weights")
    n = mu.count
    grad = lifted_gradient(fun, mu)[:, 0]
    worst = 0.0
    atoms = mu.atoms.copy()
    for i in range(n):
        hi = atoms.copy()
        hi[i, 0] += h
        lo = atoms.copy()
        lo[i, 0] -= h
        fd = (lifted_value(fun, mu.with_atoms(hi)) - lifted_value(fun, mu.with_atoms(lo))) / (2 * h)
        target = grad[i] / n
        err = abs(fd - target) / (abs(grad[i]) / n + 1e-12)
        worst = max(worst, err)
    return worst


def chain_rule_check(fun, spec, state, u_path, v_path, dt) -> float:
    """Residual of d/dt fun(law_t) against the measure chain rule, O(dt)."""
    mu = state.measure
    grad = lifted_gradient(fun, mu)
    feats = dyn._weighted_feats(spec, mu.atoms, mu.weights)
    t = state.time
    step = u_path.mesh.index_of(t)
    drift = dyn.gm.drift_batch(
        spec, t, mu.atoms, feats, u_path.values[step], v_path.values[step]
    )
    rhs = float(mu.weights @ np.sum(grad * drift, axis=1))
    mesh = dyn.gm.TimeMesh(t, t + dt, 1)
    u_const = dyn.gm.ControlPath.constant(mesh, u_path.values[step], u_path.box)
    v_const = dyn.gm.ControlPath.constant(mesh, v_path.values[step], v_path.box)
    cfg = dyn.IntegratorConfig("rk4", 4)
    later = dyn.propagate(spec, dyn.ParticleState(t, mu), u_const, v_const, t + dt, cfg)
    lhs = (lifted_value(fun, later.measure) - lifted_value(fun, mu)) / dt
    return abs(lhs - rhs)
