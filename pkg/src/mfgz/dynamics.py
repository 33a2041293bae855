"""Coupled particle propagation of distribution-dependent dynamics.

All atoms advance simultaneously; the law seen by the drift at every
integrator substage is the empirical measure of the ensemble at that same
substage (synchronous coupling).  Running cost is integrated with the same
quadrature nodes as the state integrator, so rk4 carries Simpson-consistent
cost accumulation and euler carries left-endpoint accumulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import game as gm
from .expr import ExpressionError
from .measures import EmpiricalMeasure, wasserstein


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: str = "rk4"
    substeps: int = 8

    def __post_init__(self):
        if self.scheme not in ("rk4", "euler"):
            raise gm.GameError("scheme must be rk4 or euler")
        if self.substeps < 1:
            raise gm.GameError("substeps must be >= 1")


@dataclass
class ParticleState:
    time: float
    measure: EmpiricalMeasure


def _weighted_feats(spec, atoms, weights):
    feats = {}
    for fv in spec.features_used:
        name = fv.split(":", 1)[1]
        if name == "mean":
            feats[fv] = float(weights @ atoms[:, 0])
        elif name == "second_moment":
            feats[fv] = float(weights @ np.sum(atoms * atoms, axis=1))
        else:
            feats[fv] = float(weights @ np.sin(atoms[:, 0]))
    return feats


def _rate(spec, t, atoms, weights, u, v):
    """Drift of every atom plus the measure-averaged running cost rate."""
    feats = _weighted_feats(spec, atoms, weights)
    drift = gm.drift_batch(spec, t, atoms, feats, u, v)
    if not np.all(np.isfinite(drift)):
        raise ExpressionError("non-finite drift during propagation")
    lrate = float(weights @ gm.running_batch(spec, t, atoms, feats, u, v))
    return drift, lrate


def _substep(spec, t, atoms, weights, u, v, h, scheme):
    if scheme == "euler":
        k1, c1 = _rate(spec, t, atoms, weights, u, v)
        return atoms + h * k1, h * c1
    k1, c1 = _rate(spec, t, atoms, weights, u, v)
    k2, c2 = _rate(spec, t + 0.5 * h, atoms + 0.5 * h * k1, weights, u, v)
    k3, c3 = _rate(spec, t + 0.5 * h, atoms + 0.5 * h * k2, weights, u, v)
    k4, c4 = _rate(spec, t + h, atoms + h * k3, weights, u, v)
    new = atoms + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    return new, h * (c1 + 2.0 * c2 + 2.0 * c3 + c4) / 6.0


def advance_step(spec, t, atoms, weights, u, v, tau, cfg: IntegratorConfig):
    """One control step of length tau with constant (u, v); returns (atoms, cost)."""
    k = cfg.substeps
    h = tau / k
    cost = 0.0
    for j in range(k):
        atoms, dc = _substep(spec, t + j * h, atoms, weights, u, v, h, cfg.scheme)
        cost += dc
    return atoms, cost


def _walk(spec, state, u_path, v_path, until, cfg):
    """Advance through the control mesh; split times inside a step are fine
    (the covered fraction is integrated with the full substep count)."""
    if u_path.mesh != v_path.mesh:
        raise gm.GameError("control paths must share a mesh")
    mesh = u_path.mesh
    tol = 1e-12 * max(1.0, abs(mesh.t1))
    if until < state.time - tol:
        raise gm.GameError("cannot propagate backward in time")
    if state.time < mesh.t0 - tol or until > mesh.t1 + tol:
        raise gm.GameError("control mesh does not cover the requested interval")
    times = mesh.times()
    atoms = state.measure.atoms.copy()
    weights = state.measure.weights
    costs = []
    t = state.time
    step = min(int(np.searchsorted(times, t + tol) - 1), mesh.steps - 1)
    step = max(step, 0)
    while t < until - tol:
        seg_end = min(times[step + 1], until)
        atoms, c = advance_step(
            spec, t, atoms, weights, u_path.values[step], v_path.values[step],
            seg_end - t, cfg,
        )
        costs.append(c)
        t = seg_end
        if step < mesh.steps - 1 and t >= times[step + 1] - tol:
            step += 1
    return atoms, costs


def propagate(spec, state: ParticleState, u_path, v_path, until, cfg) -> ParticleState:
    """Advance the whole ensemble to ``until``; weights never change."""
    atoms, _ = _walk(spec, state, u_path, v_path, until, cfg)
    return ParticleState(until, state.measure.with_atoms(atoms))


def running_cost_accumulate(spec, state, u_path, v_path, until, cfg):
    """Propagate and return (state, accumulated measure-averaged running cost)."""
    atoms, costs = _walk(spec, state, u_path, v_path, until, cfg)
    total = 0.0
    for c in costs:
        total += c
    return ParticleState(until, state.measure.with_atoms(atoms)), total


def objective_value(spec, ensemble, u_path, v_path, cfg):
    """Discretized game cost J: running cost plus terminal expectation.

    Step costs are folded terminal-first so the sum associates exactly like
    the backward value recursion.
    """
    state = ParticleState(u_path.mesh.t0, ensemble.x_measure)
    atoms, costs = _walk(spec, state, u_path, v_path, u_path.mesh.t1, cfg)
    total = gm.eval_terminal_cost(spec, ensemble, atoms)
    for c in reversed(costs):
        total = c + total
    return total


def check_flow_property(spec, state, u_path, v_path, t, r, s, cfg):
    """Max atomwise gap between the direct flow t->s and the split t->r->s."""
    if not (t < r < s):
        raise gm.GameError("need t < r < s")
    base = ParticleState(t, state.measure)
    direct = propagate(spec, base, u_path, v_path, s, cfg)
    mid = propagate(spec, base, u_path, v_path, r, cfg)
    two_leg = propagate(spec, mid, u_path, v_path, s, cfg)
    return float(np.max(np.abs(direct.measure.atoms - two_leg.measure.atoms)))


@dataclass
class EstimateReport:
    """Empirical flow-regularity ratios against an explicit sufficient bound."""

    bound: float
    time_ratios: list = field(default_factory=list)     # W2(P_s, nu_x) / |s - t|
    stability_ratios: list = field(default_factory=list)  # W2(P_s^1, P_s^2) / W2(nu1, nu2)
    violations: list = field(default_factory=list)

    @property
    def max_time_ratio(self):
        return max(self.time_ratios) if self.time_ratios else 0.0

    @property
    def max_stability_ratio(self):
        return max(self.stability_ratios) if self.stability_ratios else 0.0

    @property
    def ok(self):
        return not self.violations


def check_estimates(spec, nu1, nu2, u_path, v_path, cfg) -> EstimateReport:
    """Flow-in-time and flow-in-law ratios for two initial laws.

    The bound e^{K T} (K (1 + max second moment) + 1) is an explicit
    sufficient Gronwall-type constant, possibly loose; a violated bound is
    reported, never silently passed.
    """
    if spec.lipschitz_k is None:
        raise gm.GameError("lipschitz_K required for estimate checks")
    k_lip = spec.lipschitz_k
    horizon = u_path.mesh.t1 - u_path.mesh.t0
    m2 = max(nu1.second_moment(), nu2.second_moment())
    bound = float(np.exp(k_lip * horizon) * (k_lip * (1.0 + m2) + 1.0))
    report = EstimateReport(bound=bound)
    times = u_path.mesh.times()
    t0 = times[0]
    w12 = wasserstein(2, nu1, nu2)
    state1 = ParticleState(t0, nu1)
    state2 = ParticleState(t0, nu2)
    for s in times[1:]:
        state1 = propagate(spec, state1, u_path, v_path, s, cfg)
        state2 = propagate(spec, state2, u_path, v_path, s, cfg)
        for start, flowed in ((nu1, state1), (nu2, state2)):
            ratio = wasserstein(2, flowed.measure, start) / (s - t0)
            report.time_ratios.append(ratio)
            if ratio > bound:
                report.violations.append(("time", float(s), ratio))
        if w12 > 0:
            ratio = wasserstein(2, state1.measure, state2.measure) / w12
            report.stability_ratios.append(ratio)
            if ratio > bound:
                report.violations.append(("stability", float(s), ratio))
    return report
