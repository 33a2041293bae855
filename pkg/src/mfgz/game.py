"""Game definitions: dynamics, costs, control boxes, strategies, configs.

A game couples a drift f(t, x, law, u, v), a running cost l with the same
signature, and a terminal cost m(x, z) against a target draw z independent
of the initial condition.  The law enters f and l only through the
registered scalar features (mean, second_moment, mean_sin).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .expr import Expression, ExpressionError, check_finite, parse_expression
from .measures import EmpiricalMeasure, MeasureError, QuantizationSpec, quantize

_CONFIG_DIR = Path(__file__).parent / "configs"

FEATURE_VARS = ("feature:mean", "feature:second_moment", "feature:mean_sin")


class GameError(ValueError):
    pass


def control_grid(box, resolution):
    """Tensor grid over a coordinate box, endpoints included, lexicographic.

    ``box`` is a sequence of (lo, hi) intervals; ``resolution`` is points per
    axis (>= 2, or 1 for a singleton interval).
    """
    axes = []
    for lo, hi in box:
        if resolution == 1:
            if lo != hi:
                raise GameError("resolution 1 only allowed for singleton boxes")
            axes.append(np.array([lo]))
        elif resolution >= 2:
            axes.append(np.linspace(lo, hi, resolution))
        else:
            raise GameError("resolution must be >= 1")
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _validate_box(box, name):
    box = tuple((float(lo), float(hi)) for lo, hi in box)
    if not box:
        raise GameError("%s box must have at least one axis" % name)
    for lo, hi in box:
        if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
            raise GameError("%s box axes must be bounded intervals" % name)
    return box


_VAR_RE = re.compile(r"^(x|u|v|z)(\d+)$")


def _check_vars(exprs, allowed_kinds, dim, m1, m2, what):
    limits = {"x": dim, "u": m1, "v": m2, "z": dim}
    for e in exprs:
        for name in e.variables:
            if name == "t":
                if "t" not in allowed_kinds:
                    raise GameError("%s may not reference t" % what)
                continue
            if name.startswith("feature:"):
                if "feature" not in allowed_kinds:
                    raise GameError("%s may not reference measure features" % what)
                if name in ("feature:mean", "feature:mean_sin") and dim != 1:
                    raise GameError("%s requires dim == 1 in expressions" % name)
                continue
            m = _VAR_RE.match(name)
            if not m or m.group(1) not in allowed_kinds:
                raise GameError("%s references unknown variable %r" % (what, name))
            if int(m.group(2)) < 1 or int(m.group(2)) > limits[m.group(1)]:
                raise GameError(
                    "%s variable %r out of range (max %d)" % (what, name, limits[m.group(1)])
                )


class GameSpec:
    """Immutable description of one zero-sum game instance."""

    def __init__(self, horizon, dim, f_exprs, l_expr, m_expr, u_box, v_box,
                 lipschitz_k=None):
        if horizon <= 0:
            raise GameError("horizon must be positive")
        self.horizon = float(horizon)
        self.dim = int(dim)
        if isinstance(f_exprs, (str, Expression)):
            f_exprs = [f_exprs]
        self.f_exprs = tuple(
            e if isinstance(e, Expression) else parse_expression(e) for e in f_exprs
        )
        if len(self.f_exprs) != self.dim:
            raise GameError("need %d drift components, got %d" % (self.dim, len(self.f_exprs)))
        self.l_expr = l_expr if isinstance(l_expr, Expression) else parse_expression(l_expr)
        self.m_expr = m_expr if isinstance(m_expr, Expression) else parse_expression(m_expr)
        self.u_box = _validate_box(u_box, "U")
        self.v_box = _validate_box(v_box, "V")
        self.lipschitz_k = None if lipschitz_k is None else float(lipschitz_k)
        m1, m2 = len(self.u_box), len(self.v_box)
        _check_vars(self.f_exprs, {"t", "x", "u", "v", "feature"}, self.dim, m1, m2, "f")
        _check_vars([self.l_expr], {"t", "x", "u", "v", "feature"}, self.dim, m1, m2, "l")
        _check_vars([self.m_expr], {"x", "z"}, self.dim, m1, m2, "m")
        used = set()
        for e in (*self.f_exprs, self.l_expr):
            used |= e.variables
        self.features_used = tuple(f for f in FEATURE_VARS if f in used)
        self.time_dependent = "t" in used

    def control_counts(self):
        return len(self.u_box), len(self.v_box)


def _feature_env(spec, nu_x):
    env = {}
    for fv in spec.features_used:
        name = fv.split(":", 1)[1]
        if name == "mean":
            env[fv] = nu_x.mean()
        elif name == "second_moment":
            env[fv] = nu_x.second_moment()
        else:
            env[fv] = nu_x.mean_sin()
    return env


def _control_env(u, v):
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    env = {"u%d" % (j + 1): u[j] for j in range(u.shape[0])}
    env.update({"v%d" % (j + 1): v[j] for j in range(v.shape[0])})
    return env


def eval_f(spec: GameSpec, t, x, nu_x: EmpiricalMeasure, u, v):
    """Drift vector in R^n at one state point; law enters via features only."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    env = {"t": t}
    env.update({"x%d" % (i + 1): x[i] for i in range(spec.dim)})
    env.update(_feature_env(spec, nu_x))
    env.update(_control_env(u, v))
    out = np.array([e(**env) for e in spec.f_exprs], dtype=np.float64)
    return check_finite(out, "drift")


def eval_l(spec: GameSpec, t, x, nu_x: EmpiricalMeasure, u, v):
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    env = {"t": t}
    env.update({"x%d" % (i + 1): x[i] for i in range(spec.dim)})
    env.update(_feature_env(spec, nu_x))
    env.update(_control_env(u, v))
    return float(check_finite(spec.l_expr(**env), "running cost"))


def drift_batch(spec, t, coords, feats, u, v):
    """Vectorized drift over an array of state points.

    ``coords`` has shape (..., n); ``feats`` maps feature vars to broadcastable
    arrays; returns shape (..., n).
    """
    env = {"t": t}
    env.update({"x%d" % (i + 1): coords[..., i] for i in range(spec.dim)})
    env.update(feats)
    env.update(_control_env(u, v))
    parts = [np.broadcast_to(e(**env), coords.shape[:-1]) for e in spec.f_exprs]
    return np.stack(parts, axis=-1)


def running_batch(spec, t, coords, feats, u, v):
    env = {"t": t}
    env.update({"x%d" % (i + 1): coords[..., i] for i in range(spec.dim)})
    env.update(feats)
    env.update(_control_env(u, v))
    return np.broadcast_to(np.asarray(spec.l_expr(**env), dtype=np.float64),
                           coords.shape[:-1])


def terminal_batch(spec, x_coords, z_coords):
    """m evaluated pointwise on broadcastable x and z coordinate arrays (..., n)."""
    env = {"x%d" % (i + 1): x_coords[..., i] for i in range(spec.dim)}
    env.update({"z%d" % (i + 1): z_coords[..., i] for i in range(spec.dim)})
    return np.asarray(spec.m_expr(**env), dtype=np.float64)


def batch_features(spec, coords):
    """Features of the empirical law of each configuration in ``coords``.

    ``coords`` has shape (..., N, n) holding N uniform-weight atoms per
    configuration; returned arrays have shape (..., 1) for broadcasting
    against per-atom quantities.
    """
    feats = {}
    for fv in spec.features_used:
        name = fv.split(":", 1)[1]
        if name == "mean":
            val = np.mean(coords[..., 0], axis=-1)
        elif name == "second_moment":
            val = np.mean(np.sum(coords * coords, axis=-1), axis=-1)
        else:
            val = np.mean(np.sin(coords[..., 0]), axis=-1)
        feats[fv] = val[..., None]
    return feats


@dataclass(frozen=True)
class TimeMesh:
    """Uniform time mesh with S steps on [t0, t1]."""

    t0: float
    t1: float
    steps: int

    def __post_init__(self):
        if not (self.t0 < self.t1):
            raise GameError("need t0 < t1")
        if self.steps < 1:
            raise GameError("need at least one step")

    @property
    def tau(self):
        return (self.t1 - self.t0) / self.steps

    def times(self):
        return self.t0 + (self.t1 - self.t0) * np.arange(self.steps + 1) / self.steps

    def index_of(self, t, tol=1e-9):
        times = self.times()
        idx = int(np.argmin(np.abs(times - t)))
        if abs(times[idx] - t) > tol:
            raise GameError("time %g is not on the mesh" % t)
        return idx


@dataclass
class ControlPath:
    """Piecewise-constant control on a mesh; every value inside its box."""

    mesh: TimeMesh
    values: np.ndarray
    box: tuple

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape != (self.mesh.steps, len(self.box)):
            raise GameError("control values must have shape (steps, box axes)")
        for j, (lo, hi) in enumerate(self.box):
            if np.any(vals[:, j] < lo - 1e-12) or np.any(vals[:, j] > hi + 1e-12):
                raise GameError("control value leaves its box on axis %d" % j)
        self.values = vals

    @classmethod
    def constant(cls, mesh, value, box):
        value = np.atleast_1d(np.asarray(value, dtype=np.float64))
        return cls(mesh, np.tile(value, (mesh.steps, 1)), box)


@dataclass
class DiscreteStrategy:
    """Step-causal reaction maps: at each step, opponent grid index -> own index."""

    mesh: TimeMesh
    side: str  # "player1_alpha" or "player2_beta"
    tables: list = field(default_factory=list)

    def __post_init__(self):
        if self.side not in ("player1_alpha", "player2_beta"):
            raise GameError("side must be player1_alpha or player2_beta")

    def rows(self):
        for s, table in enumerate(self.tables):
            for opp, own in enumerate(np.asarray(table).ravel()):
                yield s, opp, int(own)


@dataclass
class TargetedEnsemble:
    """Initial law and independent target law, equal dimension."""

    x_measure: EmpiricalMeasure
    z_measure: EmpiricalMeasure

    def __post_init__(self):
        if self.x_measure.dim != self.z_measure.dim:
            raise GameError("state and target laws must share dimension")

    @property
    def dim(self):
        return self.x_measure.dim


def eval_terminal_cost(spec: GameSpec, ensemble: TargetedEnsemble, terminal_atoms):
    """E over the product law of m(x_T, z): sum_i sum_j w_i w'_j m(x_i, z_j)."""
    atoms = np.asarray(terminal_atoms, dtype=np.float64)
    if atoms.ndim == 1:
        atoms = atoms[:, None]
    if atoms.shape[0] != ensemble.x_measure.count:
        raise GameError("terminal atom count does not match ensemble")
    zx = ensemble.z_measure
    vals = terminal_batch(spec, atoms[:, None, :], zx.atoms[None, :, :])
    vals = np.broadcast_to(vals, (atoms.shape[0], zx.count))
    inner = vals @ zx.weights
    return float(ensemble.x_measure.weights @ inner)


# ---------------------------------------------------------------------------
# configuration files: plain "key = value" text, '#' comments
# ---------------------------------------------------------------------------

@dataclass
class RunDefaults:
    """Numeric defaults shipped with a config, all overridable per run."""

    x_law: QuantizationSpec
    z_law: QuantizationSpec
    particles: int
    control_resolution: int
    time_steps: int
    grid_axes: tuple  # ((lo, hi, points), ...) one entry per state component


class ConfigError(ValueError):
    pass


def _parse_law(text):
    m = re.match(r"^\s*(gaussian|dirac|uniform)\s*\(([^)]*)\)\s*$", text)
    if not m:
        raise ConfigError("bad law spec %r" % text)
    family = m.group(1)
    params = tuple(float(p) for p in m.group(2).split(",") if p.strip())
    if family == "dirac":
        return QuantizationSpec("dirac", params)
    return QuantizationSpec(family, params)


def _parse_box(text):
    axes = []
    for part in text.split(";"):
        nums = [float(p) for p in part.split(",") if p.strip()]
        if len(nums) != 2:
            raise ConfigError("box axis needs 'lo, hi': %r" % part)
        axes.append((nums[0], nums[1]))
    return tuple(axes)


def _parse_grid(text):
    axes = []
    for part in text.split(";"):
        nums = [p.strip() for p in part.split(",") if p.strip()]
        if len(nums) != 3:
            raise ConfigError("grid axis needs 'lo, hi, points': %r" % part)
        axes.append((float(nums[0]), float(nums[1]), int(nums[2])))
    return tuple(axes)


def parse_config(text):
    """Key-value config text to a dict; duplicate keys are an error."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("line %d: expected 'key = value'" % lineno)
        key, val = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError("line %d: duplicate key %r" % (lineno, key))
        out[key] = val.strip()
    return out


_REQUIRED_KEYS = ("horizon", "dim", "f", "l", "m", "U", "V", "x_law", "z_law")


def build_game(entries):
    """Config dict -> (GameSpec, RunDefaults)."""
    for key in _REQUIRED_KEYS:
        if key not in entries:
            raise ConfigError("missing config key %r" % key)
    try:
        dim = int(entries["dim"])
        f_parts = [p.strip() for p in entries["f"].split(";")]
        spec = GameSpec(
            horizon=float(entries["horizon"]),
            dim=dim,
            f_exprs=f_parts,
            l_expr=entries["l"],
            m_expr=entries["m"],
            u_box=_parse_box(entries["U"]),
            v_box=_parse_box(entries["V"]),
            lipschitz_k=float(entries["lipschitz_K"]) if "lipschitz_K" in entries else None,
        )
        particles = int(entries.get("particles", 1))
        x_law = _parse_law(entries["x_law"])
        z_law = _parse_law(entries["z_law"])
        grid = _parse_grid(entries["grid"]) if "grid" in entries else None
        if grid is not None and len(grid) not in (1, dim):
            raise ConfigError("grid must give 1 or dim axis specs")
        if grid is not None and len(grid) == 1 and dim > 1:
            grid = grid * dim
        defaults = RunDefaults(
            x_law=x_law,
            z_law=z_law,
            particles=particles,
            control_resolution=int(entries.get("control_resolution", 3)),
            time_steps=int(entries.get("time_steps", 10)),
            grid_axes=grid if grid is not None else ((-1.0, 1.0, 11),) * dim,
        )
    except (ExpressionError, GameError, MeasureError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return spec, defaults


def make_ensemble(defaults: RunDefaults, dim, particles=None):
    """Quantize the configured laws into a TargetedEnsemble."""
    n_atoms = defaults.particles if particles is None else particles
    x_spec = QuantizationSpec(defaults.x_law.family, defaults.x_law.params, n_atoms)
    z_spec = QuantizationSpec(defaults.z_law.family, defaults.z_law.params, n_atoms)
    mu_x = quantize(x_spec)
    mu_z = quantize(z_spec)
    if mu_x.dim != dim or mu_z.dim != dim:
        raise ConfigError("law dimension does not match game dim")
    return TargetedEnsemble(mu_x, mu_z)


def shipped_config_names():
    return sorted(p.stem for p in _CONFIG_DIR.glob("*.cfg"))


def load_config(name_or_path):
    """Load a shipped config by name or any path to a config file."""
    path = Path(name_or_path)
    if not path.exists():
        candidate = _CONFIG_DIR / (str(name_or_path) + ".cfg")
        if candidate.exists():
            path = candidate
        else:
            raise ConfigError(
                "no config %r (shipped: %s)" % (name_or_path, ", ".join(shipped_config_names()))
            )
    spec, defaults = build_game(parse_config(path.read_text()))
    return spec, defaults, path
