import numpy as np
import pytest

from mfgz.game import ControlPath, GameSpec, TargetedEnsemble, TimeMesh
from mfgz.measures import EmpiricalMeasure


def make_game(f="0", l="0", m="x1", u_box=((0.0, 1.0),), v_box=((0.0, 1.0),),
              horizon=1.0, dim=1, lipschitz_k=None):
    return GameSpec(horizon, dim, f, l, m, u_box, v_box, lipschitz_k)


def const_paths(spec, steps, u=None, v=None, t0=0.0, t1=None):
    mesh = TimeMesh(t0, spec.horizon if t1 is None else t1, steps)
    u = np.array([lo for lo, _ in spec.u_box]) if u is None else np.atleast_1d(u)
    v = np.array([lo for lo, _ in spec.v_box]) if v is None else np.atleast_1d(v)
    return (ControlPath.constant(mesh, u, spec.u_box),
            ControlPath.constant(mesh, v, spec.v_box))


def dirac_pair(x, z):
    return TargetedEnsemble(EmpiricalMeasure.dirac(x), EmpiricalMeasure.dirac(z))


def uniform_pair(x_atoms, z_atoms):
    return TargetedEnsemble(EmpiricalMeasure.uniform_atoms(np.asarray(x_atoms, float)),
                            EmpiricalMeasure.uniform_atoms(np.asarray(z_atoms, float)))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
