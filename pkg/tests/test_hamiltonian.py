"""Lower/upper Hamiltonians, lifted form, Isaacs condition."""

import itertools

import numpy as np
import pytest
from conftest import make_game, uniform_pair

from mfgz.game import control_grid, load_config
from mfgz.hamilton import (hamiltonian_lower, hamiltonian_upper, isaacs_check,
                           lifted_hamiltonian)
from mfgz.measures import EmpiricalMeasure, QuantizationSpec, quantize

UNIT = ((0.0, 1.0),)


def grids(spec, r):
    return control_grid(spec.u_box, r), control_grid(spec.v_box, r)


def brute_values(spec, t, nu, p, ug, vg):
    # direct enumeration oracle over the full control grid
    a = np.empty((len(ug), len(vg)))
    for iu, iv in itertools.product(range(len(ug)), range(len(vg))):
        total = 0.0
        for i in range(nu.count):
            from mfgz.game import eval_f, eval_l
            drift = eval_f(spec, t, nu.atoms[i], nu, ug[iu], vg[iv])
            run = eval_l(spec, t, nu.atoms[i], nu, ug[iu], vg[iv])
            total += nu.weights[i] * (float(np.dot(p[i], drift)) + run)
        a[iu, iv] = total
    lower = max(a[:, iv].min() for iv in range(len(vg)))
    upper = min(a[iu, :].max() for iu in range(len(ug)))
    return lower, upper


def test_bilinear_cost_zero_saddle():
    spec = make_game(l="u1 - v1")
    ug, vg = grids(spec, 2)
    nu = EmpiricalMeasure.dirac(0.0)
    p = np.zeros((1, 1))
    lo = hamiltonian_lower(spec, 0.0, nu, p, ug, vg)
    hi = hamiltonian_upper(spec, 0.0, nu, p, ug, vg)
    assert lo.value == 0.0 and (lo.arg_u, lo.arg_v) == (0, 0)
    assert hi.value == 0.0 and (hi.arg_u, hi.arg_v) == (0, 0)


def test_paper_game_zero_at_symmetric_measure():
    spec, _, _ = load_config("example1_gaussian")
    ug, vg = grids(spec, 2)
    nu = quantize(QuantizationSpec("gaussian", (0.0, 1.0), 16))
    p = np.zeros((16, 1))
    lo = hamiltonian_lower(spec, 0.0, nu, p, ug, vg)
    assert abs(lo.value) <= 1e-14


def test_control_free_value_with_unit_costate():
    spec = make_game(f="u1", l="0")
    ug, vg = grids(spec, 3)
    nu = EmpiricalMeasure.dirac(0.5)
    p = np.ones((1, 1))
    lo = hamiltonian_lower(spec, 0.0, nu, p, ug, vg)
    assert lo.value == 0.0 and lo.arg_u == 0


def test_product_cost_grid_enumeration():
    spec = make_game(l="u1*v1", u_box=((-1.0, 1.0),), v_box=((-1.0, 1.0),))
    ug, vg = grids(spec, 3)
    nu = EmpiricalMeasure.dirac(0.0)
    p = np.zeros((1, 1))
    lower_o, upper_o = brute_values(spec, 0.0, nu, p, ug, vg)
    lo = hamiltonian_lower(spec, 0.0, nu, p, ug, vg)
    hi = hamiltonian_upper(spec, 0.0, nu, p, ug, vg)
    assert lo.value == lower_o == 0.0
    assert hi.value == upper_o == 0.0
    assert lo.value <= hi.value


def test_quadratic_coupling_strict_gap():
    spec = make_game(l="(u1 - v1)*(u1 - v1)")
    ug, vg = grids(spec, 2)
    nu = EmpiricalMeasure.dirac(0.0)
    p = np.zeros((1, 1))
    lower_o, upper_o = brute_values(spec, 0.0, nu, p, ug, vg)
    lo = hamiltonian_lower(spec, 0.0, nu, p, ug, vg)
    hi = hamiltonian_upper(spec, 0.0, nu, p, ug, vg)
    assert lo.value == lower_o == 0.0
    assert hi.value == upper_o == 1.0


def test_weak_duality_random_samples(rng):
    spec, _, _ = load_config("example1_gaussian")
    ug, vg = grids(spec, 4)
    for _ in range(30):
        nu = EmpiricalMeasure.uniform_atoms(rng.normal(size=5))
        p = rng.normal(size=(5, 1))
        t = rng.random()
        lo = hamiltonian_lower(spec, t, nu, p, ug, vg)
        hi = hamiltonian_upper(spec, t, nu, p, ug, vg)
        assert lo.value <= hi.value
        lower_o, upper_o = brute_values(spec, t, nu, p, ug, vg)
        assert lo.value == pytest.approx(lower_o, abs=1e-12)
        assert hi.value == pytest.approx(upper_o, abs=1e-12)


def test_lifted_matches_measure_form(rng):
    from mfgz.game import TargetedEnsemble

    spec, _, _ = load_config("example1_gaussian")
    ug, vg = grids(spec, 3)
    nu = quantize(QuantizationSpec("gaussian", (0.0, 1.0), 8))
    z_mu = quantize(QuantizationSpec("gaussian", (0.0, 1.0), 3))
    ens = TargetedEnsemble(nu, z_mu)
    p = rng.normal(size=(8, 1))
    direct = hamiltonian_lower(spec, 0.2, nu, p, ug, vg)
    lifted = lifted_hamiltonian("lower", spec, 0.2, ens, p, ug, vg)
    assert lifted.value == pytest.approx(direct.value, abs=1e-12)


def test_lifted_invariant_under_permutation(rng):
    spec, _, _ = load_config("example1_gaussian")
    ug, vg = grids(spec, 3)
    atoms = rng.normal(size=6)
    p = rng.normal(size=(6, 1))
    nu = EmpiricalMeasure.uniform_atoms(atoms)
    base = hamiltonian_lower(spec, 0.0, nu, p, ug, vg).value
    worst = 0.0
    for _ in range(100):
        perm = rng.permutation(6)
        val = hamiltonian_lower(spec, 0.0, nu.permuted(perm), p[perm], ug, vg).value
        worst = max(worst, abs(val - base))
    assert worst <= 1e-12


def test_isaacs_paper_game_separable(rng):
    spec, _, _ = load_config("example1_gaussian")
    ug, vg = grids(spec, 5)
    samples = []
    for _ in range(50):
        n = int(rng.integers(1, 7))
        nu = EmpiricalMeasure.uniform_atoms(rng.normal(size=n))
        samples.append((rng.random(), nu, rng.normal(size=(n, 1))))
    assert isaacs_check(spec, samples, ug, vg) <= 1e-12


def test_isaacs_quadratic_gap_reported():
    spec = make_game(l="(u1 - v1)*(u1 - v1)")
    ug, vg = grids(spec, 2)
    nu = EmpiricalMeasure.dirac(0.0)
    gap = isaacs_check(spec, [(0.0, nu, np.zeros((1, 1)))], ug, vg)
    assert gap == 1.0


def test_isaacs_trivial_game():
    spec = make_game(f="0", l="0")
    ug, vg = grids(spec, 3)
    nu = EmpiricalMeasure.dirac(0.0)
    assert isaacs_check(spec, [(0.0, nu, np.zeros((1, 1)))], ug, vg) == 0.0


def test_costate_linearity_for_control_free_drift(rng):
    # with f free of controls the costate part is linear: doubling p doubles
    # H(p) - H(0) exactly
    spec = make_game(f="sin(x1)", l="u1 - 0.5*v1")
    ug, vg = grids(spec, 3)
    nu = EmpiricalMeasure.uniform_atoms(rng.normal(size=4))
    p = rng.normal(size=(4, 1))
    h0 = hamiltonian_lower(spec, 0.0, nu, np.zeros((4, 1)), ug, vg).value
    h1 = hamiltonian_lower(spec, 0.0, nu, p, ug, vg).value
    h2 = hamiltonian_lower(spec, 0.0, nu, 2.0 * p, ug, vg).value
    assert h2 - h0 == pytest.approx(2.0 * (h1 - h0), abs=1e-12)


def test_grid_refinement_contracts():
    spec, _, _ = load_config("example1_gaussian")
    nu = quantize(QuantizationSpec("gaussian", (0.0, 1.0), 4))
    p = np.full((4, 1), 0.37)
    vals = {}
    for r in (5, 9, 17, 33):
        ug, vg = grids(spec, r)
        vals[r] = hamiltonian_lower(spec, 0.1, nu, p, ug, vg).value
    assert abs(vals[17] - vals[33]) <= abs(vals[5] - vals[9]) + 1e-15
