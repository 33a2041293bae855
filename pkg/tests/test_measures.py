"""Wasserstein metric, couplings and quantization."""

import math

import numpy as np
import pytest

from mfgz.measures import (Coupling, EmpiricalMeasure, MeasureError,
                           QuantizationSpec, measure_feature, optimal_coupling,
                           quantize, wasserstein)


def unif(atoms):
    return EmpiricalMeasure.uniform_atoms(np.asarray(atoms, dtype=float))


def test_w2_identical_diracs():
    d0 = EmpiricalMeasure.dirac(0.0)
    assert wasserstein(2, d0, d0) == 0.0


def test_w2_two_diracs():
    assert wasserstein(2, EmpiricalMeasure.dirac(1.0), EmpiricalMeasure.dirac(3.0)) == 2.0


def test_w2_two_atom_pairs_brute_force():
    # oracle: enumerate both extreme couplings of two 2-atom uniform laws;
    # the plan is linear in its single free mass, so extremes are endpoints
    mu1, mu2 = unif([0.0, 2.0]), unif([1.0, 3.0])
    monotone = math.sqrt(0.5 * (1.0 - 0.0) ** 2 + 0.5 * (3.0 - 2.0) ** 2)
    crossed = math.sqrt(0.5 * (3.0 - 0.0) ** 2 + 0.5 * (2.0 - 1.0) ** 2)
    oracle = min(monotone, crossed)
    assert oracle == 1.0 and crossed == pytest.approx(math.sqrt(5.0))
    assert wasserstein(2, mu1, mu2) == pytest.approx(oracle, abs=1e-12)


def test_coupling_of_diracs_is_total_mass():
    plan = optimal_coupling(EmpiricalMeasure.dirac(-1.0), EmpiricalMeasure.dirac(4.0))
    assert plan.plan.shape == (1, 1) and plan.plan[0, 0] == 1.0


def test_coupling_monotone_two_atoms():
    plan = optimal_coupling(unif([0.0, 2.0]), unif([1.0, 3.0])).plan
    assert plan == pytest.approx(np.array([[0.5, 0.0], [0.0, 0.5]]), abs=1e-12)


def test_coupling_identity_zero_cost():
    mu = unif([-1.0, 0.5, 2.0])
    coup = optimal_coupling(mu, mu)
    assert coup.cost(2) == pytest.approx(0.0, abs=1e-12)


def test_coupling_cost_matches_w2():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n, m = rng.integers(1, 7), rng.integers(1, 7)
        mu1 = unif(rng.normal(size=n) * 2)
        w = rng.uniform(0.2, 1.0, m)
        mu2 = EmpiricalMeasure(rng.normal(size=m) * 2, w / w.sum())
        coup = optimal_coupling(mu1, mu2)
        assert coup.cost(2) == pytest.approx(wasserstein(2, mu1, mu2) ** 2, abs=1e-10)


def _normal_cdf(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _normal_quantile_bisect(q):
    lo, hi = -10.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _normal_cdf(mid) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_quantize_dirac():
    mu = quantize(QuantizationSpec("dirac", (0.7,)))
    assert mu.atoms.ravel().tolist() == [0.7]
    assert mu.weights.tolist() == [1.0]


def test_quantize_gaussian_two_atoms_vs_bisection():
    mu = quantize(QuantizationSpec("gaussian", (0.0, 1.0), 2))
    oracle = _normal_quantile_bisect(0.75)
    assert mu.atoms[1, 0] == pytest.approx(oracle, abs=1e-9)
    assert mu.atoms[0, 0] == -mu.atoms[1, 0]


def test_quantized_gaussian_mean_exact():
    mu = quantize(QuantizationSpec("gaussian", (0.0, 1.0), 101))
    assert abs(mu.mean()) <= 1e-12


def test_quantize_uniform_midpoints():
    mu = quantize(QuantizationSpec("uniform", (0.0, 1.0), 4))
    assert mu.atoms.ravel() == pytest.approx([0.125, 0.375, 0.625, 0.875])


def test_feature_mean_of_dirac():
    assert measure_feature(EmpiricalMeasure.dirac(2.0), "mean") == 2.0


def test_feature_mean_sin_symmetric():
    mu = unif([-0.8, 0.8])
    assert measure_feature(mu, "mean_sin") == pytest.approx(0.0, abs=1e-16)


def test_feature_mean_sin_quantized_gaussian():
    mu = quantize(QuantizationSpec("gaussian", (0.0, 1.0), 51))
    assert abs(measure_feature(mu, "mean_sin")) <= 1e-12


def test_feature_unknown_name():
    with pytest.raises(MeasureError):
        measure_feature(EmpiricalMeasure.dirac(0.0), "median")


def _random_measure(rng, max_atoms=8):
    n = int(rng.integers(1, max_atoms + 1))
    atoms = rng.normal(size=n) * 2.0
    if rng.random() < 0.5:
        w = np.full(n, 1.0 / n)
    else:
        w = rng.uniform(0.1, 1.0, n)
        w = w / w.sum()
    return EmpiricalMeasure(atoms, w)


def test_metric_axioms_200_trials():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b, c = (_random_measure(rng) for _ in range(3))
        dab = wasserstein(2, a, b)
        assert abs(dab - wasserstein(2, b, a)) <= 1e-10
        assert wasserstein(2, a, a) == 0.0
        assert dab <= wasserstein(2, a, c) + wasserstein(2, c, b) + 1e-9
        assert wasserstein(1, a, b) <= dab + 1e-12


def test_assignment_solver_matches_quantile_200_trials():
    # same 1-d data pushed through the n>1 assignment/LP path via a zero
    # second coordinate; must agree with the sorted-quantile computation
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(1, 9))
        x1, x2 = rng.normal(size=n) * 2, rng.normal(size=n) * 2
        mu1, mu2 = unif(x1), unif(x2)
        e1 = EmpiricalMeasure(np.column_stack([x1, np.zeros(n)]), mu1.weights)
        e2 = EmpiricalMeasure(np.column_stack([x2, np.zeros(n)]), mu2.weights)
        assert wasserstein(2, e1, e2) == pytest.approx(wasserstein(2, mu1, mu2), abs=1e-10)


def test_lp_solver_matches_quantile_weighted():
    rng = np.random.default_rng(2)
    for _ in range(40):
        n, m = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        x1, x2 = rng.normal(size=n), rng.normal(size=m)
        w1 = rng.uniform(0.1, 1.0, n)
        w2 = rng.uniform(0.1, 1.0, m)
        mu1 = EmpiricalMeasure(x1, w1 / w1.sum())
        mu2 = EmpiricalMeasure(x2, w2 / w2.sum())
        e1 = EmpiricalMeasure(np.column_stack([x1, np.zeros(n)]), mu1.weights)
        e2 = EmpiricalMeasure(np.column_stack([x2, np.zeros(m)]), mu2.weights)
        assert wasserstein(2, e1, e2) == pytest.approx(wasserstein(2, mu1, mu2), abs=1e-10)
        assert wasserstein(1, e1, e2) == pytest.approx(wasserstein(1, mu1, mu2), abs=1e-10)


def test_dimension_mismatch_rejected():
    with pytest.raises(MeasureError):
        wasserstein(2, EmpiricalMeasure.dirac([0.0, 0.0]), EmpiricalMeasure.dirac(0.0))


def test_pair_limit_enforced():
    rng = np.random.default_rng(4)
    big1 = EmpiricalMeasure(rng.normal(size=(70, 2)), np.full(70, 1.0 / 70))
    big2 = EmpiricalMeasure(rng.normal(size=(70, 2)), np.full(70, 1.0 / 70))
    with pytest.raises(MeasureError):
        wasserstein(2, big1, big2)


def test_weights_validated():
    with pytest.raises(MeasureError):
        EmpiricalMeasure([0.0, 1.0], [0.5, 0.6])
    with pytest.raises(MeasureError):
        EmpiricalMeasure([0.0, 1.0], [1.0, 0.0])


def test_coupling_marginals_validated():
    mu1, mu2 = unif([0.0, 1.0]), unif([0.0, 1.0])
    with pytest.raises(MeasureError):
        Coupling(mu1, mu2, np.array([[0.5, 0.25], [0.0, 0.25]]))
