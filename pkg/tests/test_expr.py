"""Expression parsing, evaluation and symbolic differentiation."""

import numpy as np
import pytest

from mfgz.expr import ExpressionError, check_finite, parse_expression


def test_drift_expression_evaluates():
    e = parse_expression("1/(1+x1*x1) + feature(mean_sin) + u1 - 0.1*v1")
    env = {"x1": 0.0, "feature:mean_sin": 0.0, "u1": 0.0, "v1": 0.0}
    assert e(**env) == 1.0
    env = {"x1": 1.0, "feature:mean_sin": 0.25, "u1": 1.0, "v1": 1.0}
    assert e(**env) == pytest.approx(0.5 + 0.25 + 1.0 - 0.1)


def test_constant_zero():
    assert parse_expression("0")() == 0.0


def test_terminal_expression():
    e = parse_expression("sin(x1) - z1")
    assert e(x1=np.pi / 2, z1=0.0) == pytest.approx(1.0)


def test_vectorized_broadcast():
    e = parse_expression("x1*x1 + u1")
    out = e(x1=np.array([1.0, 2.0, 3.0]), u1=0.5)
    assert out == pytest.approx([1.5, 4.5, 9.5])


def test_repeated_eval_bit_identical():
    e = parse_expression("exp(sin(x1) - 0.3*x1)/(2 + cos(x1))")
    xs = np.linspace(-3, 3, 101)
    first = e(x1=xs)
    for _ in range(3):
        assert np.array_equal(e(x1=xs), first)


def test_syntax_error_has_position():
    with pytest.raises(ExpressionError) as err:
        parse_expression("1 + * 2")
    assert "column" in str(err.value)


def test_unknown_function_rejected():
    with pytest.raises(ExpressionError):
        parse_expression("tan(x1)")


def test_wrong_arity_rejected():
    with pytest.raises(ExpressionError):
        parse_expression("sin(x1, x1)")


def test_bad_feature_name_rejected():
    with pytest.raises(ExpressionError):
        parse_expression("feature(variance)")


def test_unbound_variable_at_eval():
    e = parse_expression("x1 + u1")
    with pytest.raises(ExpressionError):
        e(x1=1.0)


def test_division_by_zero_flagged_by_finiteness_check():
    e = parse_expression("1/x1")
    with pytest.raises(ExpressionError):
        check_finite(e(x1=0.0))


def test_unary_minus_and_precedence():
    e = parse_expression("-x1*x1 + 2*3")
    assert e(x1=2.0) == 2.0  # (-(x1))*x1 + 6


def test_derivative_sin():
    d = parse_expression("sin(x1)").derivative("x1")
    xs = np.linspace(-2, 2, 9)
    assert d(x1=xs) == pytest.approx(np.cos(xs))


def test_derivative_square():
    d = parse_expression("x1*x1").derivative("x1")
    assert d(x1=3.0) == pytest.approx(6.0)


def test_derivative_rational_vs_central_difference():
    e = parse_expression("1/(1+x1*x1)")
    d = e.derivative("x1")
    h = 1e-6
    for x in np.linspace(-2, 2, 11):
        fd = (e(x1=x + h) - e(x1=x - h)) / (2 * h)
        assert d(x1=x) == pytest.approx(fd, abs=1e-8)


def test_derivative_sqrt():
    e = parse_expression("sqrt(1 + x1*x1)")
    d = e.derivative("x1")
    assert d(x1=1.0) == pytest.approx(1.0 / np.sqrt(8.0) * 2.0)


def test_numba_scalar_evaluator_matches_numpy():
    kernels = pytest.importorskip("mfgz.kernels")
    from mfgz.accel import NUMBA_ENABLED

    if not NUMBA_ENABLED:
        pytest.skip("numba disabled")
    e = parse_expression("exp(0.1*x1) + sin(u1)*cos(v1) - x1/(2+x1*x1)")
    prog = e.program
    sem = kernels.semantics_of(prog)
    rng = np.random.default_rng(0)
    varvals = np.empty(8)
    stack = np.empty(16)
    for _ in range(100):
        x, u, v = rng.normal(size=3)
        env = {"x1": x, "u1": u, "v1": v}
        for slot, name in enumerate(prog.var_names):
            varvals[slot] = env[name]
        got = kernels._eval_nb(prog.ops, prog.args, prog.consts, len(prog.ops),
                               varvals, stack)
        assert got == pytest.approx(e(**env), abs=1e-14)
