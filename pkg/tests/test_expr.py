import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bilevel_soc.expr import (Const, DomainError, ParseError, Var, compile_exprs, differentiate, gradient,
                              hessian, parse, third_tensor)

LOWER_31 = "0.25*y1^4 - 0.5*x1*y1^2"


def test_parse_and_evaluate_lower_objective():
    f = parse(LOWER_31, ["x1", "y1"])
    assert f.evaluate({"x1": 1.0, "y1": 1.0}) == pytest.approx(-0.25)


def test_parse_constant_zero():
    e = parse("0")
    assert e.is_const(0.0)
    assert e.evaluate({}) == 0.0


def test_derivative_matches_written_form():
    f = parse(LOWER_31, ["x1", "y1"])
    d = differentiate(f, "y1")
    ref = parse("y1^3 - x1*y1", ["x1", "y1"])
    rng = np.random.default_rng(0)
    for x, y in rng.uniform(-2, 2, (10, 2)):
        env = {"x1": x, "y1": y}
        assert d.evaluate(env) == pytest.approx(ref.evaluate(env), abs=1e-13)
    d2 = differentiate(f, "y1", 2)
    ref2 = parse("3*y1^2 - x1", ["x1", "y1"])
    for x, y in rng.uniform(-2, 2, (10, 2)):
        env = {"x1": x, "y1": y}
        assert d2.evaluate(env) == pytest.approx(ref2.evaluate(env), abs=1e-13)


def test_two_leader_lower_objective_value():
    f = parse("0.25*y1^4 - 0.5*(x1 + x2)*y1^2", ["x1", "x2", "y1"])
    assert f.evaluate({"x1": 0.5, "x2": 0.5, "y1": 1.0}) == pytest.approx(-0.25)


def test_hessian_and_mixed_third_derivative():
    f = parse(LOWER_31, ["x1", "y1"])
    H = hessian(f, ["y1"])
    assert H[0][0].evaluate({"x1": 0.3, "y1": 2.0}) == pytest.approx(12 - 0.3)
    mixed = H[0][0].diff("x1")
    for env in ({"x1": 0.0, "y1": 0.0}, {"x1": -0.7, "y1": 1.3}):
        assert mixed.evaluate(env) == -1.0


def test_third_tensor_of_quadratic_is_zero():
    q = parse("x1^2 + 3*x1*x2 - x2^2 + 4", ["x1", "x2"])
    T = third_tensor(q, ["x1", "x2"])
    assert all(e.is_const(0.0) for plane in T for row in plane for e in row)


def test_constant_derivative_and_order_check():
    assert Const(3.0).diff("x1").is_const(0.0)
    with pytest.raises(ValueError):
        differentiate(Var("x1"), "x1", 4)


def test_parse_errors_carry_position():
    with pytest.raises(ParseError):
        parse("x1 + * 2", ["x1"])
    with pytest.raises(ValueError):
        parse("z + 1", ["x1"])
    with pytest.raises(ValueError):
        parse("foo(x1)", ["x1"])


def test_power_is_right_associative_and_binds_tighter_than_minus():
    e = parse("-y1^2", ["y1"])
    assert e.evaluate({"y1": 3.0}) == -9.0
    e = parse("2^3^2")
    assert e.evaluate({}) == 2.0 ** 9


def test_domain_errors_and_margin():
    e = parse("log(x1) + sqrt(x1)", ["x1"])
    with pytest.raises(DomainError):
        e.evaluate({"x1": -1.0})
    assert e.domain_margin({"x1": 0.25}) == pytest.approx(0.25)
    with pytest.raises(DomainError):
        parse("1/(x1 - 1)", ["x1"]).evaluate({"x1": 1.0})


def test_compiled_matches_tree_evaluation():
    exprs = [parse(s, ["x1", "y1"]) for s in ("sin(x1)*exp(y1)", "x1^3/(1 + y1^2)", "sqrt(2 + cos(x1*y1))")]
    fn = compile_exprs(exprs, ["x1", "y1"])
    xs = np.linspace(-1, 1, 7)
    ys = np.linspace(-2, 2, 7)
    batch = fn(xs, ys)
    for k, (x, y) in enumerate(zip(xs, ys)):
        for j, e in enumerate(exprs):
            assert batch[j, k] == pytest.approx(e.evaluate({"x1": x, "y1": y}), rel=1e-14)
    assert compile_exprs([], ["x1"])(np.zeros(3)).shape == (0, 3)


def test_free_vars_shrink_under_differentiation():
    e = parse("x1*y1^2 + sin(x2)", ["x1", "x2", "y1"])
    for v in ("x1", "x2", "y1"):
        assert e.diff(v).free_vars() <= e.free_vars()


@settings(max_examples=60, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_round_trip_through_string(a, b):
    e = parse("x1^2*cos(y1) - 3*x1/(2 + y1^2) + exp(-x1)", ["x1", "y1"])
    again = parse(str(e), ["x1", "y1"])
    env = {"x1": a, "y1": b}
    assert again.evaluate(env) == pytest.approx(e.evaluate(env), rel=1e-12, abs=1e-12)


def test_gradient_of_pow_with_real_exponent():
    e = parse("(1 + x1^2)^1.5", ["x1"])
    g = gradient(e, ["x1"])[0]
    x = 0.7
    assert g.evaluate({"x1": x}) == pytest.approx(1.5 * (1 + x * x) ** 0.5 * 2 * x, rel=1e-13)
    assert math.isclose(e.evaluate({"x1": 0.0}), 1.0)
