import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thinhomog.expr import EvaluationError, ExprSyntaxError, parse_expression
from thinhomog.profiles import (
    PartitionError,
    Profile,
    ProfileError,
    build_piecewise_approx,
    c1_distance,
    validate_hypothesis,
)


# ---------------------------------------------------------------- parser
def test_sine_expression_value():
    e = parse_expression("1 + 0.5*sin(2*pi*y)")
    assert e.evaluate(0.0, 0.25) == pytest.approx(1.5, abs=1e-15)


def test_power():
    assert parse_expression("x^2").evaluate(3.0) == 9.0


def test_unbalanced_paren_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse_expression("sin(")
    assert info.value.offset == 4


@pytest.mark.parametrize("src", ["1 +", "foo(x)", "(1", "1 2", "*3", "sin x"])
def test_syntax_errors(src):
    with pytest.raises(ExprSyntaxError):
        parse_expression(src)


def test_precedence_and_associativity():
    assert parse_expression("2^3^2").evaluate() == 512.0          # right-assoc
    assert parse_expression("-2^2").evaluate() == -4.0            # ^ binds tighter than unary minus
    assert parse_expression("1 - 2 - 3").evaluate() == -4.0
    assert parse_expression("8 / 4 / 2").evaluate() == 1.0
    assert parse_expression(" 1+ 2 *\t3 ").evaluate() == 7.0


def test_division_by_zero_raises():
    with pytest.raises(EvaluationError):
        parse_expression("1/x").evaluate(0.0)
    with pytest.raises(EvaluationError):
        parse_expression("0^(-1)").evaluate()


def test_functions():
    e = parse_expression("exp(x) + abs(y) + cos(pi)")
    assert e.evaluate(0.0, -2.0) == pytest.approx(1 + 2 - 1)


_atoms = st.sampled_from(["x", "y", "pi", "1.5", "2", "0.25"])


@st.composite
def _exprs(draw, depth=3):
    if depth == 0 or draw(st.booleans()):
        return draw(_atoms)
    kind = draw(st.sampled_from(["bin", "un", "neg"]))
    if kind == "bin":
        op = draw(st.sampled_from(["+", "-", "*"]))
        return f"({draw(_exprs(depth - 1))}){op}({draw(_exprs(depth - 1))})"
    if kind == "neg":
        return f"-({draw(_exprs(depth - 1))})"
    fn = draw(st.sampled_from(["sin", "cos", "abs"]))
    return f"{fn}({draw(_exprs(depth - 1))})"


@settings(max_examples=60, deadline=None)
@given(_exprs())
def test_print_parse_round_trip(src):
    e = parse_expression(src)
    back = parse_expression(e.to_text())
    r = np.random.default_rng(0)
    x, y = r.uniform(-2, 2, 100), r.uniform(-2, 2, 100)
    a, b = e.evaluate(x, y), back.evaluate(x, y)
    assert np.all(np.abs(a - b) <= 1e-15 * np.maximum(1.0, np.abs(a)))


# --------------------------------------------------------------- profiles
def test_constant_profile_validates():
    rep = validate_hypothesis(Profile.constant(1.0))
    assert rep.passed and rep.min_value == rep.max_value == 1.0
    assert rep.periodicity_defect == 0.0


def test_sine_profile_validates(sine_profile):
    assert validate_hypothesis(sine_profile).passed


def test_nonpositive_profile_is_hard_failure():
    prof = Profile.from_expr("0.4 + 0.5*sin(2*pi*y)", G0=0.5, G1=0.9)
    rep = validate_hypothesis(prof)
    assert not rep.passed and rep.hard_failure
    assert rep.min_value == pytest.approx(-0.1, abs=1e-3)


def test_bounds_and_breakpoints_checked():
    with pytest.raises(ProfileError):
        Profile.from_expr("1", G0=2.0, G1=1.0)
    with pytest.raises(ProfileError):
        Profile.piecewise([0.0, 0.7, 0.5, 1.0], ["1", "1", "1"], G0=1, G1=1)
    with pytest.raises(ProfileError):
        Profile.from_dict({"kind": "expr", "expr": "1", "G0": 1, "G1": 1, "period": 2})


def test_non_periodic_profile_fails():
    prof = Profile.from_expr("1 + 0.1*y", G0=1.0, G1=1.2)
    assert not validate_hypothesis(prof).passed


def test_piecewise_breakpoint_limits():
    prof = Profile.piecewise([0.0, 0.5, 1.0], ["1", "2 + 0.1*sin(2*pi*y)"], G0=1.0, G1=2.1)
    rep = validate_hypothesis(prof)
    assert rep.passed
    assert rep.breakpoint_limits[0]["jump"] == pytest.approx(1.1, abs=1e-3)
    assert prof(0.5, 0.0) == 2.0 and prof(0.5, 0.0, side="left") == 1.0


def test_dict_round_trip(lp_profile):
    d = lp_profile.to_dict()
    again = Profile.from_dict(d)
    assert again.hash == lp_profile.hash
    xs, ys = np.linspace(0, 1, 7), np.linspace(0, 1, 7)
    np.testing.assert_array_equal(again(xs, ys), lp_profile(xs, ys))


def test_piecewise_x_independent_single_interval(sine_profile):
    pw = build_piecewise_approx(sine_profile, 0.1)
    assert pw.n_intervals == 1
    ys = np.linspace(0, 1, 50)
    np.testing.assert_allclose(pw(0.3, ys), sine_profile(0.3, ys) + 0.05, atol=1e-14)


def test_piecewise_locally_periodic(lp_profile):
    pw = build_piecewise_approx(lp_profile, 0.1)
    z = np.asarray(pw.breakpoints)
    assert np.max(np.diff(z)) <= 0.25 + 1e-12
    r = np.random.default_rng(7)
    x, y = r.uniform(0, 1, 10_000), r.uniform(0, 1, 10_000)
    gap = pw(x, y) - lp_profile(x, y)
    assert gap.min() >= -1e-12 and gap.max() <= 0.1 + 1e-12


@pytest.mark.parametrize("delta,count", [(0.2, 2), (0.1, 4), (0.05, 8)])
def test_partition_counts(lp_profile, delta, count):
    assert build_piecewise_approx(lp_profile, delta).n_intervals == count


def test_large_delta_single_interval(lp_profile):
    assert build_piecewise_approx(lp_profile, 1.0).n_intervals == 1


def test_partition_refines_as_delta_shrinks(lp_profile):
    counts = [build_piecewise_approx(lp_profile, d).n_intervals for d in (0.4, 0.2, 0.1, 0.05, 0.03)]
    assert counts == sorted(counts)


def test_partition_explosion_reports():
    prof = Profile.from_expr("1 + 0.5*x + 0.1*sin(2*pi*y)", G0=0.9, G1=1.6)
    with pytest.raises(PartitionError) as info:
        build_piecewise_approx(prof, 1e-3, max_intervals=16)
    assert info.value.needed_length is not None


def test_piecewise_as_profile_validates(lp_profile):
    pw = build_piecewise_approx(lp_profile, 0.1)
    rep = validate_hypothesis(pw)
    assert rep.passed


def test_c1_distance_examples():
    a = Profile.constant(1.0)
    assert c1_distance(a, a) == 0.0
    t = 0.1
    b = Profile.from_expr(f"1 + {t}*sin(2*pi*y)", G0=0.9, G1=1.1)
    assert c1_distance(a, b) == pytest.approx(t + 2 * math.pi * t, rel=1e-6)
    with pytest.raises(ProfileError):
        c1_distance(a, Profile.constant(1.0, L=2.0))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 0.3), st.floats(0.0, 0.3), st.integers(1, 3))
def test_c1_distance_dominates_sup(a1, a2, k):
    a = Profile.from_expr(f"1 + {a1}*sin(2*pi*y)", G0=0.6, G1=1.4)
    b = Profile.from_expr(f"1 + {a2}*cos({2 * k}*pi*y)", G0=0.6, G1=1.4)
    ys = np.arange(1024) / 1024
    assert c1_distance(a, b) >= np.max(np.abs(a(0.5, ys) - b(0.5, ys))) - 1e-15
