import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from reachkit import expr as ex
from reachkit.model import BUNDLED, load_spec


def test_parse_builds_tree_with_one_variable():
    e = ex.parse("2*sin(theta) + 2.6", ["theta"])
    assert isinstance(e, ex.Binary) and e.op == "+"
    assert ex.variables(e) == {"theta"}
    assert isinstance(e.left.right, ex.Unary) and e.left.right.op == "sin"


def test_parse_if_gives_piecewise():
    e = ex.parse("if(v1^2 >= 3, a1, a2)", ["v1", "a1", "a2"])
    assert isinstance(e, ex.Piecewise)
    assert isinstance(e.guard, ex.Compare) and e.guard.op == ">="


def test_undeclared_variable_names_offender():
    with pytest.raises(ex.UndeclaredVariableError) as info:
        ex.parse("sin(phi)", ["theta"])
    assert "phi" in str(info.value)


@pytest.mark.parametrize("text", ["2*", "sin(x", "x + + ", "1 2", "if(x, 1, 2)", ""])
def test_syntax_errors(text):
    with pytest.raises(ex.ParseError):
        ex.parse(text, ["x"])


def test_syntax_error_reports_position():
    with pytest.raises(ex.ParseError) as info:
        ex.parse("x + * 2", ["x"])
    assert info.value.position == 4


def test_precedence_and_associativity():
    env = {"x": 2.0}
    assert ex.evaluate(ex.parse("2^3^2", ["x"]), env) == 512.0
    assert ex.evaluate(ex.parse("-x^2", ["x"]), env) == -4.0
    assert ex.evaluate(ex.parse("1 + 2*3 - 4/2", ["x"]), env) == 5.0
    assert ex.evaluate(ex.parse("1.5e2 + 2E-1", ["x"]), env) == 150.2


def test_eval_alpha_point():
    v = ex.evaluate(ex.parse("2*sin(theta)+2.6", ["theta"]), {"theta": 0.5244})
    assert v == pytest.approx(3.6014, abs=1e-4)


def test_eval_simple_cases():
    assert ex.evaluate(ex.parse("x - x", ["x"]), {"x": 7.3}) == 0.0
    assert ex.evaluate(ex.parse("if(v1^2>=3, 1, -1)", ["v1"]), {"v1": 2.0}) == 1.0
    assert ex.evaluate(ex.parse("if(v1^2>=3, 1, -1)", ["v1"]), {"v1": 1.0}) == -1.0
    assert ex.evaluate(ex.parse("min(x, 3) + max(x, 3)", ["x"]), {"x": 1.0}) == 4.0


@pytest.mark.parametrize("text,env", [("log(x)", 0.0), ("sqrt(x)", -1.0), ("1/x", 0.0), ("log(x - 2)", 1.0)])
def test_domain_errors(text, env):
    e = ex.parse(text, ["x"])
    with pytest.raises(ex.DomainError):
        ex.evaluate(e, {"x": env})
    with pytest.raises(ex.DomainError):
        ex.compile_vector([e], ["x"])((env,))


def test_piecewise_skips_untaken_branch():
    e = ex.parse("if(x > 0, sqrt(x), 0)", ["x"])
    assert ex.evaluate(e, {"x": -4.0}) == 0.0
    arr = ex.evaluate_array(e, {"x": np.array([-4.0, 4.0])})
    assert arr.tolist() == [0.0, 2.0]


def _deriv_value(text, var, env, vars):
    return ex.evaluate(ex.differentiate(ex.parse(text, vars), var), env)


def test_derivative_of_pendulum_controller():
    vars = ["theta", "thetadot"]
    d = ex.differentiate(ex.parse("-2*theta - 2*sin(theta) - 2*thetadot", vars), "theta")
    for th in (-0.5, 0.0, 0.3):
        assert ex.evaluate(d, {"theta": th, "thetadot": 0.1}) == pytest.approx(-2 - 2 * math.cos(th), abs=1e-14)


def test_derivative_of_barrier():
    vars = ["theta", "thetadot"]
    d = ex.differentiate(ex.parse("1 - 4*theta^2 - 2*thetadot^2", vars), "thetadot")
    assert ex.evaluate(d, {"theta": 0.2, "thetadot": 0.7}) == pytest.approx(-4 * 0.7)


def test_derivative_of_constant_is_zero():
    assert ex.simplify(ex.differentiate(ex.parse("3.5*2", ["x"]), "x")) == ex.ZERO


def test_abs_derivative_is_sign():
    d = ex.differentiate(ex.parse("abs(x)", ["x"]), "x")
    assert ex.evaluate(d, {"x": 2.0}) == 1.0
    assert ex.evaluate(d, {"x": -2.0}) == -1.0


def test_piecewise_derivative_is_branchwise():
    e = ex.parse("if(x >= 1, x^2, 3*x)", ["x"])
    d = ex.differentiate(e, "x")
    assert isinstance(d, ex.Piecewise) and d.guard == e.guard
    assert ex.evaluate(d, {"x": 2.0}) == 4.0
    assert ex.evaluate(d, {"x": 0.0}) == 3.0


def _bundled_expressions():
    out = []
    for name in ("pendulum", "cruise"):
        spec = load_spec(name)
        named = list(spec.f) + [g for row in spec.g for g in row] + list(spec.k) + [spec.h_D, spec.h_C, spec.h_G]
        out.extend((spec, e) for e in named)
    return out


def _away_from_guards(e, env):
    return all(abs(ex.evaluate(ex.sub(c.left, c.right), env)) > 1e-3 for c in ex.guards(e))


@pytest.mark.parametrize("index", range(len(_bundled_expressions())))
def test_symbolic_derivative_matches_central_difference(index):
    spec, e = _bundled_expressions()[index]
    rng = np.random.default_rng(index)
    lo, hi = np.array(spec.domain_lower), np.array(spec.domain_upper)
    h = 1e-6
    checked = 0
    while checked < 1000:
        x = rng.uniform(lo, hi)
        env = dict(zip(spec.state_names, x.tolist()))
        if ex.evaluate(spec.h_D, env) <= 0 or not _away_from_guards(e, env):
            continue
        for v in spec.state_names:
            d = ex.evaluate(ex.differentiate(e, v), env)
            up, dn = dict(env), dict(env)
            up[v] += h
            dn[v] -= h
            fd = (ex.evaluate(e, up) - ex.evaluate(e, dn)) / (2 * h)
            assert abs(d - fd) <= 1e-5 * (1 + abs(d)), (ex.to_string(e), v, env)
        checked += 1


# ---- random expression trees -------------------------------------------------

VARS = ["x", "y"]

leaves = st.one_of(
    st.sampled_from([ex.Variable("x"), ex.Variable("y")]),
    st.floats(-5, 5, allow_nan=False).map(lambda v: ex.Constant(round(v, 3))),
)


def _extend(children):
    safe_unary = st.sampled_from(["neg", "sin", "cos", "exp", "abs"])
    return st.one_of(
        st.builds(lambda op, c: ex.Unary(op, c), safe_unary, children),
        st.builds(lambda op, a, b: ex.Binary(op, a, b), st.sampled_from(["+", "-", "*"]), children, children),
        st.builds(lambda a: ex.Binary("^", a, ex.Constant(2.0)), children),
        st.builds(lambda op, a, b: ex.MinMax(op, a, b), st.sampled_from(["min", "max"]), children, children),
        st.builds(
            lambda op, a, b, c: ex.Piecewise(ex.Compare(op, a, ex.Constant(0.0)), b, c),
            st.sampled_from(["<", "<=", ">", ">="]), children, children, children,
        ),
    )


trees = st.recursive(leaves, _extend, max_leaves=12)
points = st.tuples(st.floats(-2, 2), st.floats(-2, 2))


def _close(a, b):
    if math.isnan(a) or math.isnan(b):
        return math.isnan(a) and math.isnan(b)
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= 1e-9 * (1 + abs(a))


@given(trees, points)
def test_print_parse_round_trip(e, p):
    env = dict(zip(VARS, p))
    text = ex.to_string(e)
    again = ex.parse(text, VARS)
    assert ex.to_string(ex.parse(ex.to_string(again), VARS)) == ex.to_string(again)
    try:
        a = ex.evaluate(e, env)
    except (ex.DomainError, OverflowError):
        return
    assert _close(a, ex.evaluate(again, env))


@given(trees, points)
def test_array_and_compiled_evaluation_agree_with_scalar(e, p):
    env = dict(zip(VARS, p))
    try:
        a = ex.evaluate(e, env)
    except (ex.DomainError, OverflowError):
        return
    with np.errstate(all="ignore"):
        arr = ex.evaluate_array(e, {k: np.array([v]) for k, v in env.items()}, 1)
    assert _close(a, float(arr[0]))
    assert _close(a, ex.compile_vector([e], VARS)(p)[0])


@given(trees, trees, st.floats(-3, 3), points)
def test_piecewise_exclusive_and_exhaustive(a, b, c, p):
    env = dict(zip(VARS, p))
    pw = ex.Piecewise(ex.Compare(">", ex.Variable("x"), ex.Constant(c)), a, b)
    try:
        va, vb = ex.evaluate(a, env), ex.evaluate(b, env)
    except (ex.DomainError, OverflowError):
        return
    chosen = va if env["x"] > c else vb
    assert _close(ex.evaluate(pw, env), chosen)


@given(trees)
def test_simplify_preserves_value(e):
    s = ex.simplify(e)
    for p in ((0.3, -1.2), (1.7, 0.4)):
        env = dict(zip(VARS, p))
        try:
            a = ex.evaluate(e, env)
        except (ex.DomainError, OverflowError):
            continue
        assert _close(a, ex.evaluate(s, env))


def test_bundled_configs_all_parse():
    for name in BUNDLED:
        load_spec(name)
