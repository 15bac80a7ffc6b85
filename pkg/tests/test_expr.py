import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from algebroid_lab import expr as ex
from oracles import central_difference


def test_parse_and_evaluate_examples():
    assert ex.evaluate(ex.parse("x^2+y"), {"x": 2, "y": 1}) == 5
    assert ex.evaluate(ex.parse("exp(r^2/2)"), {"r": 0}) == 1
    assert ex.evaluate(ex.parse("4*pi*r/exp(r^2/2)"), {"r": 1}) == pytest.approx(4 * math.pi * math.exp(-0.5), rel=1e-15)
    assert ex.evaluate(ex.parse("3.5"), {}) == 3.5
    assert abs(ex.evaluate(ex.parse("sin(pi/2)"), {}) - 1) < 1e-15


def test_precedence_and_unary_minus():
    assert ex.evaluate(ex.parse("-2^2"), {}) == -4
    assert ex.evaluate(ex.parse("2^3^2"), {}) == 512
    assert ex.evaluate(ex.parse("1-2-3"), {}) == -4
    assert ex.evaluate(ex.parse("8/2/2"), {}) == 2
    assert ex.evaluate(ex.parse("2*(3+4)"), {}) == 14
    assert ex.evaluate(ex.parse("1e-3*2"), {}) == pytest.approx(2e-3)


def test_errors():
    with pytest.raises(ex.ExprDomainError):
        ex.evaluate(ex.parse("x/y"), {"x": 1, "y": 0})
    with pytest.raises(ex.ExprDomainError):
        ex.evaluate(ex.parse("sqrt(x)"), {"x": -1})
    with pytest.raises(ex.ExprDomainError):
        ex.evaluate(ex.parse("log(x)"), {"x": 0})
    with pytest.raises(ex.UnboundVariableError):
        ex.evaluate(ex.parse("x+y"), {"x": 1})
    with pytest.raises(ex.ExprSyntaxError) as info:
        ex.parse("x + * y")
    assert info.value.offset == 4
    with pytest.raises(ex.ExprSyntaxError):
        ex.parse("foo(x)")
    with pytest.raises(ex.ExprSyntaxError):
        ex.parse("(x+1")


def test_free_vars_and_substitute():
    e = ex.parse("x*sin(y) + pi")
    assert ex.free_vars(e) == {"x", "y"}
    s = ex.substitute(e, {"y": "x^2"})
    assert ex.free_vars(s) == {"x"}
    assert ex.evaluate(s, {"x": 0.3}) == pytest.approx(0.3 * math.sin(0.09) + math.pi)


def test_diff_examples():
    assert ex.evaluate(ex.diff(ex.parse("x^2"), "x"), {"x": 3}) == 6
    assert ex.evaluate(ex.diff(ex.parse("exp(r^2/2)"), "r"), {"r": 1}) == pytest.approx(math.exp(0.5), rel=1e-14)
    assert ex.diff(ex.parse("y"), "x").is_zero()


def test_str_roundtrip():
    e = ex.parse("-(x - y)^2 / (1 + sqrt(x^2 + 1)) - 2^-1")
    env = {"x": 0.7, "y": -0.2}
    assert ex.evaluate(ex.parse(str(e)), env) == pytest.approx(ex.evaluate(e, env), rel=1e-15)


def test_compiled_matches_scalar():
    e = ex.parse("x*exp(-y^2) + cos(x*y)")
    f = ex.compile_exprs([e, ex.diff(e, "y")], ["x", "y"])
    xs = np.linspace(-1, 1, 7)
    ys = np.linspace(-2, 0.5, 7)
    vals = f(xs, ys)
    for i in range(7):
        env = {"x": xs[i], "y": ys[i]}
        assert vals[0, i] == pytest.approx(ex.evaluate(e, env), rel=1e-14)
        assert vals[1, i] == pytest.approx(ex.evaluate(ex.diff(e, "y"), env), rel=1e-14)


# ---------------------------------------------------------------------------
# random smooth expressions


def _random_smooth(rng: np.random.Generator, depth: int) -> str:
    if depth == 0 or rng.random() < 0.2:
        choice = rng.integers(3)
        if choice == 0:
            return f"{rng.uniform(-2, 2):.6f}"
        return ["x", "y"][choice - 1]
    a = _random_smooth(rng, depth - 1)
    b = _random_smooth(rng, depth - 1)
    kind = rng.integers(9)
    return [
        f"({a} + {b})",
        f"({a} - {b})",
        f"({a} * {b})",
        f"({a} / (1.5 + sin({b})))",
        f"({a})^{int(rng.integers(1, 4))}",
        f"sin({a})",
        f"cos({a})",
        f"exp(sin({a}))",
        f"log(1 + ({a})^2) + sqrt(1 + ({b})^2)",
    ][kind]


def test_random_expressions_match_central_differences():
    rng = np.random.default_rng(1234)
    worst = 0.0
    for _ in range(1000):
        e = ex.parse(_random_smooth(rng, 4))
        x0, y0 = rng.uniform(-1, 1, 2)
        for name in ("x", "y"):
            d = ex.evaluate(ex.diff(e, name), {"x": x0, "y": y0})

            def f(v):
                env = {"x": x0, "y": y0}
                env[name] = v
                return ex.evaluate(e, env)

            fd = central_difference(f, x0 if name == "x" else y0, 1e-5)
            worst = max(worst, abs(d - fd) / (1 + abs(d)))
    assert worst < 1e-6


coeff = st.floats(-5, 5, allow_nan=False)
point = st.floats(-1, 1, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(a=coeff, b=coeff, x=point, y=point)
def test_diff_is_linear(a, b, x, y):
    e1 = ex.parse("x^3*y + sin(x*y)")
    e2 = ex.parse("exp(x)/(2 + cos(y))")
    combo = ex.as_expr(a) * e1 + ex.as_expr(b) * e2
    env = {"x": x, "y": y}
    lhs = ex.evaluate(ex.diff(combo, "x"), env)
    rhs = a * ex.evaluate(ex.diff(e1, "x"), env) + b * ex.evaluate(ex.diff(e2, "x"), env)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_compile_deep_and_shared_trees():
    e = ex.var("x")
    for _ in range(2000):
        e = ex.sin(e) + ex.const(0.001) * ex.var("x")
    assert np.isfinite(ex.compile_exprs([e], ["x"])(0.3)[0])
    shared = ex.parse("exp(x) * y")
    big = shared
    for _ in range(30):
        big = big + big * shared
    f = ex.compile_exprs([big], ["x", "y"])
    assert "_t" in f.source
    s = math.exp(0.01) * 0.02
    assert f(0.01, 0.02)[0] == pytest.approx(s * (1 + s) ** 30, rel=1e-12)
