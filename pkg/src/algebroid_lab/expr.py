"""Small symbolic expression engine for structure functions and parametrizations.

Expressions are immutable trees.  They can be parsed from text, evaluated
at a point (scalar, ``math`` semantics) or on numpy arrays (vectorized,
compiled to a Python lambda), and differentiated symbolically.

Grammar::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('+' | '-') unary | power
    power   := atom ('^' unary)?
    atom    := NUMBER | 'pi' | NAME | NAME '(' expr ')' | '(' expr ')'

``^`` is right associative and binds tighter than unary minus, so ``-x^2``
means ``-(x^2)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Expr",
    "Const",
    "Var",
    "BinOp",
    "Func",
    "ExprError",
    "ExprSyntaxError",
    "ExprDomainError",
    "UnboundVariableError",
    "FUNCTIONS",
    "parse",
    "as_expr",
    "evaluate",
    "diff",
    "substitute",
    "free_vars",
    "compile_exprs",
    "const",
    "var",
    "sin",
    "cos",
    "exp",
    "log",
    "sqrt",
]


class ExprError(Exception):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int, source: str = ""):
        self.offset = offset
        self.source = source
        super().__init__(f"{message} at offset {offset}")


class ExprDomainError(ExprError, ArithmeticError):
    pass


class UnboundVariableError(ExprError, KeyError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(name)

    def __str__(self) -> str:
        return f"unbound variable {self.name!r}"


Number = Union[int, float]
ExprLike = Union["Expr", int, float, str]


class Expr:
    """Base node.  Arithmetic operators build new (constant-folded) trees."""

    __slots__ = ()

    def __add__(self, other: ExprLike) -> Expr:
        return add(self, as_expr(other))

    def __radd__(self, other: ExprLike) -> Expr:
        return add(as_expr(other), self)

    def __sub__(self, other: ExprLike) -> Expr:
        return sub(self, as_expr(other))

    def __rsub__(self, other: ExprLike) -> Expr:
        return sub(as_expr(other), self)

    def __mul__(self, other: ExprLike) -> Expr:
        return mul(self, as_expr(other))

    def __rmul__(self, other: ExprLike) -> Expr:
        return mul(as_expr(other), self)

    def __truediv__(self, other: ExprLike) -> Expr:
        return div(self, as_expr(other))

    def __rtruediv__(self, other: ExprLike) -> Expr:
        return div(as_expr(other), self)

    def __pow__(self, other: ExprLike) -> Expr:
        return power(self, as_expr(other))

    def __rpow__(self, other: ExprLike) -> Expr:
        return power(as_expr(other), self)

    def __neg__(self) -> Expr:
        return neg(self)

    def __pos__(self) -> Expr:
        return self

    def __call__(self, **env: float) -> float:
        return evaluate(self, env)

    @property
    def free_vars(self) -> frozenset[str]:
        return free_vars(self)

    def diff(self, name: str) -> Expr:
        return diff(self, name)

    def subs(self, mapping: Mapping[str, ExprLike]) -> Expr:
        return substitute(self, mapping)

    def is_zero(self) -> bool:
        return isinstance(self, Const) and self.value == 0.0


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float
    label: str | None = None

    def __str__(self) -> str:
        if self.label is not None:
            return self.label
        return _format_number(self.value)


@dataclass(frozen=True, eq=True)
class Var(Expr):
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True, eq=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    def __str__(self) -> str:
        prec = _PRECEDENCE[self.op]
        lhs = _wrap(self.left, prec, right_side=self.op == "^")
        rhs = _wrap(self.right, prec, right_side=self.op != "^")
        return f"{lhs}{self.op}{rhs}" if self.op == "^" else f"{lhs} {self.op} {rhs}"


@dataclass(frozen=True, eq=True)
class Func(Expr):
    name: str
    arg: Expr

    def __str__(self) -> str:
        return f"{self.name}({self.arg})"


_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _format_number(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def _wrap(e: Expr, parent_prec: int, right_side: bool) -> str:
    text = str(e)
    if isinstance(e, BinOp):
        prec = _PRECEDENCE[e.op]
        if prec < parent_prec or (prec == parent_prec and right_side):
            return f"({text})"
    elif isinstance(e, Const) and e.label is None and e.value < 0:
        return f"({text})"
    return text


# ---------------------------------------------------------------------------
# construction with constant folding

ZERO = Const(0.0)
ONE = Const(1.0)
PI = Const(math.pi, "pi")


def as_expr(value: ExprLike) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, str):
        return parse(value)
    if isinstance(value, (int, float, np.floating, np.integer)):
        return Const(float(value))
    raise TypeError(f"cannot convert {type(value).__name__} to Expr")


def const(value: float) -> Const:
    return Const(float(value))


def var(name: str) -> Var:
    return Var(name)


def _is_const(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return BinOp("-", a, b)


def neg(a: Expr) -> Expr:
    if _is_const(a):
        return Const(-a.value)
    return BinOp("*", Const(-1.0), a)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b) and b.value != 0.0:
        return Const(a.value / b.value)
    if _is_const(a, 0.0) and not _is_const(b, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    return BinOp("/", a, b)


def power(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        return ONE
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b):
        try:
            return Const(_scalar_pow(a.value, b.value))
        except ExprDomainError:
            pass
    return BinOp("^", a, b)


def _func(name: str) -> Callable[[ExprLike], Expr]:
    def build(arg: ExprLike) -> Expr:
        e = as_expr(arg)
        if isinstance(e, Const):
            try:
                return Const(_SCALAR_FUNCS[name](e.value))
            except ExprDomainError:
                pass
        return Func(name, e)

    build.__name__ = name
    return build


sin = _func("sin")
cos = _func("cos")
exp = _func("exp")
log = _func("log")
sqrt = _func("sqrt")

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(src, pos)
        if m is None or m.end() == pos:
            offset = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {src[offset]!r}", offset, src)
        kind = m.lastgroup
        text = m.group(kind)
        start = m.start(kind)
        if text == "**":
            text = "^"
        tokens.append((kind, text, start))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def take(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> None:
        kind, value, offset = self.take()
        if value != text or kind == "end":
            found = "end of input" if kind == "end" else repr(value)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", offset, self.src)

    def parse(self) -> Expr:
        e = self.expr()
        kind, value, offset = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {value!r}", offset, self.src)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = BinOp(op, e, rhs)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            e = BinOp(op, e, rhs)
        return e

    def unary(self) -> Expr:
        kind, value, _ = self.peek()
        if kind == "op" and value in ("+", "-"):
            self.take()
            operand = self.unary()
            return operand if value == "+" else neg(operand)
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            exponent = self.unary()
            return BinOp("^", base, exponent)
        return base

    def atom(self) -> Expr:
        kind, value, offset = self.take()
        if kind == "num":
            return Const(float(value))
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if value not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {value!r}", offset, self.src)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Func(value, arg)
            if value == "pi":
                return PI
            if value in FUNCTIONS:
                raise ExprSyntaxError(f"function {value!r} needs an argument", offset, self.src)
            return Var(value)
        if kind == "op" and value == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(value)
        raise ExprSyntaxError(f"unexpected {found}", offset, self.src)


@lru_cache(maxsize=4096)
def parse(src: str) -> Expr:
    """Parse ``src`` into an expression tree.

    Raises :class:`ExprSyntaxError` (carrying the byte offset) on malformed
    input or an unknown function name.
    """
    if not isinstance(src, str):
        raise TypeError("parse expects a string")
    return _Parser(src).parse()


# ---------------------------------------------------------------------------
# scalar evaluation


def _scalar_pow(a: float, b: float) -> float:
    try:
        result = math.pow(a, b)
    except (ValueError, ZeroDivisionError) as exc:
        raise ExprDomainError(f"{a}^{b} is undefined") from exc
    except OverflowError as exc:
        raise ExprDomainError(f"{a}^{b} overflows") from exc
    return result


def _checked(fn: Callable[[float], float], name: str) -> Callable[[float], float]:
    def wrapped(x: float) -> float:
        try:
            return fn(x)
        except (ValueError, OverflowError) as exc:
            raise ExprDomainError(f"{name}({x}) is undefined") from exc

    return wrapped


_SCALAR_FUNCS: dict[str, Callable[[float], float]] = {
    "sin": _checked(math.sin, "sin"),
    "cos": _checked(math.cos, "cos"),
    "exp": _checked(math.exp, "exp"),
    "log": _checked(math.log, "log"),
    "sqrt": _checked(math.sqrt, "sqrt"),
}


def evaluate(e: Expr, env: Mapping[str, float]) -> float:
    """Evaluate ``e`` in double precision.

    Raises :class:`UnboundVariableError` for free variables missing from
    ``env`` and :class:`ExprDomainError` for division by zero, log/sqrt of
    negatives and similar.
    """
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return float(env[e.name])
        except KeyError:
            raise UnboundVariableError(e.name) from None
    if isinstance(e, BinOp):
        a = evaluate(e.left, env)
        b = evaluate(e.right, env)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if b == 0.0:
                raise ExprDomainError("division by zero")
            return a / b
        return _scalar_pow(a, b)
    if isinstance(e, Func):
        return _SCALAR_FUNCS[e.name](evaluate(e.arg, env))
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# structural helpers


def free_vars(e: Expr) -> frozenset[str]:
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, BinOp):
        return free_vars(e.left) | free_vars(e.right)
    if isinstance(e, Func):
        return free_vars(e.arg)
    return frozenset()


def substitute(e: Expr, mapping: Mapping[str, ExprLike]) -> Expr:
    """Replace variables by expressions (simultaneously)."""
    repl = {k: as_expr(v) for k, v in mapping.items()}

    def go(node: Expr) -> Expr:
        if isinstance(node, Var):
            return repl.get(node.name, node)
        if isinstance(node, BinOp):
            return _BUILDERS[node.op](go(node.left), go(node.right))
        if isinstance(node, Func):
            return _func(node.name)(go(node.arg))
        return node

    return go(e)


_BUILDERS = {"+": add, "-": sub, "*": mul, "/": div, "^": power}


# ---------------------------------------------------------------------------
# differentiation


def diff(e: Expr, name: str) -> Expr:
    """Exact symbolic derivative of ``e`` with respect to variable ``name``."""
    return _diff(e, name)


@lru_cache(maxsize=65536)
def _diff(e: Expr, name: str) -> Expr:
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == name else ZERO
    if isinstance(e, BinOp):
        u, v = e.left, e.right
        if e.op in ("+", "-"):
            return _BUILDERS[e.op](_diff(u, name), _diff(v, name))
        du, dv = _diff(u, name), _diff(v, name)
        if e.op == "*":
            return add(mul(du, v), mul(u, dv))
        if e.op == "/":
            if dv.is_zero():
                return div(du, v)
            return div(sub(mul(du, v), mul(u, dv)), power(v, Const(2.0)))
        # power
        if name not in free_vars(v):
            if du.is_zero():
                return ZERO
            return mul(mul(v, power(u, sub(v, ONE))), du)
        # u^v with variable exponent: u^v * (v' log u + v u'/u)
        inner = add(mul(dv, Func("log", u)), div(mul(v, du), u))
        return mul(e, inner)
    if isinstance(e, Func):
        u = e.arg
        du = _diff(u, name)
        if du.is_zero():
            return ZERO
        if e.name == "sin":
            outer = cos(u)
        elif e.name == "cos":
            outer = neg(sin(u))
        elif e.name == "exp":
            outer = e
        elif e.name == "log":
            return div(du, u)
        else:  # sqrt
            return div(du, mul(Const(2.0), e))
        return mul(outer, du)
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# vectorized evaluation


def _children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, BinOp):
        return (e.left, e.right)
    if isinstance(e, Func):
        return (e.arg,)
    return ()


_MAX_INLINE_DEPTH = 40


class _Codegen:
    """Emit Python source for a DAG of nodes; shared subtrees become temporaries."""

    def __init__(self, names: Mapping[str, str]):
        self.names = names
        self.refs: dict[int, int] = {}
        self.temps: dict[int, str] = {}
        self.lines: list[str] = []

    def count(self, e: Expr) -> None:
        stack = [e]
        while stack:
            node = stack.pop()
            key = id(node)
            self.refs[key] = self.refs.get(key, 0) + 1
            if self.refs[key] == 1:
                stack.extend(_children(node))

    def emit(self, e: Expr) -> str:
        # iterative post-order walk; results hold (code, nesting depth)
        done: dict[int, tuple[str, int]] = {}
        stack: list[tuple[Expr, bool]] = [(e, False)]
        while stack:
            node, expanded = stack.pop()
            key = id(node)
            if key in done:
                continue
            if isinstance(node, Const):
                done[key] = (repr(node.value), 0)
                continue
            if isinstance(node, Var):
                if node.name not in self.names:
                    raise UnboundVariableError(node.name)
                done[key] = (self.names[node.name], 0)
                continue
            if key in self.temps:
                done[key] = (self.temps[key], 0)
                continue
            kids = _children(node)
            if not expanded:
                stack.append((node, True))
                stack.extend((k, False) for k in kids)
                continue
            parts = [done[id(k)] for k in kids]
            depth = max(d for _, d in parts) + 1
            if isinstance(node, BinOp):
                op = "**" if node.op == "^" else node.op
                code = f"({parts[0][0]} {op} {parts[1][0]})"
            else:
                code = f"_np.{node.name}({parts[0][0]})"
            # shared subtrees and deep chains (parser nesting limit) become temporaries
            if self.refs.get(key, 0) > 1 or depth >= _MAX_INLINE_DEPTH:
                name = f"_t{len(self.temps)}"
                self.lines.append(f"    {name} = {code}")
                self.temps[key] = name
                code, depth = name, 0
            done[key] = (code, depth)
        return done[id(e)][0]


def compile_exprs(
    exprs: Sequence[ExprLike], arg_names: Sequence[str]
) -> Callable[..., np.ndarray]:
    """Compile expressions into one vectorized function.

    The returned callable takes one array per name in ``arg_names`` (all
    broadcastable to a common shape ``S``) and returns an array of shape
    ``(len(exprs),) + S``.  Invalid operations produce ``nan``/``inf``
    rather than raising; callers decide how to treat non-finite values.
    """
    exprs = [as_expr(x) for x in exprs]
    arg_names = list(arg_names)
    mangled = {name: f"_a{i}" for i, name in enumerate(arg_names)}
    gen = _Codegen(mangled)
    for x in exprs:
        gen.count(x)
    body = ", ".join(gen.emit(x) for x in exprs)
    params = ", ".join(mangled[n] for n in arg_names)
    src = "\n".join([f"def _compiled({params}):", *gen.lines,
                      f"    return ({body}{',' if len(exprs) == 1 else ''})"])
    namespace: dict = {"_np": np}
    exec(src, namespace)  # noqa: S102 - generated from a parsed tree
    raw = namespace["_compiled"]

    def fn(*args: np.ndarray) -> np.ndarray:
        arrays = [np.asarray(a, dtype=float) for a in args]
        shape = np.broadcast_shapes(*(a.shape for a in arrays)) if arrays else ()
        with np.errstate(all="ignore"):
            values = raw(*arrays) if exprs else ()
        out = np.empty((len(exprs),) + shape)
        for i, v in enumerate(values):
            out[i] = v
        return out

    fn.source = src  # type: ignore[attr-defined]
    return fn


def evaluate_array(e: ExprLike, env: Mapping[str, np.ndarray]) -> np.ndarray:
    """Vectorized evaluation; raises :class:`ExprDomainError` on non-finite output."""
    e = as_expr(e)
    names = sorted(free_vars(e))
    missing = [n for n in names if n not in env]
    if missing:
        raise UnboundVariableError(missing[0])
    out = compile_exprs([e], names)(*(env[n] for n in names))[0]
    if not np.all(np.isfinite(out)):
        raise ExprDomainError("expression is undefined at some sample points")
    return out


def vars_in(exprs: Iterable[ExprLike]) -> frozenset[str]:
    out: frozenset[str] = frozenset()
    for x in exprs:
        out |= free_vars(as_expr(x))
    return out
