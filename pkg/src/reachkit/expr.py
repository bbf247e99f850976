"""Scalar expression trees: parsing, printing, evaluation and differentiation.

Expressions are immutable dataclass trees over named real variables.  The
grammar is a small infix language::

    2*sin(theta) + 2.6
    if(v1^2 >= 3, a1, a2)
    min(x, 1e-3) - abs(y)

``^`` (or ``**``) binds tighter than ``*``/``/``, which bind tighter than
``+``/``-``.  Unary minus binds looser than ``^`` so ``-x^2 == -(x^2)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

UNARY_OPS = ("neg", "sin", "cos", "tan", "exp", "log", "sqrt", "abs")
BINARY_OPS = ("+", "-", "*", "/", "^")
COMPARE_OPS = ("<", "<=", ">", ">=")
MINMAX_OPS = ("min", "max")


class ExprError(Exception):
    """Base class for expression errors."""


class ParseError(ExprError):
    def __init__(self, message: str, text: str, position: int):
        self.text = text
        self.position = position
        pointer = " " * position + "^"
        super().__init__(f"{message} at position {position}\n  {text}\n  {pointer}")


class UndeclaredVariableError(ParseError):
    def __init__(self, name: str, text: str, position: int):
        self.name = name
        super().__init__(f"undeclared variable {name!r}", text, position)


class DomainError(ExprError):
    """Raised when a node is evaluated outside its mathematical domain."""

    def __init__(self, message: str, node: "Expr"):
        self.node = node
        super().__init__(f"{message} in node `{to_string(node)}`")


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True)
class Variable:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    child: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Compare:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Piecewise:
    guard: Compare
    then: "Expr"
    otherwise: "Expr"


@dataclass(frozen=True)
class MinMax:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Constant, Variable, Unary, Binary, Piecewise, MinMax]
Env = Mapping[str, float]

ZERO = Constant(0.0)
ONE = Constant(1.0)


def variables(e) -> frozenset:
    """Names of all variables appearing in ``e``."""
    if isinstance(e, Variable):
        return frozenset([e.name])
    if isinstance(e, Constant):
        return frozenset()
    return frozenset().union(*(variables(c) for c in children(e)))


def children(e) -> tuple:
    if isinstance(e, Unary):
        return (e.child,)
    if isinstance(e, (Binary, Compare, MinMax)):
        return (e.left, e.right)
    if isinstance(e, Piecewise):
        return (e.guard, e.then, e.otherwise)
    return ()


def guards(e) -> list:
    """All Piecewise guards in ``e`` (outermost first, duplicates removed)."""
    out = []

    def walk(node):
        if isinstance(node, Piecewise) and node.guard not in out:
            out.append(node.guard)
        for c in children(node):
            walk(c)

    walk(e)
    return out


def is_smooth(e) -> bool:
    """False if ``e`` contains a branch (Piecewise, min/max or abs)."""
    if isinstance(e, (Piecewise, MinMax)):
        return False
    if isinstance(e, Unary) and e.op == "abs":
        return False
    return all(is_smooth(c) for c in children(e))


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|<=|>=|≤|≥|[-+*/^(),<>])
    """,
    re.VERBOSE,
)

_FUNCS1 = {"sin", "cos", "tan", "exp", "log", "sqrt", "abs"}
_NAMED_CONSTANTS = {"pi": math.pi}


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        if kind != "ws":
            value = m.group()
            if value == "**":
                value = "^"
            elif value == "≤":
                value = "<="
            elif value == "≥":
                value = ">="
            tokens.append((kind, value, pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, declared: Sequence[str]):
        self.text = text
        self.declared = set(declared)
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, v, pos = self.peek()
        if v != value or kind == "end":
            found = "end of input" if kind == "end" else repr(v)
            raise ParseError(f"expected {value!r}, found {found}", self.text, pos)
        return self.advance()

    def parse(self):
        e = self.additive()
        kind, v, pos = self.peek()
        if kind != "end":
            if v in COMPARE_OPS:
                raise ParseError("comparison is only allowed as an if() guard", self.text, pos)
            raise ParseError(f"unexpected token {v!r}", self.text, pos)
        return e

    def additive(self):
        e = self.multiplicative()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.advance()[1]
            e = Binary(op, e, self.multiplicative())
        return e

    def multiplicative(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.advance()[1]
            e = Binary(op, e, self.unary())
        return e

    def unary(self):
        kind, v, _ = self.peek()
        if kind == "op" and v == "-":
            self.advance()
            return Unary("neg", self.unary())
        if kind == "op" and v == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self):
        base = self.primary()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            self.advance()
            return Binary("^", base, self.unary())
        return base

    def comparison(self):
        left = self.additive()
        kind, v, pos = self.peek()
        if v not in COMPARE_OPS or kind != "op":
            raise ParseError("expected a comparison (<, <=, >, >=)", self.text, pos)
        self.advance()
        return Compare(v, left, self.additive())

    def primary(self):
        kind, v, pos = self.advance()
        if kind == "num":
            return Constant(float(v))
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                return self.call(v, pos)
            if v in self.declared:
                return Variable(v)
            if v in _NAMED_CONSTANTS:
                return Constant(_NAMED_CONSTANTS[v])
            raise UndeclaredVariableError(v, self.text, pos)
        if kind == "op" and v == "(":
            e = self.additive()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(v)
        raise ParseError(f"unexpected {found}", self.text, pos)

    def call(self, name: str, pos: int):
        self.expect("(")
        if name in _FUNCS1:
            arg = self.additive()
            self.expect(")")
            return Unary(name, arg)
        if name in MINMAX_OPS:
            a = self.additive()
            self.expect(",")
            b = self.additive()
            self.expect(")")
            return MinMax(name, a, b)
        if name == "if":
            guard = self.comparison()
            self.expect(",")
            a = self.additive()
            self.expect(",")
            b = self.additive()
            self.expect(")")
            return Piecewise(guard, a, b)
        raise ParseError(f"unknown function {name!r}", self.text, pos)


def parse(text: str, vars: Sequence[str]) -> Expr:
    """Parse ``text`` into an expression over the declared ``vars``."""
    if not text or not text.strip():
        raise ParseError("empty expression", text or "", 0)
    return _Parser(text, vars).parse()


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _prec(e) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return _PREC["neg"]
    if isinstance(e, Constant) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return _PREC["neg"]
    return 5


def _fmt_const(v: float) -> str:
    if math.isinf(v) or math.isnan(v):
        raise ExprError(f"cannot print non-finite constant {v}")
    return repr(float(v))


def to_string(e) -> str:
    """Render ``e`` in the parse grammar; ``parse(to_string(e))`` evaluates identically."""
    if isinstance(e, Constant):
        return _fmt_const(e.value)
    if isinstance(e, Variable):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            inner = to_string(e.child)
            return f"-({inner})" if _prec(e.child) < 5 else f"-{inner}"
        return f"{e.op}({to_string(e.child)})"
    if isinstance(e, Binary):
        p = _PREC[e.op]
        left, right = to_string(e.left), to_string(e.right)
        if e.op == "^":
            # right-associative; negative bases always need parentheses
            if _prec(e.left) <= p:
                left = f"({left})"
            if _prec(e.right) < p:
                right = f"({right})"
        else:
            if _prec(e.left) < p:
                left = f"({left})"
            # left-associative: equal precedence on the right needs parentheses
            if _prec(e.right) <= p:
                right = f"({right})"
        return f"{left} {e.op} {right}"
    if isinstance(e, Compare):
        return f"{to_string(e.left)} {e.op} {to_string(e.right)}"
    if isinstance(e, Piecewise):
        return f"if({to_string(e.guard)}, {to_string(e.then)}, {to_string(e.otherwise)})"
    if isinstance(e, MinMax):
        return f"{e.op}({to_string(e.left)}, {to_string(e.right)})"
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Scalar evaluation
# ---------------------------------------------------------------------------


def _compare(op: str, a, b):
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


def _is_integral(v: float) -> bool:
    return float(v).is_integer()


def evaluate(e, env: Env) -> float:
    """IEEE double evaluation of ``e``; raises DomainError naming the failing node."""
    if isinstance(e, Constant):
        return e.value
    if isinstance(e, Variable):
        try:
            return float(env[e.name])
        except KeyError:
            raise ExprError(f"no value bound for variable {e.name!r}") from None
    if isinstance(e, Unary):
        a = evaluate(e.child, env)
        op = e.op
        if op == "neg":
            return -a
        if op == "log":
            if a <= 0:
                raise DomainError(f"log of non-positive value {a}", e)
            return math.log(a)
        if op == "sqrt":
            if a < 0:
                raise DomainError(f"sqrt of negative value {a}", e)
            return math.sqrt(a)
        if op == "abs":
            return abs(a)
        if op == "exp":
            try:
                return math.exp(a)
            except OverflowError:
                raise DomainError(f"exp overflow at {a}", e) from None
        return getattr(math, op)(a)
    if isinstance(e, Binary):
        a = evaluate(e.left, env)
        b = evaluate(e.right, env)
        op = e.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if b == 0:
                raise DomainError("division by zero", e)
            return a / b
        if a < 0 and not _is_integral(b):
            raise DomainError(f"negative base {a} with non-integer exponent {b}", e)
        if a == 0 and b < 0:
            raise DomainError("zero raised to a negative power", e)
        try:
            return math.pow(a, b)
        except OverflowError:
            raise DomainError("power overflow", e) from None
    if isinstance(e, Piecewise):
        g = e.guard
        if _compare(g.op, evaluate(g.left, env), evaluate(g.right, env)):
            return evaluate(e.then, env)
        return evaluate(e.otherwise, env)
    if isinstance(e, MinMax):
        a = evaluate(e.left, env)
        b = evaluate(e.right, env)
        return min(a, b) if e.op == "min" else max(a, b)
    raise TypeError(f"cannot evaluate {e!r}")


# ---------------------------------------------------------------------------
# Vectorized evaluation
# ---------------------------------------------------------------------------

_NP_UNARY = {"sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "abs": np.abs}


def evaluate_array(e, columns: Mapping[str, np.ndarray], size: int | None = None) -> np.ndarray:
    """Evaluate ``e`` elementwise over equally shaped 1-D arrays.

    Piecewise nodes evaluate each branch only on the points selecting it, so
    a branch is never evaluated where its guard is false.
    """
    if size is None:
        size = len(next(iter(columns.values()))) if columns else 1
    return _eval_arr(e, columns, size)


def _eval_arr(e, cols, size):
    if isinstance(e, Constant):
        return np.full(size, e.value)
    if isinstance(e, Variable):
        try:
            return np.asarray(cols[e.name], dtype=float)
        except KeyError:
            raise ExprError(f"no value bound for variable {e.name!r}") from None
    if isinstance(e, Unary):
        a = _eval_arr(e.child, cols, size)
        op = e.op
        if op == "neg":
            return -a
        if op == "log":
            if np.any(a <= 0):
                raise DomainError(f"log of non-positive value {a[a <= 0][0]}", e)
            return np.log(a)
        if op == "sqrt":
            if np.any(a < 0):
                raise DomainError(f"sqrt of negative value {a[a < 0][0]}", e)
            return np.sqrt(a)
        with np.errstate(over="raise"):
            try:
                return _NP_UNARY[op](a)
            except FloatingPointError:
                raise DomainError(f"{op} overflow", e) from None
    if isinstance(e, Binary):
        a = _eval_arr(e.left, cols, size)
        op = e.op
        if op == "^" and isinstance(e.right, Constant) and _is_integral(e.right.value):
            n = int(e.right.value)
            if n < 0 and np.any(a == 0):
                raise DomainError("zero raised to a negative power", e)
            if n == 2:
                return a * a
            return np.power(a, float(n))
        b = _eval_arr(e.right, cols, size)
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if np.any(b == 0):
                raise DomainError("division by zero", e)
            return a / b
        bad = (a < 0) & (b != np.floor(b))
        if np.any(bad):
            raise DomainError("negative base with non-integer exponent", e)
        if np.any((a == 0) & (b < 0)):
            raise DomainError("zero raised to a negative power", e)
        return np.power(a, b)
    if isinstance(e, Piecewise):
        g = e.guard
        mask = _compare(g.op, _eval_arr(g.left, cols, size), _eval_arr(g.right, cols, size))
        out = np.empty(size)
        if mask.any():
            out[mask] = _eval_arr(e.then, _subset(cols, mask), int(mask.sum()))
        inv = ~mask
        if inv.any():
            out[inv] = _eval_arr(e.otherwise, _subset(cols, inv), int(inv.sum()))
        return out
    if isinstance(e, MinMax):
        a = _eval_arr(e.left, cols, size)
        b = _eval_arr(e.right, cols, size)
        return np.minimum(a, b) if e.op == "min" else np.maximum(a, b)
    raise TypeError(f"cannot evaluate {e!r}")


def _subset(cols, mask):
    return {k: np.asarray(v)[mask] for k, v in cols.items()}


# ---------------------------------------------------------------------------
# Compilation to Python closures (hot simulation loop)
# ---------------------------------------------------------------------------


def _py_source(e, names: dict) -> str:
    if isinstance(e, Constant):
        return repr(e.value)
    if isinstance(e, Variable):
        return names[e.name]
    if isinstance(e, Unary):
        a = _py_source(e.child, names)
        if e.op == "neg":
            return f"(-{a})"
        if e.op == "abs":
            return f"abs({a})"
        return f"_m.{e.op}({a})"
    if isinstance(e, Binary):
        a = _py_source(e.left, names)
        if e.op == "^":
            if isinstance(e.right, Constant) and _is_integral(e.right.value) and abs(e.right.value) <= 16:
                n = int(e.right.value)
                if n == 2:
                    return f"({a}*{a})"
                return f"({a}**{n})"
            return f"_m.pow({a}, {_py_source(e.right, names)})"
        b = _py_source(e.right, names)
        return f"({a} {e.op} {b})"
    if isinstance(e, Compare):
        return f"({_py_source(e.left, names)} {e.op} {_py_source(e.right, names)})"
    if isinstance(e, Piecewise):
        return (
            f"({_py_source(e.then, names)} if {_py_source(e.guard, names)} "
            f"else {_py_source(e.otherwise, names)})"
        )
    if isinstance(e, MinMax):
        return f"{e.op}({_py_source(e.left, names)}, {_py_source(e.right, names)})"
    raise TypeError(f"cannot compile {e!r}")


def compile_vector(exprs: Sequence, var_order: Sequence[str]) -> Callable:
    """Compile expressions into ``fn(x) -> tuple`` taking a positional state sequence.

    The compiled function raises ``DomainError`` (via the tree evaluator) on
    any arithmetic failure, so errors still identify the offending node.
    """
    names = {v: f"_x{i}" for i, v in enumerate(var_order)}
    unpack = ", ".join(names[v] for v in var_order) + ("," if len(var_order) == 1 else "")
    body = ", ".join(_py_source(e, names) for e in exprs) + ("," if len(exprs) == 1 else "")
    src = f"def _fn(_x):\n    {unpack} = _x\n    return ({body})\n"
    ns: dict = {"_m": math}
    exec(compile(src, "<reachkit-expr>", "exec"), ns)
    fast = ns["_fn"]
    exprs = tuple(exprs)
    order = tuple(var_order)

    def fn(x):
        try:
            return fast(x)
        except (ValueError, ZeroDivisionError, OverflowError):
            env = dict(zip(order, x))
            for e in exprs:
                evaluate(e, env)
            raise

    fn.source = src
    return fn


# ---------------------------------------------------------------------------
# Differentiation and constant folding
# ---------------------------------------------------------------------------


def _c(v: float) -> Constant:
    return Constant(float(v))


def _is_const(e, value: float | None = None) -> bool:
    return isinstance(e, Constant) and (value is None or e.value == value)


def add(a, b):
    return simplify(Binary("+", a, b))


def sub(a, b):
    return simplify(Binary("-", a, b))


def mul(a, b):
    return simplify(Binary("*", a, b))


def div(a, b):
    return simplify(Binary("/", a, b))


def neg(a):
    return simplify(Unary("neg", a))


def simplify(e):
    """Local constant folding and identity elimination (not a canonical form)."""
    if isinstance(e, Unary):
        a = e.child
        if isinstance(a, Constant):
            try:
                return _c(evaluate(Unary(e.op, a), {}))
            except (DomainError, OverflowError, ValueError):
                return e
        if e.op == "neg" and isinstance(a, Unary) and a.op == "neg":
            return a.child
        return e
    if isinstance(e, Binary):
        a, b, op = e.left, e.right, e.op
        if isinstance(a, Constant) and isinstance(b, Constant):
            try:
                return _c(evaluate(e, {}))
            except (DomainError, OverflowError, ValueError):
                return e
        if op == "+":
            if _is_const(a, 0.0):
                return b
            if _is_const(b, 0.0):
                return a
        elif op == "-":
            if _is_const(b, 0.0):
                return a
            if _is_const(a, 0.0):
                return simplify(Unary("neg", b))
        elif op == "*":
            if _is_const(a, 0.0) or _is_const(b, 0.0):
                return ZERO
            if _is_const(a, 1.0):
                return b
            if _is_const(b, 1.0):
                return a
            if _is_const(a, -1.0):
                return simplify(Unary("neg", b))
            if _is_const(b, -1.0):
                return simplify(Unary("neg", a))
        elif op == "/":
            if _is_const(a, 0.0):
                return ZERO
            if _is_const(b, 1.0):
                return a
        elif op == "^":
            if _is_const(b, 1.0):
                return a
            if _is_const(b, 0.0):
                return ONE
        return e
    if isinstance(e, Piecewise):
        if e.then == e.otherwise:
            return e.then
        return e
    return e


def differentiate(e, var: str):
    """Symbolic partial derivative of ``e`` with respect to ``var``.

    Piecewise and min/max differentiate branch-wise with the guard kept; the
    derivative of ``abs(u)`` is ``sign(u) * u'`` (taken as ``-u'`` at 0).
    """
    if isinstance(e, Constant):
        return ZERO
    if isinstance(e, Variable):
        return ONE if e.name == var else ZERO
    if isinstance(e, Unary):
        a = e.child
        da = differentiate(a, var)
        if _is_const(da, 0.0):
            return ZERO
        op = e.op
        if op == "neg":
            return neg(da)
        if op == "sin":
            return mul(simplify(Unary("cos", a)), da)
        if op == "cos":
            return mul(neg(simplify(Unary("sin", a))), da)
        if op == "tan":
            return div(da, simplify(Binary("^", simplify(Unary("cos", a)), _c(2))))
        if op == "exp":
            return mul(e, da)
        if op == "log":
            return div(da, a)
        if op == "sqrt":
            return div(da, mul(_c(2), e))
        if op == "abs":
            return simplify(Piecewise(Compare(">", a, ZERO), da, neg(da)))
        raise TypeError(op)
    if isinstance(e, Binary):
        a, b, op = e.left, e.right, e.op
        da = differentiate(a, var)
        db = differentiate(b, var)
        if op == "+":
            return add(da, db)
        if op == "-":
            return sub(da, db)
        if op == "*":
            return add(mul(da, b), mul(a, db))
        if op == "/":
            if _is_const(db, 0.0):
                return div(da, b)
            return div(sub(mul(da, b), mul(a, db)), simplify(Binary("^", b, _c(2))))
        # power
        if _is_const(db, 0.0):
            if _is_const(da, 0.0):
                return ZERO
            if isinstance(b, Constant):
                lowered = simplify(Binary("^", a, _c(b.value - 1.0)))
                return mul(mul(b, lowered), da)
            return mul(mul(b, simplify(Binary("^", a, sub(b, ONE)))), da)
        # a^b * (b' log a + b a'/a)
        term = mul(db, simplify(Unary("log", a)))
        if not _is_const(da, 0.0):
            term = add(term, div(mul(b, da), a))
        return mul(e, term)
    if isinstance(e, Piecewise):
        return simplify(Piecewise(e.guard, differentiate(e.then, var), differentiate(e.otherwise, var)))
    if isinstance(e, MinMax):
        da = differentiate(e.left, var)
        db = differentiate(e.right, var)
        op = "<=" if e.op == "min" else ">="
        return simplify(Piecewise(Compare(op, e.left, e.right), da, db))
    raise TypeError(f"cannot differentiate {e!r}")


def gradient(e, vars: Iterable[str]) -> tuple:
    return tuple(differentiate(e, v) for v in vars)


def fold(e):
    """Bottom-up ``simplify`` over the whole tree."""
    if isinstance(e, Unary):
        return simplify(Unary(e.op, fold(e.child)))
    if isinstance(e, Binary):
        return simplify(Binary(e.op, fold(e.left), fold(e.right)))
    if isinstance(e, Compare):
        return Compare(e.op, fold(e.left), fold(e.right))
    if isinstance(e, Piecewise):
        return simplify(Piecewise(fold(e.guard), fold(e.then), fold(e.otherwise)))
    if isinstance(e, MinMax):
        return MinMax(e.op, fold(e.left), fold(e.right))
    return e
