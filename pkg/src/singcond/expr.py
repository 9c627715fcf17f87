"""Arithmetic expressions over positional variables x1..x9.

Expressions are parsed once into an immutable tree and compiled into three
evaluators: a scalar one built on :mod:`math`, a vectorised one built on
numpy (used by the Monte Carlo code), and a forward-mode one that pushes
:class:`Dual` numbers through the tree to get exact gradients.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'

``^`` binds tighter than unary minus, so ``-x1^2`` is ``-(x1^2)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ParseError

__all__ = [
    "Expression",
    "Dual",
    "parse",
    "FUNCTIONS",
    "CONSTANTS",
]

MAX_VARIABLES = 9

CONSTANTS = {"pi": math.pi, "e": math.e}

# name -> (min_args, max_args)
FUNCTIONS = {
    "exp": (1, 1),
    "log": (1, 1),
    "sqrt": (1, 1),
    "abs": (1, 1),
    "sign": (1, 1),
    "sin": (1, 1),
    "cos": (1, 1),
    "erf": (1, 1),
    "atan2": (2, 2),
    "min": (2, None),
    "max": (2, None),
}


# --------------------------------------------------------------------------
# Tree


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based


@dataclass(frozen=True)
class Const:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Node = Num | Var | Const | Neg | BinOp | Call


def _max_index(node) -> int:
    if isinstance(node, Var):
        return node.index
    if isinstance(node, Neg):
        return _max_index(node.arg)
    if isinstance(node, BinOp):
        return max(_max_index(node.left), _max_index(node.right))
    if isinstance(node, Call):
        return max(_max_index(a) for a in node.args)
    return 0


def _variables(node) -> frozenset:
    if isinstance(node, Var):
        return frozenset((node.index,))
    if isinstance(node, Neg):
        return _variables(node.arg)
    if isinstance(node, BinOp):
        return _variables(node.left) | _variables(node.right)
    if isinstance(node, Call):
        return frozenset().union(*(_variables(a) for a in node.args))
    return frozenset()


def _to_source(node) -> str:
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Const):
        return node.name
    if isinstance(node, Neg):
        return f"(-{_to_source(node.arg)})"
    if isinstance(node, BinOp):
        return f"({_to_source(node.left)} {node.op} {_to_source(node.right)})"
    return f"{node.name}({', '.join(_to_source(a) for a in node.args)})"


# --------------------------------------------------------------------------
# Parser

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)
_VAR_RE = re.compile(r"x([1-9])$")


def _tokenize(source: str):
    tokens = []
    pos = 0
    n = len(source)
    while pos < n:
        if source[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            bad = len(source[pos:]) - len(source[pos:].lstrip()) + pos
            raise ParseError(f"unexpected character {source[bad]!r}", bad)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.advance()
        if text != value or kind == "end":
            found = "end of input" if kind == "end" else repr(text)
            raise ParseError(f"expected {value!r}, found {found}", pos)

    def parse(self):
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {text!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, text, pos = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "ident":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                return self.call(text, pos)
            m = _VAR_RE.match(text)
            if m:
                return Var(int(m.group(1)))
            if text in CONSTANTS:
                return Const(text)
            if text in FUNCTIONS:
                raise ParseError(f"function {text!r} needs an argument list", pos)
            raise ParseError(f"unknown identifier {text!r}", pos)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(text)
        raise ParseError(f"expected a number, variable or '(', found {found}", pos)

    def call(self, name, pos):
        if name not in FUNCTIONS:
            raise ParseError(f"unknown function {name!r}", pos)
        self.expect("(")
        args = [self.expr()]
        while self.peek()[0] == "op" and self.peek()[1] == ",":
            self.advance()
            args.append(self.expr())
        self.expect(")")
        lo, hi = FUNCTIONS[name]
        if len(args) < lo or (hi is not None and len(args) > hi):
            want = f"{lo}" if lo == hi else f"at least {lo}"
            raise ParseError(f"{name}() takes {want} argument(s), got {len(args)}", pos)
        return Call(name, tuple(args))


# --------------------------------------------------------------------------
# Scalar backend


def _s_div(a, b):
    if b == 0.0:
        raise DomainError("division by zero")
    return a / b


def _s_pow(a, b):
    if a < 0.0 and not float(b).is_integer():
        raise DomainError(f"negative base {a!r} raised to non-integer power")
    if a == 0.0 and b < 0.0:
        raise DomainError("zero raised to a negative power")
    try:
        return math.pow(a, b)
    except OverflowError as exc:
        raise DomainError("overflow in power") from exc


def _s_exp(a):
    try:
        return math.exp(a)
    except OverflowError as exc:
        raise DomainError("overflow in exp") from exc


def _s_log(a):
    if a <= 0.0:
        raise DomainError(f"log of non-positive value {a!r}")
    return math.log(a)


def _s_sqrt(a):
    if a < 0.0:
        raise DomainError(f"sqrt of negative value {a!r}")
    return math.sqrt(a)


def _sign(a):
    return (a > 0) - (a < 0) + 0.0


_SCALAR_FUNCS = {
    "exp": _s_exp,
    "log": _s_log,
    "sqrt": _s_sqrt,
    "abs": abs,
    "sign": _sign,
    "sin": math.sin,
    "cos": math.cos,
    "erf": math.erf,
    "atan2": math.atan2,
    "min": min,
    "max": max,
}

_SCALAR_BINOPS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": _s_div,
    "^": _s_pow,
}


# --------------------------------------------------------------------------
# Vectorised backend (non-finite results are left in place for the caller)

_erf_vec = np.vectorize(math.erf, otypes=[float])

_ARRAY_FUNCS = {
    "exp": np.exp,
    "log": lambda a: np.log(np.where(a > 0, a, np.nan)),
    "sqrt": lambda a: np.sqrt(np.where(a >= 0, a, np.nan)),
    "abs": np.abs,
    "sign": np.sign,
    "sin": np.sin,
    "cos": np.cos,
    "erf": lambda a: _erf_vec(a) if np.ndim(a) else math.erf(a),
    "atan2": np.arctan2,
    "min": lambda *a: _reduce(np.minimum, a),
    "max": lambda *a: _reduce(np.maximum, a),
}


def _reduce(fn, args):
    out = args[0]
    for a in args[1:]:
        out = fn(out, a)
    return out


def _a_pow(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    bad = (a < 0) & (b != np.round(b))
    return np.where(bad, np.nan, np.power(np.where(bad, 1.0, a), b))


_ARRAY_BINOPS = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
    "^": _a_pow,
}


# --------------------------------------------------------------------------
# Forward-mode dual numbers


class Dual:
    """Value plus a vector of partial derivatives, one per input variable.

    ``value`` may be a float or an ndarray; each partial has the same shape.
    Non-finite results (from a singular point) propagate as nan/inf and are
    caught by :meth:`Expression.grad`.
    """

    __slots__ = ("value", "partials")

    def __init__(self, value, partials):
        self.value = value
        self.partials = tuple(partials)

    @classmethod
    def variable(cls, value, index, n):
        zero = np.zeros_like(value, dtype=float)
        one = np.ones_like(value, dtype=float)
        return cls(value, [one if i == index else zero for i in range(n)])

    def _lift(self, other):
        if isinstance(other, Dual):
            return other
        return Dual(other, [0.0] * len(self.partials))

    def _chain(self, value, deriv):
        return Dual(value, [deriv * p for p in self.partials])

    def __add__(self, other):
        o = self._lift(other)
        return Dual(self.value + o.value, [a + b for a, b in zip(self.partials, o.partials)])

    __radd__ = __add__

    def __sub__(self, other):
        o = self._lift(other)
        return Dual(self.value - o.value, [a - b for a, b in zip(self.partials, o.partials)])

    def __rsub__(self, other):
        return self._lift(other) - self

    def __neg__(self):
        return Dual(-self.value, [-p for p in self.partials])

    def __mul__(self, other):
        o = self._lift(other)
        return Dual(
            self.value * o.value,
            [a * o.value + self.value * b for a, b in zip(self.partials, o.partials)],
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        with np.errstate(all="ignore"):
            q = np.divide(self.value, o.value)
            return Dual(
                q,
                [np.divide(a - q * b, o.value) for a, b in zip(self.partials, o.partials)],
            )

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, other):
        o = self._lift(other)
        with np.errstate(all="ignore"):
            value = _a_pow(self.value, o.value)
            # d(a^b) = b a^(b-1) da + a^b log(a) db; the log term only when b varies
            da = o.value * _a_pow(self.value, o.value - 1.0)
            parts = []
            for a, b in zip(self.partials, o.partials):
                d = da * a
                if np.any(b != 0):
                    d = d + value * np.log(np.where(self.value > 0, self.value, np.nan)) * b
                parts.append(d)
        return Dual(value, parts)

    def __rpow__(self, other):
        return self._lift(other) ** self

    def __repr__(self):
        return f"Dual({self.value!r}, {self.partials!r})"


def _d_exp(a):
    v = np.exp(a.value)
    return a._chain(v, v)


def _d_log(a):
    v = a.value
    return a._chain(np.log(np.where(v > 0, v, np.nan)), 1.0 / v)


def _d_sqrt(a):
    v = np.sqrt(np.where(a.value >= 0, a.value, np.nan))
    return a._chain(v, 0.5 / v)


def _d_abs(a):
    # d|x|/dx := sign(x), so 0 at the kink
    return a._chain(np.abs(a.value), np.sign(a.value))


def _d_sign(a):
    return a._chain(np.sign(a.value), 0.0)


def _d_sin(a):
    return a._chain(np.sin(a.value), np.cos(a.value))


def _d_cos(a):
    return a._chain(np.cos(a.value), -np.sin(a.value))


def _d_erf(a):
    v = _ARRAY_FUNCS["erf"](a.value)
    return a._chain(v, 2.0 / math.sqrt(math.pi) * np.exp(-np.square(a.value)))


def _d_atan2(y, x):
    r2 = y.value * y.value + x.value * x.value
    return Dual(
        np.arctan2(y.value, x.value),
        [(x.value * dy - y.value * dx) / r2 for dy, dx in zip(y.partials, x.partials)],
    )


def _d_minmax(pick):
    def fn(*args):
        out = args[0]
        for a in args[1:]:
            take = pick(a.value, out.value)  # ties keep the earlier argument
            out = Dual(
                np.where(take, a.value, out.value),
                [np.where(take, pa, po) for pa, po in zip(a.partials, out.partials)],
            )
        return out

    return fn


_DUAL_FUNCS = {
    "exp": _d_exp,
    "log": _d_log,
    "sqrt": _d_sqrt,
    "abs": _d_abs,
    "sign": _d_sign,
    "sin": _d_sin,
    "cos": _d_cos,
    "erf": _d_erf,
    "atan2": _d_atan2,
    "min": _d_minmax(np.less),
    "max": _d_minmax(np.greater),
}



def _dualize(fn, plain):
    # constant subtrees stay plain floats; only lift when a Dual is involved
    def wrapped(*args):
        n = next((len(a.partials) for a in args if isinstance(a, Dual)), None)
        if n is None:
            with np.errstate(all="ignore"):
                return plain(*args)
        return fn(*(a if isinstance(a, Dual) else Dual(a, [0.0] * n) for a in args))

    return wrapped


_DUAL_FUNCS = {k: _dualize(f, _ARRAY_FUNCS[k]) for k, f in _DUAL_FUNCS.items()}

_DUAL_BINOPS = {
    "+": _dualize(lambda a, b: a + b, np.add),
    "-": _dualize(lambda a, b: a - b, np.subtract),
    "*": _dualize(lambda a, b: a * b, np.multiply),
    "/": _dualize(lambda a, b: a / b, np.divide),
    "^": _dualize(lambda a, b: a ** b, _a_pow),
}


# --------------------------------------------------------------------------
# Compilation


def _compile(node, binops, funcs, lift) -> Callable:
    """Turn the tree into nested closures taking a sequence of inputs."""
    if isinstance(node, Num):
        c = lift(node.value)
        return lambda x: c
    if isinstance(node, Const):
        c = lift(CONSTANTS[node.name])
        return lambda x: c
    if isinstance(node, Var):
        i = node.index - 1
        return lambda x: x[i]
    if isinstance(node, Neg):
        f = _compile(node.arg, binops, funcs, lift)
        return lambda x: -f(x)
    if isinstance(node, BinOp):
        fl = _compile(node.left, binops, funcs, lift)
        fr = _compile(node.right, binops, funcs, lift)
        op = binops[node.op]
        return lambda x: op(fl(x), fr(x))
    fn = funcs[node.name]
    parts = [_compile(a, binops, funcs, lift) for a in node.args]
    if len(parts) == 1:
        (p,) = parts
        return lambda x: fn(p(x))
    return lambda x: fn(*(p(x) for p in parts))


@dataclass(frozen=True)
class Expression:
    """Parsed expression in variables x1..x``arity``."""

    root: Node
    arity: int
    source: str = field(default="", compare=False)
    _scalar: Callable = field(init=False, repr=False, compare=False)
    _array: Callable = field(init=False, repr=False, compare=False)
    _dual: Callable = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        used = _max_index(self.root)
        if not 1 <= self.arity <= MAX_VARIABLES:
            raise ValueError(f"arity must be in 1..{MAX_VARIABLES}, got {self.arity}")
        if used > self.arity:
            raise ParseError(f"expression uses x{used} but arity is {self.arity}")
        object.__setattr__(self, "_scalar", _compile(self.root, _SCALAR_BINOPS, _SCALAR_FUNCS, float))
        object.__setattr__(self, "_array", _compile(self.root, _ARRAY_BINOPS, _ARRAY_FUNCS, float))
        object.__setattr__(self, "_dual", _compile(self.root, _DUAL_BINOPS, _DUAL_FUNCS, float))

    @property
    def max_index(self) -> int:
        return _max_index(self.root)

    @property
    def variables(self) -> frozenset:
        """1-based indices of the variables that occur."""
        return _variables(self.root)

    def _check_point(self, x):
        if len(x) < self.max_index:
            raise ValueError(f"point has dimension {len(x)}, expression needs {self.max_index}")

    def __call__(self, x: Sequence[float]) -> float:
        return self.evaluate(x)

    def evaluate(self, x: Sequence[float]) -> float:
        """Evaluate at a point; raises :class:`DomainError` off the domain."""
        self._check_point(x)
        try:
            value = self._scalar([float(v) for v in x])
        except (ZeroDivisionError, OverflowError, ValueError) as exc:
            raise DomainError(f"{self.to_source()}: {exc}") from exc
        if not math.isfinite(value):
            raise DomainError(f"{self.to_source()} is not finite at {list(x)}")
        return value

    def eval_array(self, X) -> np.ndarray:
        """Vectorised evaluation over rows of ``X`` (shape ``(N, d)``).

        Points outside the domain come back as nan or inf.
        """
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        self._check_point(X[0] if len(X) else np.zeros(self.arity))
        cols = [X[:, i] for i in range(X.shape[1])]
        with np.errstate(all="ignore"):
            out = self._array(cols)
        return np.broadcast_to(np.asarray(out, dtype=float), (X.shape[0],)).copy()

    def dual(self, x: Sequence[float]) -> Dual:
        n = max(len(x), 1)
        seeds = [Dual.variable(np.float64(v), i, n) for i, v in enumerate(x)]
        with np.errstate(all="ignore"):
            out = self._dual(seeds)
        if not isinstance(out, Dual):
            out = Dual(np.float64(out), [0.0] * n)
        return out

    def grad(self, x: Sequence[float]) -> np.ndarray:
        """Exact gradient with respect to every coordinate of ``x``."""
        self._check_point(x)
        out = self.dual([float(v) for v in x])
        g = np.array([float(p) for p in out.partials])
        if not np.isfinite(out.value) or not np.all(np.isfinite(g)):
            raise DomainError(f"{self.to_source()} is not differentiable at {list(x)}")
        return g

    def value_and_grad_array(self, X):
        """Vectorised values and gradients; returns ``(values (N,), grads (N, d))``."""
        X = np.asarray(X, dtype=float)
        N, d = X.shape
        seeds = [Dual.variable(X[:, i], i, d) for i in range(d)]
        with np.errstate(all="ignore"):
            out = self._dual(seeds)
        if not isinstance(out, Dual):
            return np.full(N, float(out)), np.zeros((N, d))
        vals = np.broadcast_to(out.value, (N,)).astype(float)
        grads = np.stack([np.broadcast_to(p, (N,)) for p in out.partials], axis=1).astype(float)
        return vals, grads

    def to_source(self) -> str:
        return _to_source(self.root)

    def __str__(self):
        return self.source or self.to_source()


def parse(source: str, arity: int | None = None) -> Expression:
    """Parse ``source`` into an :class:`Expression`.

    ``arity`` defaults to the highest variable index used (at least 1).
    """
    if not isinstance(source, str):
        raise ParseError(f"expression source must be text, got {type(source).__name__}")
    root = _Parser(source).parse()
    used = _max_index(root)
    if arity is None:
        arity = max(used, 1)
    return Expression(root, arity, source)


def combine(op: str, a: Expression, b: Expression) -> Expression:
    """Build ``a <op> b`` without re-parsing."""
    if op not in _SCALAR_BINOPS:
        raise ValueError(f"unknown operator {op!r}")
    return Expression(BinOp(op, a.root, b.root), max(a.arity, b.arity))


def as_expression(value, arity: int | None = None) -> Expression:
    if isinstance(value, Expression):
        return value
    return parse(value, arity)
