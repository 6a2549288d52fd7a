"""Scalar expression trees with exact symbolic differentiation.

Expressions are immutable.  They are built by :func:`parse` or by combining
nodes with the usual Python operators, evaluated with :meth:`Expr.evaluate`
(scalar, domain-checked) or compiled with :func:`compile_exprs` into a
numpy-vectorised callable for grid work.
"""
from __future__ import annotations

import math
import re
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Expr", "Const", "Var", "Neg", "Add", "Sub", "Mul", "Div", "IntPow", "Pow", "Func",
    "ParseError", "DomainError", "parse", "const", "differentiate", "gradient",
    "hessian", "third_tensor", "compile_exprs",
]

FUNCTIONS = ("exp", "log", "sin", "cos", "sqrt")


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class DomainError(ArithmeticError):
    """Raised when an expression is evaluated outside its domain."""


class Expr:
    """Base class of all expression nodes."""

    __slots__ = ()
    precedence = 100

    # construction helpers -------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, other):
        return power(self, _wrap(other))

    # interface -------------------------------------------------------------
    def evaluate(self, env: Mapping[str, float]) -> float:
        raise NotImplementedError

    def diff(self, var: str) -> "Expr":
        raise NotImplementedError

    def free_vars(self) -> frozenset[str]:
        raise NotImplementedError

    def to_source(self) -> str:
        """Python/numpy source for this node (used by :func:`compile_exprs`)."""
        raise NotImplementedError

    def domain_margin(self, env: Mapping[str, float]) -> float:
        """Distance-like margin to the nearest domain singularity at ``env``.

        The minimum over all log/sqrt/pow arguments and divisors encountered;
        ``inf`` when the tree has no singular operations.
        """
        return math.inf

    def is_const(self, value: float | None = None) -> bool:
        return False

    def __str__(self) -> str:
        return self.to_str()

    def __repr__(self) -> str:
        return f"Expr({self.to_str()!r})"

    def to_str(self) -> str:
        raise NotImplementedError

    def _child_str(self, child: "Expr", strict: bool = False) -> str:
        s = child.to_str()
        if child.precedence < self.precedence or (strict and child.precedence == self.precedence):
            return f"({s})"
        return s


def _wrap(value) -> Expr:
    if isinstance(value, Expr):
        return value
    return Const(float(value))


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value: float):
        object.__setattr__(self, "value", float(value))

    def __setattr__(self, key, value):
        raise AttributeError("Expr nodes are immutable")

    @property
    def precedence(self):
        return 0 if self.value < 0 else 100

    def evaluate(self, env):
        return self.value

    def diff(self, var):
        return ZERO

    def free_vars(self):
        return frozenset()

    def is_const(self, value=None):
        return value is None or self.value == value

    def to_source(self):
        return repr(self.value)

    def to_str(self):
        v = self.value
        if v == int(v) and abs(v) < 1e15:
            return str(int(v))
        return repr(v)

    def __eq__(self, other):
        return isinstance(other, Const) and other.value == self.value

    def __hash__(self):
        return hash(("const", self.value))


class Var(Expr):
    __slots__ = ("name",)

    def __init__(self, name: str):
        object.__setattr__(self, "name", name)

    def __setattr__(self, key, value):
        raise AttributeError("Expr nodes are immutable")

    def evaluate(self, env):
        try:
            return float(env[self.name])
        except KeyError:
            raise KeyError(f"variable {self.name!r} is not bound") from None

    def diff(self, var):
        return ONE if var == self.name else ZERO

    def free_vars(self):
        return frozenset((self.name,))

    def to_source(self):
        return self.name

    def to_str(self):
        return self.name

    def __eq__(self, other):
        return isinstance(other, Var) and other.name == self.name

    def __hash__(self):
        return hash(("var", self.name))


class _Node(Expr):
    """Interior node with a tuple of children."""

    __slots__ = ("args",)

    def __init__(self, *args: Expr):
        object.__setattr__(self, "args", tuple(args))

    def __setattr__(self, key, value):
        raise AttributeError("Expr nodes are immutable")

    def free_vars(self):
        out = frozenset()
        for a in self.args:
            out |= a.free_vars()
        return out

    def domain_margin(self, env):
        return min((a.domain_margin(env) for a in self.args), default=math.inf)

    def __eq__(self, other):
        return type(other) is type(self) and other._key() == self._key()

    def __hash__(self):
        return hash((type(self).__name__,) + self._key())

    def _key(self):
        return self.args


class Neg(_Node):
    __slots__ = ()
    precedence = 3

    def evaluate(self, env):
        return -self.args[0].evaluate(env)

    def diff(self, var):
        return neg(self.args[0].diff(var))

    def to_source(self):
        return f"(-{self.args[0].to_source()})"

    def to_str(self):
        return "-" + self._child_str(self.args[0], strict=True)


class Add(_Node):
    __slots__ = ()
    precedence = 1

    def evaluate(self, env):
        return self.args[0].evaluate(env) + self.args[1].evaluate(env)

    def diff(self, var):
        return add(self.args[0].diff(var), self.args[1].diff(var))

    def to_source(self):
        return f"({self.args[0].to_source()} + {self.args[1].to_source()})"

    def to_str(self):
        a, b = self.args
        return f"{self._child_str(a)} + {self._child_str(b, strict=True)}"


class Sub(_Node):
    __slots__ = ()
    precedence = 1

    def evaluate(self, env):
        return self.args[0].evaluate(env) - self.args[1].evaluate(env)

    def diff(self, var):
        return sub(self.args[0].diff(var), self.args[1].diff(var))

    def to_source(self):
        return f"({self.args[0].to_source()} - {self.args[1].to_source()})"

    def to_str(self):
        a, b = self.args
        return f"{self._child_str(a)} - {self._child_str(b, strict=True)}"


class Mul(_Node):
    __slots__ = ()
    precedence = 2

    def evaluate(self, env):
        return self.args[0].evaluate(env) * self.args[1].evaluate(env)

    def diff(self, var):
        a, b = self.args
        return add(mul(a.diff(var), b), mul(a, b.diff(var)))

    def to_source(self):
        return f"({self.args[0].to_source()} * {self.args[1].to_source()})"

    def to_str(self):
        a, b = self.args
        return f"{self._child_str(a)}*{self._child_str(b, strict=True)}"


class Div(_Node):
    __slots__ = ()
    precedence = 2

    def evaluate(self, env):
        num = self.args[0].evaluate(env)
        den = self.args[1].evaluate(env)
        if den == 0.0:
            raise DomainError(f"division by zero in {self}")
        return num / den

    def diff(self, var):
        a, b = self.args
        da, db = a.diff(var), b.diff(var)
        if db.is_const(0.0):
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), IntPow(b, 2))

    def domain_margin(self, env):
        own = abs(self.args[1].evaluate(env))
        return min(own, super().domain_margin(env))

    def to_source(self):
        return f"({self.args[0].to_source()} / {self.args[1].to_source()})"

    def to_str(self):
        a, b = self.args
        return f"{self._child_str(a)}/{self._child_str(b, strict=True)}"


class IntPow(_Node):
    """``base ^ n`` with an integer exponent."""

    __slots__ = ("n",)
    precedence = 4

    def __init__(self, base: Expr, n: int):
        super().__init__(base)
        object.__setattr__(self, "n", int(n))

    def _key(self):
        return self.args + (self.n,)

    def evaluate(self, env):
        b = self.args[0].evaluate(env)
        if self.n < 0 and b == 0.0:
            raise DomainError(f"zero raised to negative power in {self}")
        return b ** self.n

    def diff(self, var):
        base = self.args[0]
        db = base.diff(var)
        if db.is_const(0.0):
            return ZERO
        return mul(mul(Const(self.n), intpow(base, self.n - 1)), db)

    def domain_margin(self, env):
        own = abs(self.args[0].evaluate(env)) if self.n < 0 else math.inf
        return min(own, super().domain_margin(env))

    def to_source(self):
        return f"({self.args[0].to_source()} ** {self.n})"

    def to_str(self):
        n = str(self.n) if self.n >= 0 else f"({self.n})"
        return f"{self._child_str(self.args[0], strict=True)}^{n}"


class Pow(_Node):
    """``base ^ exponent`` for non-integer exponents, defined for base > 0."""

    __slots__ = ()
    precedence = 4

    def evaluate(self, env):
        b = self.args[0].evaluate(env)
        e = self.args[1].evaluate(env)
        if b <= 0.0:
            raise DomainError(f"non-positive base {b} in {self}")
        return math.exp(e * math.log(b))

    def diff(self, var):
        base, ex = self.args
        db, de = base.diff(var), ex.diff(var)
        if de.is_const(0.0):
            # constant exponent c: c * base^(c-1) * base'
            if db.is_const(0.0):
                return ZERO
            return mul(mul(ex, power(base, sub(ex, ONE))), db)
        inner = add(mul(de, Func("log", base)), div(mul(ex, db), base))
        return mul(self, inner)

    def domain_margin(self, env):
        own = self.args[0].evaluate(env)
        return min(own, super().domain_margin(env))

    def to_source(self):
        return f"np.exp({self.args[1].to_source()} * np.log({self.args[0].to_source()}))"

    def to_str(self):
        base, ex = self.args
        return f"{self._child_str(base, strict=True)}^{self._child_str(ex, strict=True)}"


class Func(_Node):
    __slots__ = ("name",)
    precedence = 100

    def __init__(self, name: str, arg: Expr):
        if name not in FUNCTIONS:
            raise ValueError(f"unknown function {name!r}")
        super().__init__(arg)
        object.__setattr__(self, "name", name)

    def _key(self):
        return self.args + (self.name,)

    def evaluate(self, env):
        a = self.args[0].evaluate(env)
        name = self.name
        if name == "exp":
            try:
                return math.exp(a)
            except OverflowError:
                return math.inf
        if name == "log":
            if a <= 0.0:
                raise DomainError(f"log of non-positive value {a}")
            return math.log(a)
        if name == "sqrt":
            if a < 0.0:
                raise DomainError(f"sqrt of negative value {a}")
            return math.sqrt(a)
        if name == "sin":
            return math.sin(a)
        return math.cos(a)

    def diff(self, var):
        arg = self.args[0]
        da = arg.diff(var)
        if da.is_const(0.0):
            return ZERO
        name = self.name
        if name == "exp":
            outer = self
        elif name == "log":
            return div(da, arg)
        elif name == "sqrt":
            return div(da, mul(TWO, self))
        elif name == "sin":
            outer = Func("cos", arg)
        else:
            outer = neg(Func("sin", arg))
        return mul(outer, da)

    def domain_margin(self, env):
        own = self.args[0].evaluate(env) if self.name in ("log", "sqrt") else math.inf
        return min(own, super().domain_margin(env))

    def to_source(self):
        return f"np.{self.name}({self.args[0].to_source()})"

    def to_str(self):
        return f"{self.name}({self.args[0].to_str()})"


ZERO = Const(0.0)
ONE = Const(1.0)
TWO = Const(2.0)


def const(value: float) -> Const:
    return Const(value)


# smart constructors: constant folding and 0/1 identities only -------------

def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if a.is_const(0.0):
        return b
    if b.is_const(0.0):
        return a
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if b.is_const(0.0):
        return a
    if a.is_const(0.0):
        return neg(b)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if a.is_const(0.0) or b.is_const(0.0):
        return ZERO
    if a.is_const(1.0):
        return b
    if b.is_const(1.0):
        return a
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(b, Const) and b.value == 0.0:
        raise DomainError("division by the constant zero")
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value / b.value)
    if a.is_const(0.0):
        return ZERO
    if b.is_const(1.0):
        return a
    return Div(a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.args[0]
    return Neg(a)


def intpow(base: Expr, n: int) -> Expr:
    if n == 0:
        return ONE
    if n == 1:
        return base
    if isinstance(base, Const):
        if base.value == 0.0 and n < 0:
            raise DomainError("zero raised to a negative power")
        return Const(base.value ** n)
    return IntPow(base, n)


def power(base: Expr, ex: Expr) -> Expr:
    if isinstance(ex, Const) and float(ex.value).is_integer():
        return intpow(base, int(ex.value))
    if isinstance(base, Const) and isinstance(ex, Const):
        if base.value <= 0.0:
            raise DomainError(f"non-positive base {base.value} with fractional exponent")
        return Const(base.value ** ex.value)
    return Pow(base, ex)


def func(name: str, arg: Expr) -> Expr:
    if isinstance(arg, Const):
        return Const(Func(name, arg).evaluate({}))
    return Func(name, arg)


# parsing -------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<id>[a-zA-Z][a-zA-Z0-9_]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise ParseError(f"unexpected character {src[bad]!r}", bad)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str, var_names: Sequence[str]):
        self.tokens = _tokenize(src)
        self.i = 0
        self.vars = set(var_names)

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value:
            raise ParseError(f"expected {value!r} but found {text or 'end of input'!r}", pos)

    def parse(self) -> Expr:
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {text!r}", pos)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            node = add(node, rhs) if op == "+" else sub(node, rhs)
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            node = mul(node, rhs) if op == "*" else div(node, rhs)
        return node

    def unary(self) -> Expr:
        kind, text, pos = self.peek()
        if kind == "op" and text in ("-", "+"):
            self.take()
            operand = self.unary()
            return neg(operand) if text == "-" else operand
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            ex = self.unary()  # right associative, allows y^-2
            return power(base, ex)
        return base

    def atom(self) -> Expr:
        kind, text, pos = self.take()
        if kind == "num":
            return Const(float(text))
        if kind == "id":
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return func(text, arg)
            if text not in self.vars:
                raise ParseError(f"unknown identifier {text!r}", pos)
            return Var(text)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ParseError(f"unexpected {text or 'end of input'!r}", pos)


def parse(src: str, var_names: Sequence[str] = ()) -> Expr:
    """Parse ``src`` into an expression over ``var_names``.

    Grammar: decimal/scientific numbers, identifiers, ``+ - * / ^``,
    parentheses and the functions exp, log, sin, cos, sqrt.  ``^`` is right
    associative and binds tighter than unary minus, so ``-y^2`` is ``-(y^2)``.
    """
    return _Parser(src, var_names).parse()


# differentiation -----------------------------------------------------------

def differentiate(e: Expr, var: str, order: int = 1) -> Expr:
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    out = e
    for _ in range(order):
        out = out.diff(var)
    return out


def gradient(e: Expr, variables: Sequence[str]) -> list[Expr]:
    return [e.diff(v) for v in variables]


def hessian(e: Expr, variables: Sequence[str]) -> list[list[Expr]]:
    """Symmetric Hessian; entry (i, j) with i > j reuses the (j, i) expression."""
    k = len(variables)
    grad = gradient(e, variables)
    out: list[list[Expr]] = [[ZERO] * k for _ in range(k)]
    for i in range(k):
        for j in range(i, k):
            out[i][j] = grad[i].diff(variables[j])
            out[j][i] = out[i][j]
    return out


def third_tensor(e: Expr, variables: Sequence[str]) -> list[list[list[Expr]]]:
    """All third partials, computed once per sorted index triple."""
    k = len(variables)
    hess = hessian(e, variables)
    cache: dict[tuple[int, int, int], Expr] = {}
    out = [[[ZERO] * k for _ in range(k)] for _ in range(k)]
    for i in range(k):
        for j in range(k):
            for l in range(k):
                key = tuple(sorted((i, j, l)))
                if key not in cache:
                    a, b, c = key
                    cache[key] = hess[a][b].diff(variables[c])
                out[i][j][l] = cache[key]
    return out


# compilation ---------------------------------------------------------------

@lru_cache(maxsize=4096)
def _compile_cached(sources: tuple[str, ...], names: tuple[str, ...]):
    args = ", ".join(names)
    body = ", ".join(sources)
    code = f"def _f({args}):\n    return ({body},)\n"
    ns = {"np": np}
    exec(code, ns)  # noqa: S102 - generated from our own trees only
    return ns["_f"]


def compile_exprs(exprs: Iterable[Expr], var_names: Sequence[str]):
    """Compile expressions into ``fn(*values) -> ndarray``.

    Arguments may be floats or broadcastable arrays; the result has shape
    ``(len(exprs),) + broadcast_shape``.  Domain violations yield nan/inf
    instead of raising, so callers working on grids must mask them.
    """
    exprs = list(exprs)
    names = tuple(var_names)
    for e in exprs:
        missing = e.free_vars() - set(names)
        if missing:
            raise KeyError(f"unbound variables {sorted(missing)}")
    if not exprs:
        def empty(*values):
            shape = np.broadcast_shapes(*(np.shape(v) for v in values)) if values else ()
            return np.zeros((0,) + shape)
        return empty
    raw = _compile_cached(tuple(e.to_source() for e in exprs), names)

    def fn(*values):
        with np.errstate(all="ignore"):
            parts = raw(*values)
        shape = np.broadcast_shapes(*(np.shape(v) for v in values)) if values else ()
        if not shape:
            return np.array(parts, dtype=float)
        return np.stack([np.broadcast_to(np.asarray(p, dtype=float), shape) for p in parts])

    return fn
