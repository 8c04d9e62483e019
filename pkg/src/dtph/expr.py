"""Arithmetic expressions over the state variables ``x1..xn``.

Grammar (precedence from loosest to tightest)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right-associative
    atom   := NUMBER | 'x' INDEX | FUNC '(' expr ')' | 'norm2' '(' 'x' ')'
            | '(' expr ')'

``norm2(x)`` is the *squared* Euclidean norm of the whole state vector.
Variables are 1-based. Evaluation broadcasts over leading axes of the
state array, so ``expr(X)`` with ``X.shape == (k, n)`` returns ``k`` values.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError, ExpressionSyntaxError, UnknownIdentifier

FUNCTIONS = ("sqrt", "exp", "log", "sin", "cos")

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


class Node:
    prec = _PREC_ATOM

    def evaluate(self, x):
        """Evaluate at state(s) ``x`` of shape ``(..., n)``."""
        x = np.asarray(x, dtype=float)
        val = self._eval(x)
        return np.broadcast_to(np.asarray(val, dtype=float), x.shape[:-1]).copy()

    __call__ = evaluate

    def __str__(self):
        return self.to_string()

    def variables(self):
        return set()

    def diff(self, i):
        """Symbolic partial derivative with respect to ``x{i+1}`` (0-based ``i``)."""
        raise NotImplementedError


def _check(val, node):
    # np.float64 subclasses float, so scalar states take the cheap branch
    ok = math.isfinite(val) if isinstance(val, float) else bool(np.all(np.isfinite(val)))
    if not ok:
        raise EvaluationError(f"non-finite result in {node.to_string()}")
    return val


@dataclass(frozen=True)
class Num(Node):
    value: float

    @property
    def prec(self):
        return _PREC_NEG if self.value < 0 else _PREC_ATOM

    def _eval(self, x):
        return self.value

    def to_string(self):
        v = self.value
        if v == int(v) and abs(v) < 1e15:
            return str(int(v))
        return repr(v)

    def diff(self, i):
        return ZERO


@dataclass(frozen=True)
class Var(Node):
    index: int  # 0-based

    def _eval(self, x):
        if self.index >= x.shape[-1]:
            raise EvaluationError(f"x{self.index + 1} out of range for state of size {x.shape[-1]}")
        return x[..., self.index]

    def to_string(self):
        return f"x{self.index + 1}"

    def variables(self):
        return {self.index}

    def diff(self, i):
        return ONE if i == self.index else ZERO


@dataclass(frozen=True)
class Norm2(Node):
    def _eval(self, x):
        return np.sum(x * x, axis=-1)

    def to_string(self):
        return "norm2(x)"

    def variables(self):
        return {-1}

    def diff(self, i):
        return mul(Num(2.0), Var(i))


@dataclass(frozen=True)
class Neg(Node):
    arg: Node
    prec = _PREC_NEG

    def _eval(self, x):
        return -self.arg._eval(x)

    def to_string(self):
        return "-" + _wrap(self.arg, _PREC_NEG)

    def variables(self):
        return self.arg.variables()

    def diff(self, i):
        return neg(self.arg.diff(i))


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node

    @property
    def prec(self):
        return {"+": _PREC_ADD, "-": _PREC_ADD, "*": _PREC_MUL, "/": _PREC_MUL}.get(self.op, _PREC_POW)

    def _eval(self, x):
        a = self.left._eval(x)
        b = self.right._eval(x)
        op = self.op
        if op == "/" and np.any(np.asarray(b) == 0):
            raise EvaluationError(f"division by zero in {self.to_string()}")
        with np.errstate(all="ignore"):
            if op == "+":
                val = a + b
            elif op == "-":
                val = a - b
            elif op == "*":
                val = a * b
            elif op == "/":
                val = a / b
            else:
                val = np.power(a, b)
        return _check(val, self)

    def to_string(self):
        p = self.prec
        if self.op == "^":
            # (a^b)^c and (-a)^b need parentheses on the left
            return f"{_wrap(self.left, _PREC_ATOM)}^{_wrap(self.right, _PREC_NEG)}"
        return f"{_wrap(self.left, p)}{self.op}{_wrap(self.right, p + 1)}"

    def variables(self):
        return self.left.variables() | self.right.variables()

    def diff(self, i):
        a, b = self.left, self.right
        da, db = a.diff(i), b.diff(i)
        op = self.op
        if op == "+":
            return add(da, db)
        if op == "-":
            return sub(da, db)
        if op == "*":
            return add(mul(da, b), mul(a, db))
        if op == "/":
            return div(sub(mul(da, b), mul(a, db)), power(b, Num(2.0)))
        if not b.variables():
            return mul(mul(b, power(a, sub(b, ONE))), da)
        return mul(self, add(mul(db, Call("log", a)), div(mul(b, da), a)))


@dataclass(frozen=True)
class Call(Node):
    name: str
    arg: Node

    def _eval(self, x):
        a = self.arg._eval(x)
        with np.errstate(all="ignore"):
            if self.name == "sqrt":
                if np.any(np.asarray(a) < 0):
                    raise EvaluationError(f"sqrt of negative value in {self.to_string()}")
                return np.sqrt(a)
            if self.name == "log":
                if np.any(np.asarray(a) <= 0):
                    raise EvaluationError(f"log of non-positive value in {self.to_string()}")
                return np.log(a)
            if self.name == "exp":
                return _check(np.exp(a), self)
            if self.name == "sin":
                return np.sin(a)
            return np.cos(a)

    def to_string(self):
        return f"{self.name}({self.arg.to_string()})"

    def variables(self):
        return self.arg.variables()

    def diff(self, i):
        a = self.arg
        da = a.diff(i)
        if da == ZERO:
            return ZERO
        if self.name == "sqrt":
            return div(da, mul(Num(2.0), self))
        if self.name == "exp":
            return mul(self, da)
        if self.name == "log":
            return div(da, a)
        if self.name == "sin":
            return mul(Call("cos", a), da)
        return neg(mul(Call("sin", a), da))


ZERO = Num(0.0)
ONE = Num(1.0)


def _wrap(node, min_prec):
    s = node.to_string()
    return s if node.prec >= min_prec else f"({s})"


# constant-folding constructors used by diff()

def add(a, b):
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    return BinOp("+", a, b)


def sub(a, b):
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    if b == ZERO:
        return a
    if a == ZERO:
        return neg(b)
    return BinOp("-", a, b)


def mul(a, b):
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    return BinOp("*", a, b)


def div(a, b):
    if a == ZERO:
        return ZERO
    if b == ONE:
        return a
    return BinOp("/", a, b)


def power(a, b):
    if b == ONE:
        return a
    if b == ZERO:
        return ONE
    return BinOp("^", a, b)


def neg(a):
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


# compilation ------------------------------------------------------------------
# Trees are turned into Python source over numpy and exec'd once. The generated
# code only ever contains numeric literals, ``x[..., i]`` and calls to the
# guarded helpers below, so it is no more permissive than the tree walk.

def _g_div(a, b, node):
    if (b == 0) if isinstance(b, float) else np.any(np.asarray(b) == 0):
        raise EvaluationError(f"division by zero in {node.to_string()}")
    return _check(a / b, node)


def _g_pow(a, b, node):
    # np.power even for scalars: math.pow can differ from it in the last bit
    with np.errstate(all="ignore"):
        return _check(np.power(a, b), node)


def _g_sqrt(a, node):
    if (a < 0) if isinstance(a, float) else np.any(np.asarray(a) < 0):
        raise EvaluationError(f"sqrt of negative value in {node.to_string()}")
    return np.sqrt(a)


def _g_log(a, node):
    if (a <= 0) if isinstance(a, float) else np.any(np.asarray(a) <= 0):
        raise EvaluationError(f"log of non-positive value in {node.to_string()}")
    return np.log(a)


def _g_exp(a, node):
    with np.errstate(all="ignore"):
        return _check(np.exp(a), node)


def _source(node, refs):
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"_xs[{node.index}]"
    if isinstance(node, Norm2):
        return "_n2"
    if isinstance(node, Neg):
        return f"(-{_source(node.arg, refs)})"
    if isinstance(node, BinOp):
        a, b = _source(node.left, refs), _source(node.right, refs)
        if node.op in "+-*":
            return f"({a} {node.op} {b})"
        refs.append(node)
        helper = "_g_div" if node.op == "/" else "_g_pow"
        return f"{helper}({a}, {b}, _refs[{len(refs) - 1}])"
    if isinstance(node, Call):
        a = _source(node.arg, refs)
        if node.name in ("sin", "cos"):
            return f"_np.{node.name}({a})"
        refs.append(node)
        return f"_g_{node.name}({a}, _refs[{len(refs) - 1}])"
    raise TypeError(f"cannot compile {type(node).__name__}")


def compile_expressions(nodes):
    """One function ``f(x)`` returning the tuple of all node values at ``x``.

    Same results and error checks as :meth:`Node.evaluate`, without the
    per-node dispatch; constants come back as Python floats (not broadcast).
    """
    refs = []
    body = ", ".join(_source(nd, refs) for nd in nodes)
    ns = {"_np": np, "_refs": refs, "_g_div": _g_div, "_g_pow": _g_pow, "_g_sqrt": _g_sqrt,
          "_g_log": _g_log, "_g_exp": _g_exp}
    # a single state gives float64 scalars per coordinate, a batch gives columns
    pre = "    _xs = x if x.ndim == 1 else _np.moveaxis(x, -1, 0)\n"
    if "_n2" in body:
        pre += "    _n2 = _np.sum(x * x, axis=-1)\n"
    exec(f"def _f(x):\n{pre}    return ({body},)\n", ns)
    return ns["_f"]


class _Parser:
    def __init__(self, text, n):
        self.text = text
        self.n = n
        self.tokens = []
        pos = 0
        stripped = text.rstrip()
        while pos < len(stripped):
            m = _TOKEN.match(stripped, pos)
            if m is None or m.end() == pos:
                start = pos + len(stripped[pos:]) - len(stripped[pos:].lstrip())
                raise ExpressionSyntaxError(text, start, ["number", "identifier", "operator"])
            kind = m.lastgroup
            self.tokens.append((kind, m.group(kind), m.start(kind)))
            pos = m.end()
        self.tokens.append(("end", "", len(stripped)))
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.peek()
        if val != value or kind == "end":
            raise ExpressionSyntaxError(self.text, pos, [repr(value)])
        self.i += 1

    def parse(self):
        node = self.expr()
        kind, _, pos = self.peek()
        if kind != "end":
            raise ExpressionSyntaxError(self.text, pos, ["operator", "end of input"])
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val == "norm2":
                self.expect("(")
                k2, v2, p2 = self.take()
                if v2 != "x":
                    raise ExpressionSyntaxError(self.text, p2, ["'x'"])
                self.expect(")")
                return Norm2()
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            m = re.fullmatch(r"x([1-9][0-9]*)", val)
            if m is None:
                raise UnknownIdentifier(val, pos)
            idx = int(m.group(1))
            if self.n is not None and idx > self.n:
                raise UnknownIdentifier(val, pos)
            return Var(idx - 1)
        if val == "(" and kind == "op":
            node = self.expr()
            self.expect(")")
            return node
        raise ExpressionSyntaxError(self.text, pos, ["number", "variable", "function", "'('"])


def parse_expression(text, n=None):
    """Parse ``text`` into an expression tree.

    Parameters
    ----------
    text : str
        Source text, e.g. ``"1+0.25*(4*norm2(x)+1)^2"``.
    n : int, optional
        State dimension. When given, variables beyond ``x{n}`` are rejected.

    Raises
    ------
    ExpressionSyntaxError
        With the offending position and the set of expected tokens.
    UnknownIdentifier
        For names other than ``x1..xn``, ``norm2`` and the whitelisted functions.
    """
    if not isinstance(text, str) or not text.strip():
        raise ExpressionSyntaxError(str(text), 0, ["non-empty expression"])
    return _Parser(text, n).parse()


def as_expression(value, n=None):
    """Numbers become constants, strings are parsed."""
    if isinstance(value, Node):
        return value
    if isinstance(value, str):
        return parse_expression(value, n)
    v = float(value)
    if not math.isfinite(v):
        raise EvaluationError(f"non-finite constant {value!r}")
    return Num(v)
