"""A small expression language for coefficient fields and test functions.

Grammar (whitespace-insensitive, no implicit multiplication):

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?          right-associative
    atom    := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

NAME is a coordinate, a bound parameter, one of the constants `pi`, `e`,
or (before '(') one of exp, log, sqrt, sin, cos, tanh.  Unary minus binds
tighter than '*' and '/', looser than '^', so -x^2 == -(x^2).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Dict, Mapping, Sequence, Tuple, Union

import numpy as np

from . import jets
from .jets import DomainError, Jet

__all__ = [
    "Expression",
    "ExprSyntaxError",
    "UnknownIdentifier",
    "DomainError",
    "parse",
    "eval_jet",
    "evaluate",
    "to_string",
]

FUNCTIONS = {
    "exp": jets.exp,
    "log": jets.log,
    "sqrt": jets.sqrt,
    "sin": jets.sin,
    "cos": jets.cos,
    "tanh": jets.tanh,
}
CONSTANTS = {"pi": math.pi, "e": math.e}


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, text: str, pos: int):
        self.message = message
        self.text = text
        self.pos = pos
        super().__init__(f"{message} at position {pos}: {text!r}")


class UnknownIdentifier(ValueError):
    def __init__(self, name: str, pos: int):
        self.name = name
        self.pos = pos
        super().__init__(f"unknown identifier {name!r} at position {pos}")


# AST -------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str
    index: int


@dataclass(frozen=True)
class Param:
    name: str
    value: float


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
    fn: str
    arg: "Node"


Node = Union[Num, Var, Param, Neg, BinOp, Call]


@dataclass(frozen=True)
class Expression:
    """A parsed expression bound to an ordered coordinate list."""

    root: Node
    coords: Tuple[str, ...]
    text: str = ""

    def __str__(self) -> str:
        return to_string(self)

    @property
    def dim(self) -> int:
        return len(self.coords)


# tokenizer / parser ----------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str):
    pos = 0
    out = []
    n = len(text)
    while pos < n:
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {text[bad]!r}", text, bad)
        kind = m.lastgroup
        start = m.start(kind)
        out.append((kind, m.group(kind), start))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str, coords: Sequence[str], params: Mapping[str, object]):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.coords = {c: k for k, c in enumerate(coords)}
        self.params = params

    def peek(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def fail(self, msg: str, tok=None):
        tok = tok or self.peek()
        raise ExprSyntaxError(msg, self.text, tok[2])

    def parse(self) -> Node:
        if self.peek()[0] == "end":
            self.fail("empty expression")
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek() == ("op", "-", self.peek()[2]):
            self.take()
            return Neg(self.unary())
        if self.peek() == ("op", "+", self.peek()[2]):
            self.fail("unary plus is not supported")
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                if val not in FUNCTIONS:
                    raise UnknownIdentifier(val, pos)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            if val in self.coords:
                return Var(val, self.coords[val])
            if val in self.params:
                p = self.params[val]
                if isinstance(p, Expression):
                    if p.coords != tuple(self.coords):
                        raise ValueError(f"parameter {val!r} bound to other coordinates")
                    return p.root
                return Param(val, float(p))
            if val in CONSTANTS:
                return Param(val, CONSTANTS[val])
            if val in FUNCTIONS:
                self.fail(f"function {val!r} needs an argument", (kind, val, pos))
            raise UnknownIdentifier(val, pos)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            self.fail("unexpected end of input", (kind, val, pos))
        self.fail(f"unexpected token {val!r}", (kind, val, pos))

    def expect(self, sym: str) -> None:
        kind, val, pos = self.peek()
        if kind != "op" or val != sym:
            self.fail(f"expected {sym!r}")
        self.take()


def parse(
    text: str,
    coords: Sequence[str],
    params: Mapping[str, object] | None = None,
) -> Expression:
    """Parse `text` over the given coordinate names.

    `params` maps names to numbers or to already-parsed Expressions over the
    same coordinates (the latter are spliced in, which is how a field such as
    g(theta, x, y) is supplied to a preset).
    """
    if not isinstance(text, str) or text.strip() == "":
        raise ExprSyntaxError("empty expression", str(text), 0)
    params = dict(params or {})
    for c in coords:
        if c in params:
            raise ValueError(f"parameter {c!r} shadows a coordinate")
    root = _Parser(text, coords, params).parse()
    return Expression(root, tuple(coords), text)


# printing --------------------------------------------------------------------


def _fmt(node: Node) -> str:
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Param):
        return node.name
    if isinstance(node, Neg):
        return f"(-{_fmt(node.arg)})"
    if isinstance(node, BinOp):
        return f"({_fmt(node.left)} {node.op} {_fmt(node.right)})"
    if isinstance(node, Call):
        return f"{node.fn}({_fmt(node.arg)})"
    raise TypeError(node)


def to_string(expr: Expression) -> str:
    """Fully parenthesized text that parses back to an equivalent AST."""
    return _fmt(expr.root)


def params_of(expr: Expression) -> Dict[str, float]:
    """Numeric parameters referenced by the expression (needed to reparse its text)."""
    out: Dict[str, float] = {}

    def walk(n: Node) -> None:
        if isinstance(n, Param) and n.name not in CONSTANTS:
            out[n.name] = n.value
        elif isinstance(n, Neg):
            walk(n.arg)
        elif isinstance(n, BinOp):
            walk(n.left)
            walk(n.right)
        elif isinstance(n, Call):
            walk(n.arg)

    walk(expr.root)
    return out


# evaluation ------------------------------------------------------------------


def _integer_exponent(node: Node):
    if isinstance(node, Num) and float(node.value).is_integer():
        return int(node.value)
    if isinstance(node, Neg) and isinstance(node.arg, Num) and float(node.arg.value).is_integer():
        return -int(node.arg.value)
    return None


def _is_constant(node: Node) -> bool:
    if isinstance(node, Var):
        return False
    if isinstance(node, Neg) or isinstance(node, Call):
        return _is_constant(node.arg)
    if isinstance(node, BinOp):
        return _is_constant(node.left) and _is_constant(node.right)
    return True


def _eval(node: Node, xs: list, d: int, order: int, batch) -> Jet:
    if isinstance(node, (Num, Param)):
        return Jet.constant(np.full(batch, node.value), d, order)
    if isinstance(node, Var):
        return xs[node.index]
    if isinstance(node, Neg):
        return -_eval(node.arg, xs, d, order, batch)
    if isinstance(node, Call):
        return FUNCTIONS[node.fn](_eval(node.arg, xs, d, order, batch))
    if isinstance(node, BinOp):
        left = _eval(node.left, xs, d, order, batch)
        if node.op == "^":
            k = _integer_exponent(node.right)
            if k is not None:
                return jets.power(left, k)
            if _is_constant(node.right):
                c = _eval(node.right, xs, d, 0, ()).v
                return jets.power(left, float(c))
            return jets.power(left, _eval(node.right, xs, d, order, batch))
        right = _eval(node.right, xs, d, order, batch)
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        if node.op == "/":
            return left / right
    raise TypeError(node)


def eval_jet(expr: Expression, point, order: int = 3) -> Jet:
    """Jet of `expr` at `point` (shape (d,) or a batch (..., d)) up to `order`."""
    if not 0 <= order <= jets.MAX_ORDER:
        raise ValueError("order must be in 0..3")
    p = np.asarray(point, dtype=float)
    d = expr.dim
    if p.shape[-1:] != (d,):
        raise ValueError(f"point has dimension {p.shape[-1:]} but expression has {d} coordinates")
    batch = p.shape[:-1]
    xs = [jets.variable(i, p[..., i], d, order) for i in range(d)]
    with np.errstate(all="ignore"):
        out = _eval(expr.root, xs, d, order, batch)
    if not np.all(np.isfinite(out.v)):
        raise DomainError(f"non-finite value of {expr.text or to_string(expr)!r}")
    return out


def evaluate(expr: Expression, point) -> np.ndarray:
    """Plain value(s) of the expression."""
    v = eval_jet(expr, point, order=0).v
    return v if v.ndim else float(v)
