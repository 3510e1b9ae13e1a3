"""Analytic vector-field expressions with exact structural differentiation.

Fields are given per coordinate as plain ASCII expressions over the state
variables ``x1 .. xn`` (``x``, ``y``, ``z`` are accepted as aliases for
``x1``, ``x2``, ``x3`` when the dimension is at most 3).  The grammar:

    expr   := term  (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' INT)*          # positive integer exponents only
    atom   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'

with ``sin``, ``cos``, ``exp`` as the recognised functions.  Power binds
tighter than unary minus, which binds tighter than '*'/'/', which bind
tighter than '+'/'-'.  Because exponents are integer literals the node set
is closed under differentiation, so Jacobians are computed structurally
(no finite differencing) and remain exact up to roundoff.

Error reporting carries byte offsets into the source string so callers can
point at the offending token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FUNCTIONS = ("sin", "cos", "exp")
_ALIASES = {"x": 1, "y": 2, "z": 3}


class ParseError(ValueError):
    """Syntax or name resolution failure, with a byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.message = message
        self.offset = offset


class EvalDomainError(ArithmeticError):
    """Evaluation left the analyticity domain (division by zero)."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


# ---------------------------------------------------------------------------
# expression nodes


@dataclass(frozen=True)
class Const:
    value: float
    pos: int = 0


@dataclass(frozen=True)
class Var:
    index: int  # 0-based
    pos: int = 0


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * /
    a: object
    b: object
    pos: int = 0


@dataclass(frozen=True)
class Pow:
    base: object
    k: int
    pos: int = 0


@dataclass(frozen=True)
class Neg:
    a: object
    pos: int = 0


@dataclass(frozen=True)
class Call:
    fn: str
    a: object
    pos: int = 0


def _is_const(node, v=None):
    return isinstance(node, Const) and (v is None or node.value == v)


# smart constructors: fold constants so derivative trees stay small
def _add(a, b):
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value, a.pos)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Bin("+", a, b, getattr(a, "pos", 0))


def _sub(a, b):
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value, a.pos)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return _neg(b)
    return Bin("-", a, b, getattr(a, "pos", 0))


def _mul(a, b):
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value, a.pos)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return Const(0.0, getattr(a, "pos", 0))
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Bin("*", a, b, getattr(a, "pos", 0))


def _div(a, b):
    if _is_const(a, 0.0):
        return Const(0.0, a.pos)
    if _is_const(b, 1.0):
        return a
    return Bin("/", a, b, getattr(a, "pos", 0))


def _neg(a):
    if _is_const(a):
        return Const(-a.value, a.pos)
    if isinstance(a, Neg):
        return a.a
    return Neg(a, getattr(a, "pos", 0))


# ---------------------------------------------------------------------------
# tokenizer / parser


def _tokenize(text: str):
    toks = []
    i, L = 0, len(text)
    while i < L:
        c = text[i]
        if c in " \t\r\n":
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < L and text[i + 1].isdigit()):
            j = i
            while j < L and text[j].isdigit():
                j += 1
            if j < L and text[j] == ".":
                j += 1
                while j < L and text[j].isdigit():
                    j += 1
            if j < L and text[j] in "eE":
                k = j + 1
                if k < L and text[k] in "+-":
                    k += 1
                if k < L and text[k].isdigit():
                    j = k
                    while j < L and text[j].isdigit():
                        j += 1
            toks.append(("num", text[i:j], i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < L and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append(("ident", text[i:j], i))
            i = j
            continue
        if c in "+-*/^()":
            toks.append((c, c, i))
            i += 1
            continue
        raise ParseError(f"unexpected character {c!r}", i)
    toks.append(("end", "", L))
    return toks


class _Parser:
    def __init__(self, text: str, n: int):
        self.text = text
        self.n = n
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, kind, what):
        t = self.take()
        if t[0] != kind:
            raise ParseError(f"expected {what}", t[2])
        return t

    def parse(self):
        node = self.expr()
        t = self.peek()
        if t[0] != "end":
            raise ParseError(f"unexpected token {t[1]!r}", t[2])
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] in ("+", "-"):
            op, _, pos = self.take()
            rhs = self.term()
            node = Bin(op, node, rhs, pos)
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] in ("*", "/"):
            op, _, pos = self.take()
            rhs = self.unary()
            node = Bin("*" if op == "*" else "/", node, rhs, pos)
        return node

    def unary(self):
        if self.peek()[0] == "-":
            _, _, pos = self.take()
            return Neg(self.unary(), pos)
        return self.power()

    def power(self):
        node = self.atom()
        while self.peek()[0] == "^":
            self.take()
            t = self.take()
            if t[0] != "num" or any(ch in t[1] for ch in ".eE"):
                raise ParseError("exponent must be a positive integer literal", t[2])
            k = int(t[1])
            if k < 1:
                raise ParseError("exponent must be a positive integer literal", t[2])
            node = Pow(node, k, t[2])
        return node

    def atom(self):
        t = self.take()
        kind, lex, pos = t
        if kind == "num":
            return Const(float(lex), pos)
        if kind == "(":
            node = self.expr()
            self.expect(")", "')'")
            return node
        if kind == "ident":
            if lex in FUNCTIONS:
                nxt = self.peek()
                if nxt[0] != "(":
                    raise ParseError(f"expected '(' after {lex}", nxt[2])
                self.take()
                arg = self.expr()
                self.expect(")", "')'")
                return Call(lex, arg, pos)
            return self.resolve_var(lex, pos)
        raise ParseError("expected expression", pos)

    def resolve_var(self, name: str, pos: int):
        idx = None
        if name in _ALIASES and self.n <= 3:
            idx = _ALIASES[name]
        elif name.startswith("x") and name[1:].isdigit():
            idx = int(name[1:])
        if idx is None:
            raise ParseError(f"unknown identifier {name!r}", pos)
        if not (1 <= idx <= self.n):
            raise ParseError(
                f"variable index out of range: {name!r} with dimension {self.n}", pos
            )
        return Var(idx - 1, pos)


# ---------------------------------------------------------------------------
# evaluation and differentiation


def eval_node(node, x) -> float:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return float(x[node.index])
    if isinstance(node, Bin):
        a = eval_node(node.a, x)
        b = eval_node(node.b, x)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        try:
            return a / b
        except ZeroDivisionError:
            raise EvalDomainError("division by zero", node.pos) from None
    if isinstance(node, Pow):
        return eval_node(node.base, x) ** node.k
    if isinstance(node, Neg):
        return -eval_node(node.a, x)
    if isinstance(node, Call):
        v = eval_node(node.a, x)
        try:
            return getattr(math, node.fn)(v)
        except OverflowError:
            return math.inf
    raise TypeError(f"not an expression node: {node!r}")


def deriv(node, j: int):
    """Structural derivative of ``node`` with respect to variable index ``j``."""
    if isinstance(node, Const):
        return Const(0.0, node.pos)
    if isinstance(node, Var):
        return Const(1.0 if node.index == j else 0.0, node.pos)
    if isinstance(node, Bin):
        da, db = deriv(node.a, j), deriv(node.b, j)
        if node.op == "+":
            return _add(da, db)
        if node.op == "-":
            return _sub(da, db)
        if node.op == "*":
            return _add(_mul(da, node.b), _mul(node.a, db))
        # (a/b)' = a'/b - a b'/b^2
        return _sub(_div(da, node.b), _div(_mul(node.a, db), Pow(node.b, 2, node.pos)))
    if isinstance(node, Pow):
        db = deriv(node.base, j)
        if node.k == 1:
            return db
        inner = node.base if node.k == 2 else Pow(node.base, node.k - 1, node.pos)
        return _mul(Const(float(node.k), node.pos), _mul(inner, db))
    if isinstance(node, Neg):
        return _neg(deriv(node.a, j))
    if isinstance(node, Call):
        da = deriv(node.a, j)
        if node.fn == "sin":
            outer = Call("cos", node.a, node.pos)
        elif node.fn == "cos":
            outer = _neg(Call("sin", node.a, node.pos))
        else:
            outer = node
        return _mul(outer, da)
    raise TypeError(f"not an expression node: {node!r}")


def contains_div(node) -> bool:
    if isinstance(node, Bin):
        return node.op == "/" or contains_div(node.a) or contains_div(node.b)
    if isinstance(node, (Pow, Neg, Call)):
        inner = node.base if isinstance(node, Pow) else node.a
        return contains_div(inner)
    return False


# ---------------------------------------------------------------------------
# public field types


@dataclass(frozen=True)
class FieldJet:
    """Value and Jacobian of a vector field at one point."""

    value: np.ndarray  # (n,)
    jacobian: np.ndarray  # (n, n); jacobian[i, j] = d value_i / d x_j


@dataclass(frozen=True)
class VectorFieldExpr:
    """Parsed expression tree for one coordinate of a vector field."""

    root: object
    arity: int
    text: str = ""
    grads: tuple = field(init=False, repr=False, compare=False, default=())

    def __post_init__(self):
        g = tuple(deriv(self.root, j) for j in range(self.arity))
        object.__setattr__(self, "grads", g)


def parse_field(text, n: int):
    """Parse per-coordinate expression strings into ``VectorFieldExpr`` trees.

    ``text`` is a sequence of coordinate expressions; a bare string is
    treated as a one-element sequence.  Each tree has arity ``n``.
    """
    if isinstance(text, str):
        text = [text]
    out = []
    for s in text:
        root = _Parser(s, n).parse()
        out.append(VectorFieldExpr(root=root, arity=n, text=s))
    return out


class ExprVectorField:
    """A vector field backed by expression trees; jets are exact."""

    def __init__(self, components):
        components = tuple(components)
        if not components:
            raise ValueError("empty field")
        self.components = components
        self.n = components[0].arity
        for c in components:
            if c.arity != self.n:
                raise ValueError("mixed arities in one field")

    def __len__(self):
        return len(self.components)

    def value(self, x) -> np.ndarray:
        return np.array([eval_node(c.root, x) for c in self.components], dtype=float)

    __call__ = value

    def jet(self, x) -> FieldJet:
        m = len(self.components)
        val = np.empty(m)
        jac = np.empty((m, self.n))
        for i, c in enumerate(self.components):
            val[i] = eval_node(c.root, x)
            for j in range(self.n):
                jac[i, j] = eval_node(c.grads[j], x)
        return FieldJet(value=val, jacobian=jac)


def make_field(texts, n: int) -> ExprVectorField:
    return ExprVectorField(parse_field(list(texts), n))


def eval_jet(f, x) -> FieldJet:
    """Value and Jacobian of field ``f`` at point ``x``.

    ``f`` may be an ``ExprVectorField``, a ``BracketField``, or a sequence
    of ``VectorFieldExpr`` components.
    """
    f = _as_field(f)
    return f.jet(np.asarray(x, dtype=float))


def _as_field(f):
    if isinstance(f, (ExprVectorField, BracketField)):
        return f
    return ExprVectorField(f)


class BracketField:
    """Lie bracket [f, g] as a field evaluator.

    The value uses the parents' jets: [f,g](x) = dg(x) f(x) - df(x) g(x).
    Its own Jacobian (needed when brackets nest) is obtained by central
    directional finite differences with step h_bracket * (1 + |x|), since a
    bracket of brackets has no closed expression tree here.
    """

    def __init__(self, f, g, h_bracket: float = 1e-5):
        self.f = _as_field(f)
        self.g = _as_field(g)
        if self.f.n != self.g.n:
            raise ValueError("bracket of fields with different arities")
        self.n = self.f.n
        self.h_bracket = h_bracket

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        jf = self.f.jet(x)
        jg = self.g.jet(x)
        return jg.jacobian @ jf.value - jf.jacobian @ jg.value

    __call__ = value

    def jet(self, x) -> FieldJet:
        x = np.asarray(x, dtype=float)
        val = self.value(x)
        h = self.h_bracket * (1.0 + float(np.linalg.norm(x)))
        jac = np.empty((self.n, self.n))
        for j in range(self.n):
            e = np.zeros(self.n)
            e[j] = h
            jac[:, j] = (self.value(x + e) - self.value(x - e)) / (2.0 * h)
        return FieldJet(value=val, jacobian=jac)


def lie_bracket(f, g, h_bracket: float = 1e-5) -> BracketField:
    """Lie bracket [f, g] = dg.f - df.g as a new field evaluator."""
    return BracketField(f, g, h_bracket=h_bracket)


def ad(f, g, k: int, h_bracket: float = 1e-5):
    """Iterated bracket ad^k f.g = [f, [f, ... [f, g]]] (k nestings)."""
    out = _as_field(g)
    for _ in range(k):
        out = BracketField(f, out, h_bracket=h_bracket)
    return out
