"""Scalar-field expressions with exact second-order forward differentiation.

Grammar (whitespace is ignored)::

    expr    = term , { ("+" | "-") , term } ;
    term    = unary , { ("*" | "/") , unary } ;
    unary   = ("-" | "+") , unary | power ;
    power   = atom , [ "^" , int_exp ] ;
    int_exp = [ "-" ] , INTEGER | "(" , [ "-" ] , INTEGER , ")" ;
    atom    = NUMBER | VAR | FUNC , "(" , expr , ")" | "(" , expr , ")" ;
    VAR     = "x" , INTEGER ;            (* x1 .. xN, 1-based *)
    FUNC    = "sin" | "cos" | "exp" | "sqrt" ;
    NUMBER  = decimal literal with optional exponent, e.g. 2, 0.1, 1e-3 ;

``-x1^2`` parses as ``-(x1^2)``.  Exponents must be integer literals.

Evaluation is done by straight-line Python generated from the tree: each node
carries its value, its gradient and its Hessian (only the structurally
nonzero entries are emitted), so a tree is walked once at compile time rather
than on every call.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "sqrt")


class ExpressionError(ValueError):
    pass


class ParseError(ExpressionError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class DomainError(ExpressionError, ArithmeticError):
    """Raised when an evaluation leaves the domain (or produces NaN/Inf)."""


# --------------------------------------------------------------------------
# syntax tree


@dataclass(frozen=True)
class Var:
    index: int
    pos: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class Const:
    value: float
    pos: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Node"
    right: "Node"
    pos: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: int
    pos: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class Neg:
    arg: "Node"
    pos: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"
    pos: int = field(default=-1, compare=False, repr=False)


Node = Var | Const | BinOp | Pow | Neg | Call


def _walk(node: Node):
    yield node
    if isinstance(node, BinOp):
        yield from _walk(node.left)
        yield from _walk(node.right)
    elif isinstance(node, (Pow, Neg, Call)):
        yield from _walk(node.base if isinstance(node, Pow) else node.arg)


class Expression:
    """Immutable parsed expression over ``ambient_dim`` variables."""

    __slots__ = ("root", "ambient_dim", "_compiled")

    def __init__(self, root: Node, ambient_dim: int):
        if ambient_dim < 1:
            raise ExpressionError("ambient dimension must be positive")
        for node in _walk(root):
            if isinstance(node, Var) and not 0 <= node.index < ambient_dim:
                raise ExpressionError(
                    f"variable x{node.index + 1} out of range for dimension {ambient_dim}"
                )
            if isinstance(node, BinOp) and node.op == "/" and node.right == Const(0.0):
                raise ExpressionError("division by the constant 0")
        self.root = root
        self.ambient_dim = ambient_dim
        self._compiled = None

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Expression)
            and self.ambient_dim == other.ambient_dim
            and self.root == other.root
        )

    def __hash__(self) -> int:
        return hash((self.ambient_dim, to_text(self)))

    def __repr__(self) -> str:
        return f"Expression({to_text(self)!r}, N={self.ambient_dim})"

    @property
    def compiled(self) -> "CompiledExpression":
        if self._compiled is None:
            self._compiled = CompiledExpression(self)
        return self._compiled

    def __call__(self, x: Sequence[float]) -> float:
        return eval_value(self, x)


# --------------------------------------------------------------------------
# parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<var>x\d+)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    i = 0
    while i < len(text):
        if text[i].isspace():
            i += 1
            continue
        m = _TOKEN.match(text, i)
        if m is None or m.end() == i:
            raise ParseError(f"unexpected character {text[i]!r}", i)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        i = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, ambient_dim: int):
        self.text = text
        self.n = ambient_dim
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value:
            raise ParseError(f"expected {value!r}, found {val or 'end of input'!r}", pos)

    def parse(self) -> Node:
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            _, op, pos = self.take()
            node = BinOp(op, node, self.term(), pos)
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            _, op, pos = self.take()
            rhs = self.unary()
            if op == "/" and isinstance(rhs, Const) and rhs.value == 0.0:
                raise ParseError("division by the constant 0", pos)
            node = BinOp(op, node, rhs, pos)
        return node

    def unary(self) -> Node:
        kind, val, pos = self.peek()
        if val == "-":
            self.take()
            return Neg(self.unary(), pos)
        if val == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        kind, val, pos = self.peek()
        if val != "^":
            return base
        self.take()
        paren = self.peek()[1] == "("
        if paren:
            self.take()
        sign = 1
        if self.peek()[1] == "-":
            self.take()
            sign = -1
        kind, val, epos = self.take()
        if kind != "num" or not val.isdigit():
            raise ParseError("exponent must be an integer literal", epos)
        if paren:
            self.expect(")")
        if self.peek()[1] == "^":
            raise ParseError("chained exponents need parentheses", self.peek()[2])
        return Pow(base, sign * int(val), pos)

    def atom(self) -> Node:
        kind, val, pos = self.take()
        if kind == "num":
            return Const(float(val), pos)
        if kind == "var":
            idx = int(val[1:]) - 1
            if not 0 <= idx < self.n:
                raise ParseError(f"variable {val} out of range 1..{self.n}", pos)
            return Var(idx, pos)
        if kind == "name":
            if val not in FUNCTIONS:
                raise ParseError(f"unsupported function {val!r}", pos)
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return Call(val, arg, pos)
        if val == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ParseError(f"unexpected {val or 'end of input'!r}", pos)


def parse_expression(text: str, ambient_dim: int) -> Expression:
    if ambient_dim < 1:
        raise ExpressionError("ambient dimension must be positive")
    return Expression(_Parser(text, ambient_dim).parse(), ambient_dim)


def _fmt_const(v: float) -> str:
    s = repr(float(v))
    return s


def _text(node: Node) -> str:
    if isinstance(node, Var):
        return f"x{node.index + 1}"
    if isinstance(node, Const):
        if node.value < 0 or math.copysign(1.0, node.value) < 0:
            raise ExpressionError("negative constants are not printable; use Neg")
        return _fmt_const(node.value)
    if isinstance(node, BinOp):
        return f"({_text(node.left)} {node.op} {_text(node.right)})"
    if isinstance(node, Pow):
        return f"{_text(node.base)}^({node.exponent})"
    if isinstance(node, Neg):
        return f"(-{_text(node.arg)})"
    return f"{node.func}({_text(node.arg)})"


def to_text(e: Expression | Node) -> str:
    """Pretty-print; the output re-parses to a structurally equal tree."""
    return _text(e.root if isinstance(e, Expression) else e)


# --------------------------------------------------------------------------
# tree builders used by substitution and averaging


def const(c: float) -> Node:
    return Neg(Const(-c)) if c < 0 else Const(float(c))


def add_all(terms: list[Node]) -> Node:
    if not terms:
        return Const(0.0)
    node = terms[0]
    for t in terms[1:]:
        node = BinOp("+", node, t)
    return node


def substitute(e: Expression, replacements: Sequence[Node], ambient_dim: int | None = None) -> Expression:
    """Replace every ``x_i`` by ``replacements[i]``."""

    def sub(node: Node) -> Node:
        if isinstance(node, Var):
            return replacements[node.index]
        if isinstance(node, Const):
            return node
        if isinstance(node, BinOp):
            return BinOp(node.op, sub(node.left), sub(node.right), node.pos)
        if isinstance(node, Pow):
            return Pow(sub(node.base), node.exponent, node.pos)
        if isinstance(node, Neg):
            return Neg(sub(node.arg), node.pos)
        return Call(node.func, sub(node.arg), node.pos)

    return Expression(sub(e.root), ambient_dim or e.ambient_dim)


def linear_form(row: Sequence[float], tol: float = 0.0) -> Node:
    terms = []
    for j, a in enumerate(row):
        if abs(a) <= tol:
            continue
        if a == 1.0:
            terms.append(Var(j))
        elif a == -1.0:
            terms.append(Neg(Var(j)))
        else:
            terms.append(BinOp("*", const(a), Var(j)))
    return add_all(terms)


def compose_linear(e: Expression, matrix: np.ndarray) -> Expression:
    """Return the expression ``x -> e(matrix @ x)``."""
    matrix = np.asarray(matrix, dtype=float)
    return substitute(e, [linear_form(row) for row in matrix])


def average(expressions: list[Expression]) -> Expression:
    n = expressions[0].ambient_dim
    total = add_all([ex.root for ex in expressions])
    if len(expressions) == 1:
        return Expression(total, n)
    return Expression(BinOp("/", total, Const(float(len(expressions)))), n)


# --------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class Jet2:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gradient, dtype=float)
        h = np.asarray(self.hessian, dtype=float)
        if h.shape != (g.size, g.size):
            raise ValueError("hessian shape does not match gradient")
        object.__setattr__(self, "gradient", g)
        object.__setattr__(self, "hessian", 0.5 * (h + h.T))


def _describe(node: Node) -> str:
    if isinstance(node, Call):
        what = node.func
    elif isinstance(node, BinOp):
        what = f"'{node.op}'"
    elif isinstance(node, Pow):
        what = f"'^{node.exponent}'"
    else:
        what = type(node).__name__.lower()
    return f"{what} at offset {node.pos}" if node.pos >= 0 else what


class _Emitter:
    """Generates straight-line code for value (order 0), gradient (1), Hessian (2)."""

    def __init__(self, n: int, order: int):
        self.n = n
        self.order = order
        self.lines: list[str] = []
        self.count = 0
        self.messages: list[str] = []

    def fresh(self) -> str:
        self.count += 1
        return f"t{self.count}"

    def assign(self, expr: str) -> str:
        name = self.fresh()
        self.lines.append(f"{name} = {expr}")
        return name

    def fail(self, cond: str, msg: str):
        self.messages.append(msg)
        self.lines.append(f"if {cond}: raise DomainError(_M[{len(self.messages) - 1}])")

    # a jet is (value_name, {i: name}, {(i, j): name}) with i <= j
    def emit(self, node: Node):
        if isinstance(node, Var):
            return f"x{node.index}", {node.index: "1.0"}, {}
        if isinstance(node, Const):
            return repr(float(node.value)), {}, {}
        if isinstance(node, Neg):
            v, g, h = self.emit(node.arg)
            return (
                self.assign(f"-{v}"),
                {i: self.assign(f"-{s}") for i, s in g.items()},
                {k: self.assign(f"-{s}") for k, s in h.items()},
            )
        if isinstance(node, BinOp):
            a = self.emit(node.left)
            b = self.emit(node.right)
            if node.op in "+-":
                return self._addsub(node.op, a, b)
            if node.op == "*":
                return self._mul(a, b)
            self.fail(f"{b[0]} == 0.0", f"division by zero ({_describe(node)})")
            inv = self._unary(b, f"1.0 / {b[0]}", "-{r} * {r}", "2.0 * {r} * {r} * {r}")
            return self._mul(a, inv)
        if isinstance(node, Pow):
            u = self.emit(node.base)
            p = node.exponent
            if p == 0:
                return "1.0", {}, {}
            if p == 1:
                return u
            if p < 0:
                self.fail(f"{u[0]} == 0.0", f"zero to a negative power ({_describe(node)})")
            d1 = f"{p}.0 * {u[0]} ** {p - 1}" if p != 2 else f"2.0 * {u[0]}"
            d2 = f"{p * (p - 1)}.0 * {u[0]} ** {p - 2}" if p != 2 else "2.0"
            return self._unary(u, f"{u[0]} ** {p}", d1, d2, raw=True)
        u = self.emit(node.arg)
        if node.func == "sin":
            return self._unary(u, f"_sin({u[0]})", f"_cos({u[0]})", "-{r}")
        if node.func == "cos":
            return self._unary(u, f"_cos({u[0]})", f"-_sin({u[0]})", "-{r}")
        if node.func == "exp":
            return self._unary(u, f"_exp({u[0]})", "{r}", "{r}")
        # sqrt
        if self.order == 0:
            self.fail(f"{u[0]} < 0.0", f"sqrt of a negative number ({_describe(node)})")
        else:
            self.fail(f"{u[0]} <= 0.0", f"sqrt not differentiable at or below 0 ({_describe(node)})")
        return self._unary(u, f"_sqrt({u[0]})", "0.5 / {r}", "-0.25 / ({r} * " + u[0] + ")")

    def _addsub(self, op, a, b):
        va, ga, ha = a
        vb, gb, hb = b
        v = self.assign(f"{va} {op} {vb}")
        if self.order == 0:
            return v, {}, {}

        def merge(da, db):
            out = {}
            for k in sorted(set(da) | set(db)):
                if k in da and k in db:
                    out[k] = self.assign(f"{da[k]} {op} {db[k]}")
                elif k in da:
                    out[k] = da[k]
                else:
                    out[k] = self.assign(f"-{db[k]}") if op == "-" else db[k]
            return out

        g = merge(ga, gb)
        h = merge(ha, hb) if self.order >= 2 else {}
        return v, g, h

    def _mul(self, a, b):
        va, ga, ha = a
        vb, gb, hb = b
        v = self.assign(f"{va} * {vb}")
        if self.order == 0:
            return v, {}, {}
        g = {}
        for i in sorted(set(ga) | set(gb)):
            parts = []
            if i in gb:
                parts.append(f"{va} * {gb[i]}")
            if i in ga:
                parts.append(f"{vb} * {ga[i]}")
            g[i] = self.assign(" + ".join(parts))
        h = {}
        if self.order >= 2:
            keys = set(ha) | set(hb)
            for i in ga:
                for j in gb:
                    keys.add((min(i, j), max(i, j)))
            for i, j in sorted(keys):
                parts = []
                if (i, j) in hb:
                    parts.append(f"{va} * {hb[(i, j)]}")
                if (i, j) in ha:
                    parts.append(f"{vb} * {ha[(i, j)]}")
                if i in ga and j in gb:
                    parts.append(f"{ga[i]} * {gb[j]}")
                if i != j and j in ga and i in gb:
                    parts.append(f"{ga[j]} * {gb[i]}")
                if i == j and i in ga and i in gb:
                    parts.append(f"{ga[i]} * {gb[i]}")
                h[(i, j)] = self.assign(" + ".join(parts))
        return v, g, h

    def _unary(self, u, val, d1, d2, raw=False):
        """Chain rule for phi(u); ``{r}`` in d1/d2 stands for phi(u)."""
        vu, gu, hu = u
        r = self.assign(val)
        if self.order == 0 or not gu:
            return r, {}, {}
        p1 = self.assign(d1.format(r=r))
        g = {i: self.assign(f"{p1} * {s}") for i, s in gu.items()}
        h = {}
        if self.order >= 2:
            p2 = self.assign(d2.format(r=r))
            keys = set(hu)
            idx = sorted(gu)
            for a_ in range(len(idx)):
                for b_ in range(a_, len(idx)):
                    keys.add((idx[a_], idx[b_]))
            for i, j in sorted(keys):
                parts = []
                if (i, j) in hu:
                    parts.append(f"{p1} * {hu[(i, j)]}")
                if i in gu and j in gu:
                    parts.append(f"{p2} * {gu[i]} * {gu[j]}")
                h[(i, j)] = self.assign(" + ".join(parts))
        return r, g, h


_NS = {"_sin": math.sin, "_cos": math.cos, "_exp": math.exp, "_sqrt": math.sqrt}


class CompiledExpression:
    """Generated evaluators for one expression (value, gradient, Hessian)."""

    def __init__(self, e: Expression):
        self.ambient_dim = n = e.ambient_dim
        self.value = self._build(e, 0)
        self.value_grad = self._build(e, 1)
        self.jet = self._build(e, 2)

    def _build(self, e: Expression, order: int) -> Callable:
        n = e.ambient_dim
        em = _Emitter(n, order)
        v, g, h = em.emit(e.root)
        args = ", ".join(f"x{i}" for i in range(n))
        body = [f"def _f({args}):"]
        body += ["    " + line for line in em.lines]
        if order == 0:
            body.append(f"    return {v}")
        else:
            grad = ", ".join(g.get(i, "0.0") for i in range(n))
            if order == 1:
                body.append(f"    return {v}, [{grad}]")
            else:
                hrows = []
                for i in range(n):
                    row = []
                    for j in range(n):
                        row.append(h.get((min(i, j), max(i, j)), "0.0"))
                    hrows.append("[" + ", ".join(row) + "]")
                body.append(f"    return {v}, [{grad}], [{', '.join(hrows)}]")
        ns = dict(_NS, DomainError=DomainError, _M=tuple(em.messages))
        try:
            exec(compile("\n".join(body), "<expression>", "exec"), ns)
        except RecursionError as exc:  # pragma: no cover - absurdly deep trees
            raise ExpressionError("expression too deep to compile") from exc
        return ns["_f"]


def _point(e: Expression, x) -> list[float]:
    xs = x.tolist() if isinstance(x, np.ndarray) else [float(t) for t in x]
    if len(xs) != e.ambient_dim:
        raise ExpressionError(f"point has length {len(xs)}, expected {e.ambient_dim}")
    return xs


def _guard(fn, *args):
    try:
        return fn(*args)
    except (OverflowError, ZeroDivisionError) as exc:
        raise DomainError(str(exc)) from exc
    except ValueError as exc:  # math domain errors
        if isinstance(exc, ExpressionError):
            raise
        raise DomainError(str(exc)) from exc


def eval_value(e: Expression, x) -> float:
    v = _guard(e.compiled.value, *_point(e, x))
    if not math.isfinite(v):
        raise DomainError("non-finite value")
    return float(v)


def eval_value_grad(e: Expression, x) -> tuple[float, list[float]]:
    v, g = _guard(e.compiled.value_grad, *_point(e, x))
    if not (math.isfinite(v) and all(math.isfinite(t) for t in g)):
        raise DomainError("non-finite value or gradient")
    return float(v), g


def eval_jet2(e: Expression, x) -> Jet2:
    v, g, h = _guard(e.compiled.jet, *_point(e, x))
    g = np.array(g, dtype=float)
    h = np.array(h, dtype=float)
    if not (math.isfinite(v) and np.isfinite(g).all() and np.isfinite(h).all()):
        raise DomainError("non-finite jet")
    return Jet2(float(v), g, h)
