"""Parser and evaluator for scalar metric expressions.

Grammar: ``+ - * / ^`` with the usual precedence (``^`` binds tighter than
unary minus and is right-associative), parentheses, float literals, the
reserved constants ``pi`` and ``e``, and the functions ``exp``, ``ln``,
``sqrt``, ``sin``, ``cos``, ``tan``, ``atan``, ``atanh``.  Implicit
multiplication is a syntax error.  Which variable names are legal is decided
per parse call: metrics use ``{x1, x2, u}``, conformal factors and scale
functions ``{x1, x2}``, Q-profiles ``{t}``.

Evaluation is structural recursion mapping AST nodes onto the jet ring, so an
expression evaluated on jets returns every derivative of itself at once.
``evaluate_scalar`` is the plain float/ndarray path used by the
finite-difference oracle.

``atanh`` evaluates as the real-log extension ``ln|(1+z)/(1-z)|/2`` so that
closed-form families stay real when the argument leaves (-1, 1).
"""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import jets
from .jets import Jet, JetDomainError

__all__ = [
    "Expression",
    "ExprError",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "DisallowedVariableError",
    "ExprDomainError",
    "parse",
    "pretty_print",
    "evaluate",
    "evaluate_scalar",
    "FUNCTIONS",
    "CONSTANTS",
]

FUNCTIONS = ("exp", "ln", "sqrt", "sin", "cos", "tan", "atan", "atanh")
CONSTANTS = {"pi": math.pi, "e": math.e}
DEFAULT_VARS = frozenset({"x1", "x2", "u"})


class ExprError(Exception):
    """Base class for expression failures."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, source: str, pos: int):
        super().__init__(f"{message} at position {pos}: {source!r}")
        self.pos = pos
        self.source = source


class UnknownIdentifierError(ExprSyntaxError):
    pass


class DisallowedVariableError(ExprSyntaxError):
    pass


class ExprDomainError(ExprError):
    """A jet domain error tagged with the offending sub-expression."""

    def __init__(self, message: str, source: str, span: tuple[int, int]):
        snippet = source[span[0] : span[1]]
        super().__init__(f"{message} in {snippet!r} (chars {span[0]}..{span[1]})")
        self.span = span
        self.snippet = snippet


# -- AST ----------------------------------------------------------------------


@dataclass(frozen=True)
class Node:
    span: tuple[int, int] = field(compare=False, kw_only=True, default=(0, 0))


@dataclass(frozen=True)
class Num(Node):
    value: float


@dataclass(frozen=True)
class Const(Node):
    name: str


@dataclass(frozen=True)
class Var(Node):
    name: str


@dataclass(frozen=True)
class Neg(Node):
    arg: Node


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    lhs: Node
    rhs: Node


@dataclass(frozen=True)
class Call(Node):
    fn: str
    arg: Node


@dataclass(frozen=True)
class Expression:
    """Parsed expression: the source text plus its AST and variable set."""

    source: str
    ast: Node
    variables: frozenset[str]

    def pretty(self) -> str:
        return pretty_print(self.ast)

    def __str__(self) -> str:
        return self.source


# -- tokenizer ----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(source: str):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            stripped = source[pos:].lstrip()
            if not stripped:
                break
            at = len(source) - len(stripped)
            raise ExprSyntaxError(f"unexpected character {source[at]!r}", source, at)
        if m.group("num") is not None:
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.group("ident") is not None:
            tokens.append(("ident", m.group("ident"), m.start("ident")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


# -- recursive descent ---------------------------------------------------------


class _Parser:
    def __init__(self, source: str, allowed_vars: frozenset[str]):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0
        self.allowed = allowed_vars
        self.seen: set[str] = set()

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, text, pos = self.peek()
        if kind != "op" or text != op:
            raise ExprSyntaxError(f"expected {op!r}", self.source, pos)
        return self.take()

    def parse(self) -> Node:
        node = self.sum()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", self.source, pos)
        return node

    def sum(self) -> Node:
        node = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.take()
                rhs = self.term()
                node = BinOp(text, node, rhs, span=(node.span[0], rhs.span[1]))
            else:
                return node

    def term(self) -> Node:
        node = self.unary()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.take()
                rhs = self.unary()
                node = BinOp(text, node, rhs, span=(node.span[0], rhs.span[1]))
            else:
                return node

    def unary(self) -> Node:
        kind, text, pos = self.peek()
        if kind == "op" and text == "-":
            self.take()
            arg = self.unary()
            return Neg(arg, span=(pos, arg.span[1]))
        return self.power()

    def power(self) -> Node:
        node = self.atom()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.take()
            rhs = self.unary()  # right-associative, binds tighter than unary -
            node = BinOp("^", node, rhs, span=(node.span[0], rhs.span[1]))
        return node

    def atom(self) -> Node:
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text), span=(pos, pos + len(text)))
        if kind == "ident":
            if text in FUNCTIONS:
                self.expect_op("(")
                arg = self.sum()
                close = self.expect_op(")")
                return Call(text, arg, span=(pos, close[2] + 1))
            if text in CONSTANTS:
                return Const(text, span=(pos, pos + len(text)))
            if text in self.allowed:
                self.seen.add(text)
                return Var(text, span=(pos, pos + len(text)))
            if text in DEFAULT_VARS or text == "t":
                raise DisallowedVariableError(
                    f"variable {text!r} not allowed here", self.source, pos
                )
            raise UnknownIdentifierError(
                f"unknown identifier {text!r}", self.source, pos
            )
        if kind == "op" and text == "(":
            node = self.sum()
            close = self.expect_op(")")
            return dataclasses.replace(node, span=(pos, close[2] + 1))
        raise ExprSyntaxError(
            f"unexpected {'end of input' if kind == 'end' else text!r}",
            self.source,
            pos,
        )


def parse(source: str, allowed_vars=DEFAULT_VARS) -> Expression:
    """Parse ``source`` accepting only the given variable names."""
    p = _Parser(source, frozenset(allowed_vars))
    ast = p.parse()
    return Expression(source=source, ast=ast, variables=frozenset(p.seen))


# -- pretty printing -----------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _pp(node: Node, parent_prec: int) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Const):
        return node.name
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.fn}({_pp(node.arg, 0)})"
    if isinstance(node, Neg):
        s = f"-{_pp(node.arg, _PREC['neg'])}"
        return f"({s})" if parent_prec > _PREC["neg"] else s
    if isinstance(node, BinOp):
        prec = _PREC[node.op]
        if node.op == "^":
            s = f"{_pp(node.lhs, prec + 1)}^{_pp(node.rhs, _PREC['neg'])}"
        else:
            # left-associative: same-precedence right children keep parens
            s = f"{_pp(node.lhs, prec)} {node.op} {_pp(node.rhs, prec + 1)}"
        return f"({s})" if prec < parent_prec else s
    raise TypeError(f"unknown node {node!r}")


def pretty_print(node: Node) -> str:
    """Canonical text form; reparsing it gives a structurally identical AST."""
    return _pp(node, 0)


# -- evaluation ----------------------------------------------------------------

_JET_CALLS = {
    "exp": jets.exp,
    "ln": jets.ln,
    "sqrt": jets.sqrt,
    "sin": jets.sin,
    "cos": jets.cos,
    "tan": jets.tan,
    "atan": jets.atan,
    "atanh": jets.atanh_ext,
}


def _pow_jet(base: Jet, expo: Jet) -> Jet:
    if bool(np.all(expo.coeffs[..., 1:] == 0)):
        v = np.ravel(expo.value())
        if v.size and np.all(v == v[0]):
            p = float(v[0])
            return base ** int(p) if p.is_integer() else jets.powf(base, p)
    # genuinely varying exponent: a^b = exp(b ln a), positive base required
    return jets.exp(expo * jets.ln(base))


def evaluate(e: Expression, env: dict[str, Jet]) -> Jet:
    """Evaluate over the jet ring; all variables must be bound to jets."""

    def rec(node: Node) -> Jet:
        if isinstance(node, Num):
            return jets.jet_constant(_spec, _base, np.full(_shape, node.value))
        if isinstance(node, Const):
            return jets.jet_constant(_spec, _base, np.full(_shape, CONSTANTS[node.name]))
        if isinstance(node, Var):
            try:
                return env[node.name]
            except KeyError:
                raise ExprDomainError(
                    f"unbound variable {node.name!r}", e.source, node.span
                ) from None
        if isinstance(node, Neg):
            return -rec(node.arg)
        if isinstance(node, Call):
            arg = rec(node.arg)
            try:
                return _JET_CALLS[node.fn](arg)
            except JetDomainError as err:
                raise ExprDomainError(str(err), e.source, node.span) from err
        if isinstance(node, BinOp):
            lhs = rec(node.lhs)
            rhs = rec(node.rhs)
            try:
                if node.op == "+":
                    return lhs + rhs
                if node.op == "-":
                    return lhs - rhs
                if node.op == "*":
                    return lhs * rhs
                if node.op == "/":
                    return lhs / rhs
                if node.op == "^":
                    return _pow_jet(lhs, rhs)
            except JetDomainError as err:
                raise ExprDomainError(str(err), e.source, node.span) from err
        raise TypeError(f"unknown node {node!r}")

    if not env:
        raise ValueError("evaluate needs at least one bound variable jet")
    ref = next(iter(env.values()))
    _spec, _base = ref.spec, ref.base
    _shape = ref.value().shape
    return rec(e.ast)


_SCALAR_CALLS = {
    "exp": np.exp,
    "ln": np.log,
    "sqrt": np.sqrt,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "atan": np.arctan,
    "atanh": jets.atanh_ext,  # scalar branch of the real-log extension
}


def evaluate_mp(e: Expression, env: dict):
    """Evaluate with mpmath scalars; the high-precision oracle path."""
    import mpmath as mp

    calls = {
        "exp": mp.exp,
        "ln": mp.log,
        "sqrt": mp.sqrt,
        "sin": mp.sin,
        "cos": mp.cos,
        "tan": mp.tan,
        "atan": mp.atan,
        "atanh": lambda z: mp.log(abs((1 + z) / (1 - z))) / 2,
    }

    def rec(node: Node):
        if isinstance(node, Num):
            return mp.mpf(node.value)
        if isinstance(node, Const):
            return mp.pi if node.name == "pi" else mp.e
        if isinstance(node, Var):
            return env[node.name]
        if isinstance(node, Neg):
            return -rec(node.arg)
        if isinstance(node, Call):
            return calls[node.fn](rec(node.arg))
        if isinstance(node, BinOp):
            lhs, rhs = rec(node.lhs), rec(node.rhs)
            if node.op == "+":
                return lhs + rhs
            if node.op == "-":
                return lhs - rhs
            if node.op == "*":
                return lhs * rhs
            if node.op == "/":
                return lhs / rhs
            if node.op == "^":
                rf = float(rhs)
                return lhs ** int(rf) if rf.is_integer() else mp.power(lhs, rhs)
        raise TypeError(f"unknown node {node!r}")

    return rec(e.ast)


def evaluate_scalar(e: Expression, env: dict):
    """Plain numeric evaluation (floats or ndarrays); no jets involved."""

    def rec(node: Node):
        if isinstance(node, Num):
            return node.value
        if isinstance(node, Const):
            return CONSTANTS[node.name]
        if isinstance(node, Var):
            return env[node.name]
        if isinstance(node, Neg):
            return -rec(node.arg)
        if isinstance(node, Call):
            return _SCALAR_CALLS[node.fn](rec(node.arg))
        if isinstance(node, BinOp):
            lhs, rhs = rec(node.lhs), rec(node.rhs)
            if node.op == "+":
                return lhs + rhs
            if node.op == "-":
                return lhs - rhs
            if node.op == "*":
                return lhs * rhs
            if node.op == "/":
                return lhs / rhs
            if node.op == "^":
                r = np.asarray(rhs)
                if np.all(r == np.round(r)):
                    return lhs ** np.asarray(rhs, dtype=int) if np.ndim(rhs) else lhs ** int(rhs)
                return np.power(lhs, rhs)
        raise TypeError(f"unknown node {node!r}")

    with np.errstate(all="ignore"):
        return rec(e.ast)
