"""Small expression language for boundary profiles G(x, y).

Grammar (whitespace is insignificant)::

    expr     := term (('+' | '-') term)*
    term     := unary (('*' | '/') unary)*
    unary    := '-' unary | power
    power    := primary ('^' exponent)?
    exponent := '-' exponent | power
    primary  := NUMBER | 'x' | 'y' | 'pi' | FUNC '(' expr ')' | '(' expr ')'

so ``^`` binds tighter than unary minus (``-2^2 == -4``) and is right
associative (``2^3^2 == 2^9``).  Evaluation is vectorised over numpy arrays.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Pi",
    "Unary",
    "Binary",
    "ExprSyntaxError",
    "EvaluationError",
    "parse_expression",
]

FUNCTIONS = ("sin", "cos", "exp", "abs")
VARIABLES = ("x", "y")


class ExprSyntaxError(ValueError):
    """Raised on malformed input; ``offset`` is a byte offset into the source."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class EvaluationError(ArithmeticError):
    pass


class Expr:
    """Base class of the immutable expression tree."""

    def evaluate(self, x=0.0, y=0.0):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        with np.errstate(all="ignore"):
            out = self._eval(x, y)
        out = np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(x, y).shape)
        if not np.all(np.isfinite(out)):
            raise EvaluationError(f"non-finite value while evaluating {self.to_text()}")
        return out if out.ndim else float(out)

    __call__ = evaluate

    def _eval(self, x, y):
        raise NotImplementedError

    def variables(self) -> frozenset:
        return frozenset()

    def substitute(self, **bindings: float) -> "Expr":
        return self

    def to_text(self) -> str:
        raise NotImplementedError

    def __str__(self):
        return self.to_text()


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def _eval(self, x, y):
        return self.value

    def to_text(self):
        if self.value < 0 or math.copysign(1.0, self.value) < 0:
            return f"(-{repr(-self.value)})"
        return repr(float(self.value))


@dataclass(frozen=True)
class Pi(Expr):
    def _eval(self, x, y):
        return math.pi

    def to_text(self):
        return "pi"


@dataclass(frozen=True)
class Var(Expr):
    name: str

    def _eval(self, x, y):
        return x if self.name == "x" else y

    def variables(self):
        return frozenset({self.name})

    def substitute(self, **bindings):
        if self.name in bindings:
            return Const(float(bindings[self.name]))
        return self

    def to_text(self):
        return self.name


_UNARY = {
    "neg": np.negative,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "abs": np.abs,
}


@dataclass(frozen=True)
class Unary(Expr):
    op: str
    arg: Expr

    def _eval(self, x, y):
        return _UNARY[self.op](self.arg._eval(x, y))

    def variables(self):
        return self.arg.variables()

    def substitute(self, **bindings):
        return Unary(self.op, self.arg.substitute(**bindings))

    def to_text(self):
        if self.op == "neg":
            return f"(-{self.arg.to_text()})"
        return f"{self.op}({self.arg.to_text()})"


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr

    def _eval(self, x, y):
        a = self.left._eval(x, y)
        b = self.right._eval(x, y)
        if self.op == "+":
            return np.add(a, b)
        if self.op == "-":
            return np.subtract(a, b)
        if self.op == "*":
            return np.multiply(a, b)
        if self.op == "/":
            if np.any(np.asarray(b) == 0.0):
                raise EvaluationError(f"division by zero in {self.to_text()}")
            return np.divide(a, b)
        if np.any((np.asarray(a) == 0.0) & (np.asarray(b) < 0.0)):
            raise EvaluationError(f"zero raised to a negative power in {self.to_text()}")
        return np.power(a, b)

    def variables(self):
        return self.left.variables() | self.right.variables()

    def substitute(self, **bindings):
        return Binary(self.op, self.left.substitute(**bindings), self.right.substitute(**bindings))

    def to_text(self):
        return f"({self.left.to_text()} {self.op} {self.right.to_text()})"


_TOKEN = re.compile(
    r"""\s*(?:
        (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
      | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
      | (?P<op>[-+*/^()])
      | (?P<bad>\S)
    )""",
    re.VERBOSE,
)


def _tokenize(src: str):
    tokens = []
    pos = 0
    while True:
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            break
        kind = m.lastgroup
        start = m.start(kind)
        offset = len(src[:start].encode("utf-8"))
        if kind == "bad":
            raise ExprSyntaxError(f"unexpected character {m.group(kind)!r}", offset)
        tokens.append((kind, m.group(kind), offset))
        pos = m.end()
    tokens.append(("end", "", len(src.encode("utf-8"))))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.tokens = _tokenize(src)
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def advance(self):
        t = self.tokens[self.i]
        self.i += 1
        return t

    def error(self, message):
        raise ExprSyntaxError(message, self.tok[2])

    def expect(self, value):
        if self.tok[1] != value or self.tok[0] != "op":
            self.error(f"expected {value!r}")
        self.advance()

    def parse(self):
        node = self.expr()
        if self.tok[0] != "end":
            self.error(f"unexpected token {self.tok[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.tok[0] == "op" and self.tok[1] in "+-":
            op = self.advance()[1]
            node = Binary(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.tok[0] == "op" and self.tok[1] in "*/":
            op = self.advance()[1]
            node = Binary(op, node, self.unary())
        return node

    def unary(self):
        if self.tok[0] == "op" and self.tok[1] == "-":
            self.advance()
            return Unary("neg", self.unary())
        return self.power()

    def power(self):
        base = self.primary()
        if self.tok[0] == "op" and self.tok[1] == "^":
            self.advance()
            return Binary("^", base, self.exponent())
        return base

    def exponent(self):
        if self.tok[0] == "op" and self.tok[1] == "-":
            self.advance()
            return Unary("neg", self.exponent())
        return self.power()

    def primary(self):
        kind, text, offset = self.tok
        if kind == "num":
            self.advance()
            return Const(float(text))
        if kind == "name":
            self.advance()
            if text in VARIABLES:
                return Var(text)
            if text == "pi":
                return Pi()
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Unary(text, arg)
            raise ExprSyntaxError(f"unknown identifier {text!r}", offset)
        if kind == "op" and text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            self.error("unexpected end of input")
        self.error(f"unexpected token {text!r}")


def parse_expression(src: str) -> Expr:
    """Parse ``src`` into an immutable :class:`Expr` tree."""
    if not isinstance(src, str):
        raise TypeError("expression source must be text")
    return _Parser(src).parse()
