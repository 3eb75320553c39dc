"""Tiny closed-form expression grammar for modulations and forcing terms.

Supported: numeric constants, coordinates ``x``/``y``, time ``t``,
``+``, ``-``, ``*``, ``sin``, ``exp`` and parentheses. Expressions are
parsed into a small AST that can be evaluated on numpy arrays and
differentiated symbolically, so anisotropy derivatives stay exact.
"""

from __future__ import annotations

import re

import numpy as np


class ExpressionError(ValueError):
    pass


class Expr:
    def __call__(self, x, y, t=0.0):
        raise NotImplementedError

    def diff(self, var: str) -> "Expr":
        raise NotImplementedError

    def __repr__(self):
        return f"Expr({self})"


class Const(Expr):
    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, x, y, t=0.0):
        return np.broadcast_to(self.value, np.broadcast(np.asarray(x), np.asarray(y)).shape).copy() \
            if np.ndim(x) or np.ndim(y) else self.value

    def diff(self, var):
        return Const(0.0)

    def __str__(self):
        return repr(self.value)


class Var(Expr):
    def __init__(self, name: str):
        if name not in ("x", "y", "t"):
            raise ExpressionError(f"unknown variable {name!r}")
        self.name = name

    def __call__(self, x, y, t=0.0):
        v = {"x": x, "y": y, "t": t}[self.name]
        return np.asarray(v, dtype=float) if np.ndim(v) else float(v)

    def diff(self, var):
        return Const(1.0 if var == self.name else 0.0)

    def __str__(self):
        return self.name


class Add(Expr):
    def __init__(self, a: Expr, b: Expr):
        self.a, self.b = a, b

    def __call__(self, x, y, t=0.0):
        return self.a(x, y, t) + self.b(x, y, t)

    def diff(self, var):
        return Add(self.a.diff(var), self.b.diff(var))

    def __str__(self):
        return f"({self.a} + {self.b})"


class Mul(Expr):
    def __init__(self, a: Expr, b: Expr):
        self.a, self.b = a, b

    def __call__(self, x, y, t=0.0):
        return self.a(x, y, t) * self.b(x, y, t)

    def diff(self, var):
        return Add(Mul(self.a.diff(var), self.b), Mul(self.a, self.b.diff(var)))

    def __str__(self):
        return f"({self.a} * {self.b})"


class Sin(Expr):
    def __init__(self, a: Expr):
        self.a = a

    def __call__(self, x, y, t=0.0):
        return np.sin(self.a(x, y, t))

    def diff(self, var):
        return Mul(Cos(self.a), self.a.diff(var))

    def __str__(self):
        return f"sin({self.a})"


class Cos(Expr):
    # only produced by differentiation, not part of the input grammar
    def __init__(self, a: Expr):
        self.a = a

    def __call__(self, x, y, t=0.0):
        return np.cos(self.a(x, y, t))

    def diff(self, var):
        return Mul(Mul(Const(-1.0), Sin(self.a)), self.a.diff(var))

    def __str__(self):
        return f"cos({self.a})"


class ExpF(Expr):
    def __init__(self, a: Expr):
        self.a = a

    def __call__(self, x, y, t=0.0):
        return np.exp(self.a(x, y, t))

    def diff(self, var):
        return Mul(self, self.a.diff(var))

    def __str__(self):
        return f"exp({self.a})"


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*()]))"
)


def _tokenize(text: str) -> list[str]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip() == "":
                break
            raise ExpressionError(f"bad token at {text[pos:]!r}")
        tokens.append(m.group().strip())
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, tokens: list[str]):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def expect(self, tok):
        got = self.take()
        if got != tok:
            raise ExpressionError(f"expected {tok!r}, got {got!r}")

    def parse(self) -> Expr:
        e = self.expr()
        if self.peek() is not None:
            raise ExpressionError(f"trailing input at {self.peek()!r}")
        return e

    def expr(self) -> Expr:
        node = self.term()
        while self.peek() in ("+", "-"):
            op = self.take()
            rhs = self.term()
            if op == "-":
                rhs = Mul(Const(-1.0), rhs)
            node = Add(node, rhs)
        return node

    def term(self) -> Expr:
        node = self.factor()
        while self.peek() == "*":
            self.take()
            node = Mul(node, self.factor())
        return node

    def factor(self) -> Expr:
        tok = self.take()
        if tok is None:
            raise ExpressionError("unexpected end of expression")
        if tok == "-":
            return Mul(Const(-1.0), self.factor())
        if tok == "(":
            node = self.expr()
            self.expect(")")
            return node
        if re.fullmatch(r"(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?", tok):
            return Const(float(tok))
        if tok in ("sin", "exp"):
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return Sin(arg) if tok == "sin" else ExpF(arg)
        if tok in ("x", "y", "t"):
            return Var(tok)
        raise ExpressionError(f"unknown symbol {tok!r}")


def parse(text) -> Expr:
    """Parse a string (or pass through a number / Expr) into an Expr."""
    if isinstance(text, Expr):
        return text
    if isinstance(text, (int, float)):
        return Const(text)
    return _Parser(_tokenize(str(text))).parse()
