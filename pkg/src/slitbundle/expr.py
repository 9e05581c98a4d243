"""Scalar expression language for vector-field components and metric entries.

Grammar (whitespace-insensitive)::

    expr     :=  term  (('+' | '-') term)*
    term     :=  unary (('*' | '/') unary)*
    unary    :=  '-' unary | power
    power    :=  atom ('^' exponent)*          # integer exponents, left-assoc
    exponent :=  ['-'] INT
    atom     :=  NUM | VAR | FUNC '(' expr ')' | '(' expr ')'
    VAR      :=  x1 .. xN   (or x_1 .. x_N)
    FUNC     :=  sin | cos | exp | sqrt

Precedence: pow > unary minus > mul/div > add/sub, left-associative within a
level, so ``-x1^2`` is ``-(x1^2)`` and ``2^3^2`` is ``(2^3)^2``. Division and
sqrt are guarded at evaluation time, not at parse time.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import dual
from .errors import EvalDomainError, ExprSyntaxError

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)

_FUNCS = {"sin": dual.sin, "cos": dual.cos, "exp": dual.exp, "sqrt": dual.sqrt}

_VAR_RE = re.compile(r"^x_?(\d+)$")


@dataclass(frozen=True)
class Node:
    span: tuple = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Num(Node):
    value: float = 0.0


@dataclass(frozen=True)
class Var(Node):
    index: int = 0  # zero-based


@dataclass(frozen=True)
class Neg(Node):
    arg: Node = None


@dataclass(frozen=True)
class Bin(Node):
    op: str = "+"
    left: Node = None
    right: Node = None


@dataclass(frozen=True)
class Pow(Node):
    base: Node = None
    exponent: int = 1


@dataclass(frozen=True)
class Call(Node):
    func: str = "sin"
    arg: Node = None


class _Tokenizer:
    def __init__(self, source):
        self.source = source
        self.pos = 0
        self.tokens = []
        self._scan()
        self.i = 0

    def _scan(self):
        pos = 0
        src = self.source
        while pos < len(src):
            m = _TOKEN_RE.match(src, pos)
            if m is None or m.end() == pos:
                # skip leading whitespace manually to point at the bad byte
                while pos < len(src) and src[pos].isspace():
                    pos += 1
                if pos >= len(src):
                    break
                raise ExprSyntaxError(f"unexpected character {src[pos]!r}", pos)
            if m.group("num") is not None:
                self.tokens.append(("num", m.group("num"), m.start("num")))
            elif m.group("ident") is not None:
                self.tokens.append(("ident", m.group("ident"), m.start("ident")))
            else:
                self.tokens.append(("op", m.group("op"), m.start("op")))
            pos = m.end()
        self.tokens.append(("eof", "", len(src)))

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok


class _Parser:
    def __init__(self, source, n):
        self.toks = _Tokenizer(source)
        self.source = source
        self.n = n

    def parse(self):
        node = self.expr()
        kind, text, pos = self.toks.peek()
        if kind != "eof":
            raise ExprSyntaxError(f"unexpected token {text!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, text, pos = self.toks.peek()
            if kind == "op" and text in "+-":
                self.toks.next()
                rhs = self.term()
                node = Bin((node.span[0], rhs.span[1]), text, node, rhs)
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            kind, text, pos = self.toks.peek()
            if kind == "op" and text in "*/":
                self.toks.next()
                rhs = self.unary()
                node = Bin((node.span[0], rhs.span[1]), text, node, rhs)
            else:
                return node

    def unary(self):
        kind, text, pos = self.toks.peek()
        if kind == "op" and text == "-":
            self.toks.next()
            arg = self.unary()
            return Neg((pos, arg.span[1]), arg)
        return self.power()

    def power(self):
        node = self.atom()
        while True:
            kind, text, pos = self.toks.peek()
            if kind == "op" and text == "^":
                self.toks.next()
                expo, end = self.exponent()
                node = Pow((node.span[0], end), node, expo)
            else:
                return node

    def exponent(self):
        sign = 1
        kind, text, pos = self.toks.peek()
        if kind == "op" and text == "-":
            self.toks.next()
            sign = -1
            kind, text, pos = self.toks.peek()
        if kind != "num" or not re.fullmatch(r"\d+", text):
            raise ExprSyntaxError("exponent must be an integer literal", pos)
        self.toks.next()
        return sign * int(text), pos + len(text)

    def atom(self):
        kind, text, pos = self.toks.next()
        if kind == "num":
            return Num((pos, pos + len(text)), float(text))
        if kind == "ident":
            m = _VAR_RE.match(text)
            if m:
                index = int(m.group(1))
                if index < 1 or index > self.n:
                    raise ExprSyntaxError(
                        f"variable {text} out of range for dimension {self.n}", pos
                    )
                return Var((pos, pos + len(text)), index - 1)
            if text in _FUNCS:
                kind2, text2, pos2 = self.toks.next()
                if kind2 != "op" or text2 != "(":
                    raise ExprSyntaxError(f"expected '(' after {text}", pos2)
                arg = self.expr()
                kind3, text3, pos3 = self.toks.next()
                if kind3 != "op" or text3 != ")":
                    raise ExprSyntaxError("expected ')'", pos3)
                return Call((pos, pos3 + 1), text, arg)
            raise ExprSyntaxError(f"unknown identifier {text!r}", pos)
        if kind == "op" and text == "(":
            node = self.expr()
            kind2, text2, pos2 = self.toks.next()
            if kind2 != "op" or text2 != ")":
                raise ExprSyntaxError("expected ')'", pos2)
            return node
        raise ExprSyntaxError(f"unexpected token {text!r}" if text else "unexpected end of input", pos)


class Expression:
    """An immutable parsed expression over variables x1..xn.

    Evaluation is pure and generic: it accepts floats or dual numbers, so
    gradients and Hessians come out of the same tree via forward mode.
    """

    __slots__ = ("root", "n", "source")

    def __init__(self, root, n, source):
        self.root = root
        self.n = n
        self.source = source

    def __call__(self, xs):
        return self._eval(self.root, xs)

    def _fragment(self, node):
        return self.source[node.span[0] : node.span[1]]

    def _eval(self, node, xs):
        if isinstance(node, Num):
            return node.value
        if isinstance(node, Var):
            return xs[node.index]
        if isinstance(node, Neg):
            return -self._eval(node.arg, xs)
        if isinstance(node, Bin):
            a = self._eval(node.left, xs)
            b = self._eval(node.right, xs)
            if node.op == "+":
                return a + b
            if node.op == "-":
                return a - b
            if node.op == "*":
                return a * b
            if dual.primal(b) == 0.0:
                raise EvalDomainError("division by zero", self._fragment(node))
            return a / b
        if isinstance(node, Pow):
            base = self._eval(node.base, xs)
            if node.exponent < 0 and dual.primal(base) == 0.0:
                raise EvalDomainError("zero base with negative exponent", self._fragment(node))
            if isinstance(base, dual.Dual):
                return base ** node.exponent
            return float(base) ** node.exponent
        if isinstance(node, Call):
            arg = self._eval(node.arg, xs)
            try:
                return _FUNCS[node.func](arg)
            except EvalDomainError as err:
                raise EvalDomainError(str(err), self._fragment(node)) from None
        raise TypeError(f"unknown node {node!r}")

    def eval_with_derivatives(self, p, order=1):
        """Value, gradient, and (for order 2) Hessian at point ``p``.

        Derivatives are exact to rounding: forward duals with an identity
        tangent block, nested once more for the Hessian.
        """
        p = [float(v) for v in p]
        if len(p) != self.n:
            raise ValueError(f"point has {len(p)} coordinates, expected {self.n}")
        if order == 1:
            vals, jac = dual.value_and_jacobian(lambda xs: [self(xs)], p)
            return float(vals[0]), jac[0], None
        if order == 2:
            vals, jac, hes = dual.value_jacobian_hessian(lambda xs: [self(xs)], p)
            return float(vals[0]), jac[0], hes[0]
        raise ValueError("order must be 1 or 2")

    def to_source(self):
        """Unparse; ``parse(e.to_source())`` reproduces the AST."""
        return self._print(self.root, 0)

    # precedence levels: 0 add, 1 mul, 2 unary, 3 pow, 4 atom; the right
    # operand of a binary node prints one level tighter so left-associative
    # chains round-trip to the same tree
    def _print(self, node, minlevel):
        if isinstance(node, Num):
            text = repr(node.value)
            if text.endswith(".0"):
                text = text[:-2]
            return text
        if isinstance(node, Var):
            return f"x{node.index + 1}"
        if isinstance(node, Call):
            return f"{node.func}({self._print(node.arg, 0)})"
        if isinstance(node, Bin):
            level = 0 if node.op in "+-" else 1
            text = f"{self._print(node.left, level)} {node.op} {self._print(node.right, level + 1)}"
        elif isinstance(node, Neg):
            level = 2
            text = "-" + self._print(node.arg, 2)
        elif isinstance(node, Pow):
            level = 3
            text = f"{self._print(node.base, 3)}^{node.exponent}"
        else:
            raise TypeError(f"unknown node {node!r}")
        return f"({text})" if level < minlevel else text


def parse(source, n):
    """Parse ``source`` into an :class:`Expression` over x1..xn."""
    root = _Parser(source, n).parse()
    return Expression(root, n, source)
