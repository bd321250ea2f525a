"""A tiny expression language for coefficient formulas.

Grammar (``^`` binds tighter than unary minus, and is right-associative)::

    expr  := term (('+' | '-') term)*
    term  := unary (('*' | '/') unary)*
    unary := '-' unary | power
    power := base ('^' unary)?
    base  := number | ident | func '(' expr (',' expr)* ')' | '(' expr ')'

Expressions evaluate vectorised over an array of states whose last axis
indexes the declared variables.
"""

import re
from dataclasses import dataclass

import numpy as np

from ..errors import DegSDEError, EvaluationError

FUNCTIONS = {
    "abs": (1, np.abs),
    "sgn": (1, np.sign),
    "exp": (1, np.exp),
    "tanh": (1, np.tanh),
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "sqrt": (1, None),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
}


class ExprSyntaxError(DegSDEError, ValueError):
    def __init__(self, message, offset, expected=()):
        self.offset = offset
        self.expected = tuple(sorted(set(expected)))
        extra = f"; expected one of {', '.join(self.expected)}" if self.expected else ""
        super().__init__(f"{message} at byte {offset}{extra}")


class UnknownIdentifierError(DegSDEError, ValueError):
    def __init__(self, name, offset, variables):
        self.name = name
        self.offset = offset
        self.variables = tuple(variables)
        super().__init__(
            f"unknown identifier {name!r} at byte {offset}; "
            f"valid variables: {', '.join(variables)}; functions: {', '.join(FUNCTIONS)}"
        )


# --- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float
    offset: int


@dataclass(frozen=True)
class Var:
    name: str
    index: int
    offset: int


@dataclass(frozen=True)
class Neg:
    operand: object
    offset: int


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object
    offset: int


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple
    offset: int


# --- tokenizer ---------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(src):
    tokens = []
    pos = 0
    n = len(src)
    while True:
        m = _TOKEN.match(src, pos)
        if m is None:
            rest = src[pos:]
            if rest.strip() == "":
                break
            bad = pos + (len(rest) - len(rest.lstrip()))
            raise ExprSyntaxError(f"unexpected character {src[bad]!r}", _byte(src, bad),
                                  ["number", "identifier", "(", "-"])
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), _byte(src, start)))
        pos = m.end()
        if pos >= n:
            break
    tokens.append(("end", "", len(src.encode("utf-8"))))
    return tokens


def _byte(src, i):
    return len(src[:i].encode("utf-8"))


# --- parser ------------------------------------------------------------------


class _Parser:
    def __init__(self, src, variables):
        self.tokens = _tokenize(src)
        self.i = 0
        self.variables = list(variables)

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, off = self.peek()
        if text != value or kind != "op":
            raise ExprSyntaxError(f"unexpected {text or 'end of input'!r}", off, [value])
        return self.take()

    def parse(self):
        node = self.expr()
        kind, text, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", off, ["+", "-", "*", "/", "^", "end of input"])
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            _, op, off = self.take()
            node = BinOp(op, node, self.term(), off)
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            _, op, off = self.take()
            node = BinOp(op, node, self.unary(), off)
        return node

    def unary(self):
        kind, text, off = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return Neg(self.unary(), off)
        return self.power()

    def power(self):
        node = self.base()
        kind, text, off = self.peek()
        if kind == "op" and text == "^":
            self.take()
            node = BinOp("^", node, self.unary(), off)
        return node

    def base(self):
        kind, text, off = self.take()
        if kind == "num":
            return Num(float(text), off)
        if kind == "ident":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if text not in FUNCTIONS:
                    raise UnknownIdentifierError(text, off, self.variables)
                self.take()
                args = [self.expr()]
                while self.peek()[1] == "," and self.peek()[0] == "op":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                arity = FUNCTIONS[text][0]
                if len(args) != arity:
                    raise ExprSyntaxError(f"{text} takes {arity} argument(s), got {len(args)}", off)
                return Call(text, tuple(args), off)
            if text in self.variables:
                return Var(text, self.variables.index(text), off)
            raise UnknownIdentifierError(text, off, self.variables)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ExprSyntaxError(f"unexpected {text or 'end of input'!r}", off,
                              ["number", "identifier", "(", "-"])


# --- evaluation and printing --------------------------------------------------


def _fail(message, node, Z, mask):
    idx = np.argwhere(np.broadcast_to(mask, Z.shape[:-1]))
    point = Z[tuple(idx[0])] if idx.size else None
    raise EvaluationError(f"{message} at byte {node.offset}", point=point, where=node.offset)


def _eval(node, Z):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return Z[..., node.index]
    if isinstance(node, Neg):
        return -_eval(node.operand, Z)
    if isinstance(node, Call):
        args = [_eval(a, Z) for a in node.args]
        if node.name == "sqrt":
            neg = np.asarray(args[0]) < 0
            if np.any(neg):
                _fail("sqrt of negative value", node, Z, neg)
            return np.sqrt(args[0])
        return FUNCTIONS[node.name][1](*args)
    a = _eval(node.left, Z)
    if node.op == "^" and isinstance(node.right, Num) and node.right.value in (2.0, 3.0, 4.0):
        k = int(node.right.value)
        out = a * a
        for _ in range(k - 2):
            out = out * a
        return out
    b = _eval(node.right, Z)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        zero = np.asarray(b) == 0
        if np.any(zero):
            _fail("division by zero", node, Z, zero)
        return a / b
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        out = np.power(a, b)
    bad = ~np.isfinite(out) & np.isfinite(a) & np.isfinite(b)
    if np.any(bad):
        _fail("power is undefined", node, Z, bad)
    return out


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _prec(node):
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return 3
    return 5


def to_source(node):
    if isinstance(node, Num):
        v = float(node.value)
        return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_source(a) for a in node.args)})"
    if isinstance(node, Neg):
        inner = to_source(node.operand)
        return f"-({inner})" if _prec(node.operand) < 3 else f"-{inner}"
    p = _PREC[node.op]
    left, right = to_source(node.left), to_source(node.right)
    if node.op == "^":
        if _prec(node.left) <= 4:
            left = f"({left})"
        if _prec(node.right) < 3:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(node.left) < p:
        left = f"({left})"
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


class CoeffExpr:
    """Parsed coefficient formula over named variables."""

    def __init__(self, source, variables, root=None):
        self.source = source
        self.variables = tuple(variables)
        self.root = root if root is not None else _Parser(source, self.variables).parse()

    def __call__(self, Z):
        Z = np.asarray(Z, dtype=float)
        if Z.shape[-1] != len(self.variables):
            raise ValueError(f"expected last axis of size {len(self.variables)}, got {Z.shape[-1]}")
        with np.errstate(all="ignore"):
            out = _eval(self.root, Z)
        return np.broadcast_to(np.asarray(out, dtype=float), Z.shape[:-1])

    def __str__(self):
        return to_source(self.root)

    def __repr__(self):
        return f"CoeffExpr({str(self)!r}, variables={self.variables})"

    @property
    def is_constant(self):
        return not _uses_vars(self.root)

    @property
    def is_zero(self):
        return isinstance(self.root, Num) and self.root.value == 0.0


def _uses_vars(node):
    if isinstance(node, Var):
        return True
    if isinstance(node, Num):
        return False
    if isinstance(node, Neg):
        return _uses_vars(node.operand)
    if isinstance(node, Call):
        return any(_uses_vars(a) for a in node.args)
    return _uses_vars(node.left) or _uses_vars(node.right)


def parse_coeff_expr(src, variables=("x", "y", "z")):
    if not isinstance(src, str) or not src.strip():
        raise ExprSyntaxError("empty expression", 0, ["number", "identifier", "(", "-"])
    return CoeffExpr(src, variables)
