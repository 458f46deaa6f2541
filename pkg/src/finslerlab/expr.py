"""Small expression language for metric formulas.

Scalar expressions over coordinates ``x1..xn`` and fiber components
``y1..yn``, with the usual arithmetic, constant powers, and a fixed
function table.  The vector names ``x`` and ``y`` (and any declared
constant vector) may appear only as arguments of ``dot`` and ``abs2``.

Grammar (EBNF, also in docs/expression_grammar.md):

    expr   = term , { ( "+" | "-" ) , term } ;
    term   = unary , { ( "*" | "/" ) , unary } ;
    unary  = "-" , unary | power ;
    power  = atom , [ "^" , unary ] ;          (* right assoc, const exponent *)
    atom   = number | ident | ident , "(" , args , ")" | "(" , expr , ")" ;
    args   = expr , { "," , expr } ;
    number = digit , { digit } , [ "." , digit , { digit } ] ,
             [ ( "e" | "E" ) , [ "+" | "-" ] , digit , { digit } ] ;
    ident  = lowercase , { lowercase | digit } ;

Evaluation is generic: plug floats in and you get a float, plug jets in
and you get a jet carrying all mixed partials of the formula.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import (
    ArityError,
    DivisionByZero,
    DomainError,
    LexError,
    ParseError,
    UnboundVariable,
)
from .jets import Jet, smooth

_OPS = set("+-*/^")
_FUNCTIONS = {"sqrt": 1, "exp": 1, "log": 1, "sin": 1, "cos": 1, "abs2": 1, "dot": 2}
_VECTOR_FUNCTIONS = {"abs2", "dot"}


@dataclass(frozen=True)
class Token:
    kind: str  # number | ident | op | lparen | rparen | comma
    text: str
    pos: int


def tokenize(text: str) -> list[Token]:
    out = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch in " \t\r\n":
            i += 1
            continue
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == ".":
                j += 1
                if j >= n or not text[j].isdigit():
                    raise LexError("digit expected after decimal point", j)
                while j < n and text[j].isdigit():
                    j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k >= n or not text[k].isdigit():
                    raise LexError("malformed exponent", j)
                j = k
                while j < n and text[j].isdigit():
                    j += 1
            out.append(Token("number", text[i:j], i))
            i = j
            continue
        if "a" <= ch <= "z":
            j = i
            while j < n and ("a" <= text[j] <= "z" or text[j].isdigit()):
                j += 1
            out.append(Token("ident", text[i:j], i))
            i = j
            continue
        if ch in _OPS:
            out.append(Token("op", ch, i))
            i += 1
            continue
        if ch == "(":
            out.append(Token("lparen", ch, i))
            i += 1
            continue
        if ch == ")":
            out.append(Token("rparen", ch, i))
            i += 1
            continue
        if ch == ",":
            out.append(Token("comma", ch, i))
            i += 1
            continue
        raise LexError(f"unexpected character {ch!r}", i)
    return out


# --- AST ---

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    group: str  # "x" or "y"
    index: int  # 1-based


@dataclass(frozen=True)
class Name:
    ident: str


@dataclass(frozen=True)
class VecRef:
    ident: str


@dataclass(frozen=True)
class Neg:
    child: object


@dataclass(frozen=True)
class Bin:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Pow:
    base: object
    exponent: float


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple


def _classify_ident(text):
    if len(text) >= 2 and text[0] in "xy" and text[1:].isdigit():
        index = int(text[1:])
        if index < 1:
            return None
        return Var(text[0], index)
    return None


class _Parser:
    def __init__(self, tokens, source_len):
        self.toks = tokens
        self.i = 0
        self.end = source_len

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def next(self):
        t = self.peek()
        if t is None:
            raise ParseError("unexpected end of input", self.end)
        self.i += 1
        return t

    def expect(self, kind):
        t = self.peek()
        if t is None or t.kind != kind:
            pos = t.pos if t else self.end
            raise ParseError(f"expected {kind}", pos)
        return self.next()

    def parse(self):
        node = self.expr()
        t = self.peek()
        if t is not None:
            raise ParseError(f"trailing input {t.text!r}", t.pos)
        return node

    def expr(self):
        node = self.term()
        while True:
            t = self.peek()
            if t and t.kind == "op" and t.text in "+-":
                self.next()
                node = Bin(t.text, node, self.term())
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            t = self.peek()
            if t and t.kind == "op" and t.text in "*/":
                self.next()
                node = Bin(t.text, node, self.unary())
            else:
                return node

    def unary(self):
        t = self.peek()
        if t and t.kind == "op" and t.text == "-":
            self.next()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        t = self.peek()
        if t and t.kind == "op" and t.text == "^":
            self.next()
            exp_node = self.unary()
            value = _const_value(exp_node, t.pos)
            return Pow(base, value)
        return base

    def atom(self):
        t = self.next()
        if t.kind == "number":
            return Num(float(t.text))
        if t.kind == "ident":
            nxt = self.peek()
            if nxt and nxt.kind == "lparen":
                return self.call(t)
            var = _classify_ident(t.text)
            return var if var else Name(t.text)
        if t.kind == "lparen":
            node = self.expr()
            self.expect("rparen")
            return node
        raise ParseError(f"unexpected token {t.text!r}", t.pos)

    def call(self, name_tok):
        fn = name_tok.text
        if fn not in _FUNCTIONS:
            raise ParseError(f"unknown function {fn!r}", name_tok.pos)
        self.expect("lparen")
        args = [self.expr()]
        while self.peek() and self.peek().kind == "comma":
            self.next()
            args.append(self.expr())
        self.expect("rparen")
        if len(args) != _FUNCTIONS[fn]:
            raise ArityError(
                f"{fn} takes {_FUNCTIONS[fn]} argument(s), got {len(args)}"
            )
        if fn in _VECTOR_FUNCTIONS:
            vec_args = []
            for a in args:
                if not isinstance(a, Name):
                    raise ParseError(
                        f"{fn} expects a vector name (x, y, or a declared constant)",
                        name_tok.pos,
                    )
                vec_args.append(VecRef(a.ident))
            args = vec_args
        return Call(fn, tuple(args))


def _const_value(node, pos):
    """Exponents must be constant expressions; fold them at parse time."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Neg):
        return -_const_value(node.child, pos)
    if isinstance(node, Bin):
        a = _const_value(node.left, pos)
        b = _const_value(node.right, pos)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            if b == 0:
                raise ParseError("division by zero in constant exponent", pos)
            return a / b
    if isinstance(node, Pow):
        return _const_value(node.base, pos) ** node.exponent
    raise ParseError("exponent must be a constant expression", pos)


def parse(text: str):
    """Parse source text to an AST; positions in errors are byte offsets."""
    return _Parser(tokenize(text), len(text)).parse()


# --- evaluation ---

@dataclass
class EvalEnv:
    """Bindings for one evaluation: coordinates, fiber, named constants.

    ``x`` and ``y`` are sequences of floats or jets.  ``constants`` maps
    identifiers to scalars or to vectors (sequences).
    """

    n: int
    x: tuple
    y: tuple
    constants: dict = field(default_factory=dict)


def _resolve_vector(ident, env):
    if ident == "x":
        return env.x
    if ident == "y":
        return env.y
    if ident in env.constants:
        v = env.constants[ident]
        if hasattr(v, "__len__"):
            return v
    raise UnboundVariable(f"unknown vector {ident!r}")


def evaluate(node, env: EvalEnv):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        seq = env.x if node.group == "x" else env.y
        if node.index > env.n:
            raise UnboundVariable(
                f"{node.group}{node.index} out of range for dimension {env.n}"
            )
        return seq[node.index - 1]
    if isinstance(node, Name):
        if node.ident in env.constants:
            v = env.constants[node.ident]
            if hasattr(v, "__len__"):
                raise UnboundVariable(
                    f"vector constant {node.ident!r} used as a scalar"
                )
            return v
        raise UnboundVariable(f"unknown identifier {node.ident!r}")
    if isinstance(node, Neg):
        return -evaluate(node.child, env)
    if isinstance(node, Bin):
        a = evaluate(node.left, env)
        b = evaluate(node.right, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        try:
            return a / b
        except ZeroDivisionError as e:
            raise DivisionByZero(str(e)) from e
    if isinstance(node, Pow):
        base = evaluate(node.base, env)
        if isinstance(base, Jet):
            return base**node.exponent
        if base < 0 and not float(node.exponent).is_integer():
            raise DomainError(f"negative base {base:.6g} with non-integer power")
        if base == 0 and node.exponent < 0:
            raise DivisionByZero("zero base with negative power")
        return float(base) ** node.exponent
    if isinstance(node, Call):
        if node.fn == "dot":
            u = _resolve_vector(node.args[0].ident, env)
            v = _resolve_vector(node.args[1].ident, env)
            if len(u) != len(v):
                raise UnboundVariable("dot of vectors with different lengths")
            total = u[0] * v[0]
            for i in range(1, len(u)):
                total = total + u[i] * v[i]
            return total
        if node.fn == "abs2":
            u = _resolve_vector(node.args[0].ident, env)
            total = u[0] * u[0]
            for i in range(1, len(u)):
                total = total + u[i] * u[i]
            return total
        arg = evaluate(node.args[0], env)
        return smooth(arg, node.fn)
    raise TypeError(f"unknown AST node {node!r}")


def variables_used(node, acc=None):
    """Collect Var references, for dimension validation at build time."""
    if acc is None:
        acc = set()
    if isinstance(node, Var):
        acc.add((node.group, node.index))
    elif isinstance(node, Neg):
        variables_used(node.child, acc)
    elif isinstance(node, Bin):
        variables_used(node.left, acc)
        variables_used(node.right, acc)
    elif isinstance(node, Pow):
        variables_used(node.base, acc)
    elif isinstance(node, Call):
        for a in node.args:
            if not isinstance(a, VecRef):
                variables_used(a, acc)
    return acc


# --- printing ---

_LEVEL_ADD, _LEVEL_MUL, _LEVEL_UNARY, _LEVEL_POW, _LEVEL_ATOM = 1, 2, 3, 4, 5


def _level(node):
    if isinstance(node, (Num, Var, Name, VecRef, Call)):
        return _LEVEL_ATOM
    if isinstance(node, Pow):
        return _LEVEL_POW
    if isinstance(node, Neg):
        return _LEVEL_UNARY
    return _LEVEL_MUL if node.op in "*/" else _LEVEL_ADD


def _wrap(node, minimum):
    s = pretty(node)
    return f"({s})" if _level(node) < minimum else s


def _fmt_number(v):
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def pretty(node) -> str:
    """Render an AST back to source; reparsing gives an equal AST."""
    if isinstance(node, Num):
        return _fmt_number(node.value)
    if isinstance(node, Var):
        return f"{node.group}{node.index}"
    if isinstance(node, (Name, VecRef)):
        return node.ident
    if isinstance(node, Neg):
        return "-" + _wrap(node.child, _LEVEL_UNARY)
    if isinstance(node, Pow):
        exp = node.exponent
        if exp < 0:
            exp_s = f"(-{_fmt_number(-exp)})"
        else:
            exp_s = _fmt_number(exp)
        return f"{_wrap(node.base, _LEVEL_ATOM)}^{exp_s}"
    if isinstance(node, Bin):
        if node.op in "+-":
            left = _wrap(node.left, _LEVEL_ADD)
            right = _wrap(node.right, _LEVEL_MUL)
        else:
            left = _wrap(node.left, _LEVEL_MUL)
            right = _wrap(node.right, _LEVEL_UNARY)
        return f"{left} {node.op} {right}"
    if isinstance(node, Call):
        return f"{node.fn}({', '.join(pretty(a) for a in node.args)})"
    raise TypeError(f"unknown AST node {node!r}")
