"""Recursive-descent parser for field expressions.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := base ('^' SIGNED_INT)?
    base   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')' | '-' factor

With ``annotations=True`` the base rule also accepts
``const(<number>, "<dim-expr>")`` for dimensioned constants.
"""
from __future__ import annotations

import re
from typing import Sequence

from . import expr as ex
from .errors import ParseError, UnknownVariable

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<str>"[^"]*")
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


def tokenize(src: str):
    pos, out = 0, []
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if not m:
            raise ParseError(f"unexpected character {src[pos]!r}", pos, src)
        if m.lastgroup != "ws":
            out.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    out.append(("end", "", len(src)))
    return out


class _Parser:
    def __init__(self, src, names, annotations):
        self.src = src
        self.toks = tokenize(src)
        self.i = 0
        self.index = {n: k for k, n in enumerate(names)}
        self.annotations = annotations

    @property
    def tok(self):
        return self.toks[self.i]

    def take(self, kind=None, text=None):
        t = self.tok
        if (kind and t[0] != kind) or (text and t[1] != text):
            want = text or kind
            got = t[1] or "end of input"
            raise ParseError(f"expected {want!r}, found {got!r}", t[2], self.src)
        self.i += 1
        return t

    def at(self, text):
        return self.tok[0] == "op" and self.tok[1] == text

    def expr(self):
        node = self.term()
        while self.at("+") or self.at("-"):
            op = self.take()
            rhs = self.term()
            node = (ex.Add if op[1] == "+" else ex.Sub)(node, rhs)
            node.pos = op[2]
        return node

    def term(self):
        node = self.factor()
        while self.at("*") or self.at("/"):
            op = self.take()
            rhs = self.factor()
            node = (ex.Mul if op[1] == "*" else ex.Div)(node, rhs)
            node.pos = op[2]
        return node

    def factor(self):
        node = self.base()
        if self.at("^"):
            op = self.take()
            sign = 1
            if self.at("-") or self.at("+"):
                sign = -1 if self.take()[1] == "-" else 1
            t = self.tok
            if t[0] != "num" or not t[1].isdigit():
                raise ParseError("exponent must be an integer", t[2], self.src)
            self.take()
            node = ex.Pow(node, sign * int(t[1]))
            node.pos = op[2]
            if self.at("^"):
                raise ParseError("chained exponents need parentheses", self.tok[2], self.src)
        return node

    def base(self):
        kind, text, pos = self.tok
        if kind == "num":
            self.take()
            node = ex.Const(float(text))
        elif kind == "op" and text == "-":
            self.take()
            node = ex.Neg(self.factor())
        elif kind == "op" and text == "(":
            self.take()
            node = self.expr()
            self.take("op", ")")
            return node
        elif kind == "name":
            self.take()
            if self.at("("):
                if text == "const" and self.annotations:
                    node = self.annotated_const()
                elif text in ex.FUNCS:
                    self.take()
                    node = ex.Func(text, self.expr())
                    self.take("op", ")")
                else:
                    raise ParseError(f"unknown function {text!r}", pos, self.src)
            elif text in self.index:
                node = ex.Var(self.index[text], text)
            else:
                raise UnknownVariable(f"unknown variable {text!r}", pos, self.src)
        else:
            got = text or "end of input"
            raise ParseError(f"unexpected {got!r}", pos, self.src)
        node.pos = pos
        return node

    def annotated_const(self):
        self.take("op", "(")
        sign = 1.0
        if self.at("-"):
            self.take()
            sign = -1.0
        value = float(self.take("num")[1])
        self.take("op", ",")
        dim = self.take("str")[1][1:-1]
        self.take("op", ")")
        return ex.Const(sign * value, dim=dim)


def parse_expression(src: str, names: Sequence[str], annotations: bool = False) -> ex.Node:
    p = _Parser(src, list(names), annotations)
    node = p.expr()
    if p.tok[0] != "end":
        raise ParseError(f"unexpected {p.tok[1]!r}", p.tok[2], src)
    return node
