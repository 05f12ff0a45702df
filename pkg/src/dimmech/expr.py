"""Immutable expression trees with symbolic and forward-mode derivatives.

Trees are built from a handful of node types. Derived trees (derivatives,
substitutions) go through the smart constructors ``add``, ``mul`` etc., which
fold literal zeros and ones so repeated differentiation stays small. Parsed
trees use the raw node classes so the source structure is preserved for
dimension checking.

Evaluation is vectorized over a stack of points and propagates
(value, gradient, Hessian) triples; ``order`` chooses how far to go.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import DegenerateEta, DomainError, NonFinite

COND_LIMIT = 1e12


class Node:
    __slots__ = ("args", "pos", "_vars", "_d", "__weakref__")

    def __init__(self, *args):
        self.args = args
        self.pos = None
        self._vars = None
        self._d = {}

    @property
    def children(self) -> tuple:
        return tuple(a for a in self.args if isinstance(a, Node))

    @property
    def variables(self) -> frozenset:
        """Indices of the coordinates this tree depends on."""
        if self._vars is None:
            for node in postorder([self]):
                if node._vars is None:
                    node._vars = frozenset().union(*(c._vars for c in node.children))
        return self._vars

    def diff(self, j: int) -> "Node":
        got = self._d.get(j)
        if got is None:
            got = ZERO if j not in self.variables else self._diff(j)
            self._d[j] = got
        return got

    def _diff(self, j):
        raise NotImplementedError

    def __repr__(self):
        return to_source(self)


class Const(Node):
    __slots__ = ("value", "dim")

    def __init__(self, value, dim=None):
        super().__init__()
        self.value = float(value)
        self.dim = dim
        self._vars = frozenset()


class Var(Node):
    __slots__ = ("index", "name")

    def __init__(self, index: int, name: str = ""):
        super().__init__()
        self.index = index
        self.name = name or f"x{index}"
        self._vars = frozenset((index,))

    def _diff(self, j):
        return ONE if j == self.index else ZERO


class Add(Node):
    __slots__ = ()

    def _diff(self, j):
        return add(self.args[0].diff(j), self.args[1].diff(j))


class Sub(Node):
    __slots__ = ()

    def _diff(self, j):
        return sub(self.args[0].diff(j), self.args[1].diff(j))


class Mul(Node):
    __slots__ = ()

    def _diff(self, j):
        a, b = self.args
        return add(mul(a.diff(j), b), mul(a, b.diff(j)))


class Div(Node):
    __slots__ = ()

    def _diff(self, j):
        a, b = self.args
        return sub(div(a.diff(j), b), div(mul(a, b.diff(j)), power(b, 2)))


class Neg(Node):
    __slots__ = ()

    def _diff(self, j):
        return neg(self.args[0].diff(j))


class Pow(Node):
    __slots__ = ()

    # args = (base, k) with k a python int

    def _diff(self, j):
        a, k = self.args
        if k == 0:
            return ZERO
        return mul(mul(Const(k), power(a, k - 1)), a.diff(j))


FUNCS = ("sin", "cos", "exp", "log")


class Func(Node):
    __slots__ = ()

    # args = (name, argument)

    @property
    def children(self):
        return (self.args[1],)

    def _diff(self, j):
        name, a = self.args
        da = a.diff(j)
        if name == "sin":
            return mul(func("cos", a), da)
        if name == "cos":
            return neg(mul(func("sin", a), da))
        if name == "exp":
            return mul(self, da)
        return div(da, a)


class MatInv(Node):
    """Pointwise inverse of a square matrix of trees (entries row-major in args)."""

    __slots__ = ("k",)

    def __init__(self, rows: Sequence[Sequence[Node]]):
        k = len(rows)
        flat = []
        for r in rows:
            if len(r) != k:
                raise ValueError("matrix must be square")
            flat.extend(r)
        super().__init__(*flat)
        self.k = k

    def entry(self, i, j) -> Node:
        return self.args[i * self.k + j]


class InvEntry(Node):
    __slots__ = ()

    # args = (MatInv, i, j)

    @property
    def children(self):
        return (self.args[0],)

    def _diff(self, j):
        m, r, c = self.args
        terms = []
        for a in range(m.k):
            for b in range(m.k):
                dab = m.entry(a, b).diff(j)
                if dab is ZERO:
                    continue
                terms.append(mul(mul(inv_entry(m, r, a), dab), inv_entry(m, b, c)))
        return neg(sum_nodes(terms))


ZERO = Const(0.0)
ONE = Const(1.0)


def const(v) -> Node:
    v = float(v)
    if v == 0.0:
        return ZERO
    if v == 1.0:
        return ONE
    return Const(v)


def _is_const(a, v=None):
    return isinstance(a, Const) and (v is None or a.value == v)


def add(a: Node, b: Node) -> Node:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return const(a.value + b.value)
    return Add(a, b)


def sub(a: Node, b: Node) -> Node:
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    if _is_const(a) and _is_const(b):
        return const(a.value - b.value)
    return Sub(a, b)


def mul(a: Node, b: Node) -> Node:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b):
        return const(a.value * b.value)
    if _is_const(a, -1.0):
        return neg(b)
    if _is_const(b, -1.0):
        return neg(a)
    return Mul(a, b)


def div(a: Node, b: Node) -> Node:
    if _is_const(b, 1.0):
        return a
    if _is_const(a, 0.0) and not _is_const(b, 0.0):
        return ZERO
    return Div(a, b)


def neg(a: Node) -> Node:
    if _is_const(a):
        return const(-a.value)
    if isinstance(a, Neg):
        return a.args[0]
    return Neg(a)


def power(a: Node, k: int) -> Node:
    k = int(k)
    if k == 0:
        return ONE
    if k == 1:
        return a
    return Pow(a, k)


def func(name: str, a: Node) -> Node:
    if name not in FUNCS:
        raise ValueError(f"unknown function {name!r}")
    return Func(name, a)


def inv_entry(m: MatInv, i: int, j: int) -> Node:
    return InvEntry(m, i, j)


def sum_nodes(terms: Sequence[Node]) -> Node:
    acc = ZERO
    for t in terms:
        acc = add(acc, t)
    return acc


def postorder(roots: Sequence[Node]) -> list:
    """Unique nodes reachable from ``roots``, children before parents."""
    out, seen = [], set()
    stack = [(r, False) for r in reversed(list(roots))]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            if key not in seen:
                seen.add(key)
                out.append(node)
            continue
        if key in seen:
            continue
        stack.append((node, True))
        for c in reversed(node.children):
            if id(c) not in seen:
                stack.append((c, False))
    return out


def substitute(roots: Sequence[Node], repl: Sequence[Node]) -> list:
    """Replace every ``Var(i)`` by ``repl[i]`` in all roots (shared nodes stay shared)."""
    memo = {}
    for node in postorder(roots):
        if isinstance(node, Const):
            new = node
        elif isinstance(node, Var):
            new = repl[node.index]
        elif isinstance(node, Func):
            new = func(node.args[0], memo[id(node.args[1])])
        elif isinstance(node, Pow):
            new = power(memo[id(node.args[0])], node.args[1])
        elif isinstance(node, MatInv):
            k = node.k
            new = MatInv([[memo[id(node.entry(i, j))] for j in range(k)] for i in range(k)])
        elif isinstance(node, InvEntry):
            new = InvEntry(memo[id(node.args[0])], node.args[1], node.args[2])
        else:
            a = [memo[id(c)] for c in node.args]
            new = {Add: add, Sub: sub, Mul: mul, Div: div, Neg: neg}[type(node)](*a)
        memo[id(node)] = new
    return [memo[id(r)] for r in roots]


# ---------------------------------------------------------------- rendering

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}


def to_source(node: Node, names: Sequence[str] | None = None) -> str:
    """Render a tree in the field grammar (InvEntry nodes render as inv(...)[i,j])."""

    def go(n, parent_prec=0):
        if isinstance(n, Const):
            s = repr(n.value)
            if n.dim is not None:
                return f'const({s}, "{n.dim}")'
            return f"({s})" if n.value < 0 else s
        if isinstance(n, Var):
            return names[n.index] if names else n.name
        if isinstance(n, Func):
            return f"{n.args[0]}({go(n.args[1])})"
        if isinstance(n, InvEntry):
            return f"inv#{id(n.args[0]) & 0xffff:x}[{n.args[1]},{n.args[2]}]"
        if isinstance(n, MatInv):
            return f"inv#{id(n) & 0xffff:x}"
        prec = _PREC[type(n)]
        if isinstance(n, Neg):
            s = "-" + go(n.args[0], prec)
        elif isinstance(n, Pow):
            s = f"{go(n.args[0], prec + 1)}^{n.args[1]}"
        else:
            op = {Add: " + ", Sub: " - ", Mul: "*", Div: "/"}[type(n)]
            s = go(n.args[0], prec) + op + go(n.args[1], prec + 1)
        return f"({s})" if prec < parent_prec else s

    return go(node)


# ---------------------------------------------------------------- evaluation


class Jet:
    """Value, gradient and Hessian of one tree over m points (None = zero)."""

    __slots__ = ("v", "g", "h")

    def __init__(self, v, g=None, h=None):
        self.v = v
        self.g = g
        self.h = h

    def grad(self, m, n):
        return np.zeros((m, n)) if self.g is None else self.g

    def hess(self, m, n):
        return np.zeros((m, n, n)) if self.h is None else self.h


def _sum(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _diffr(a, b):
    if b is None:
        return a
    if a is None:
        return -b
    return a - b


def _scale(c, a):
    if a is None:
        return None
    return c.reshape(c.shape + (1,) * (a.ndim - c.ndim)) * a


def _outer(a, b):
    if a is None or b is None:
        return None
    return a[:, :, None] * b[:, None, :]


def _chain(x: Jet, f0, f1, f2, order):
    g = _scale(f1, x.g) if order >= 1 else None
    h = None
    if order >= 2:
        h = _sum(_scale(f1, x.h), _scale(f2, _outer(x.g, x.g)))
    return Jet(f0, g, h)


def _first_bad(X, mask):
    i = int(np.argmax(mask))
    return X[i].tolist()


def evaluate(roots: Sequence[Node], X: np.ndarray, order: int = 0) -> list:
    """Jets of every root at the points ``X`` (shape (m, n))."""
    X = np.asarray(X, dtype=float)
    m, n = X.shape
    memo = {}
    with np.errstate(all="ignore"):
        for node in postorder(roots):
            memo[id(node)] = _eval_node(node, memo, X, m, n, order)
    out = [memo[id(r)] for r in roots]
    for j in out:
        for arr in (j.v, j.g, j.h):
            if arr is not None and not np.all(np.isfinite(arr)):
                bad = ~np.isfinite(arr).reshape(m, -1).all(axis=1)
                raise NonFinite(f"non-finite result at point {_first_bad(X, bad)}")
    return out


def _eval_node(node, memo, X, m, n, order):
    t = type(node)
    if t is Const:
        return Jet(np.full(m, node.value))
    if t is Var:
        g = None
        if order >= 1:
            g = np.zeros((m, n))
            g[:, node.index] = 1.0
        return Jet(X[:, node.index].copy(), g)
    if t is MatInv:
        return _eval_matinv(node, memo, X, m, n, order)
    if t is InvEntry:
        mj = memo[id(node.args[0])]
        i, j = node.args[1], node.args[2]
        return Jet(
            mj.v[:, i, j],
            None if mj.g is None else mj.g[:, i, j],
            None if mj.h is None else mj.h[:, i, j],
        )
    if t is Func:
        name = node.args[0]
        x = memo[id(node.args[1])]
        if name == "sin":
            s, c = np.sin(x.v), np.cos(x.v)
            return _chain(x, s, c, -s, order)
        if name == "cos":
            s, c = np.sin(x.v), np.cos(x.v)
            return _chain(x, c, -s, -c, order)
        if name == "exp":
            e = np.exp(x.v)
            return _chain(x, e, e, e, order)
        bad = x.v <= 0
        if bad.any():
            raise DomainError(f"log of a non-positive value at point {_first_bad(X, bad)}")
        r = 1.0 / x.v
        return _chain(x, np.log(x.v), r, -r * r, order)
    if t is Neg:
        x = memo[id(node.args[0])]
        return Jet(-x.v, None if x.g is None else -x.g, None if x.h is None else -x.h)
    if t is Pow:
        x = memo[id(node.args[0])]
        k = node.args[1]
        if k < 0:
            bad = x.v == 0
            if bad.any():
                raise DomainError(f"negative power of zero at point {_first_bad(X, bad)}")
        if k == 0:
            return Jet(np.ones(m))
        f0 = x.v**k
        f1 = k * x.v ** (k - 1) if order >= 1 else None
        f2 = None
        if order >= 2:
            f2 = k * (k - 1) * x.v ** (k - 2) if k != 1 else np.zeros(m)
        return _chain(x, f0, f1, f2, order)
    a = memo[id(node.args[0])]
    b = memo[id(node.args[1])]
    if t is Add:
        return Jet(a.v + b.v, _sum(a.g, b.g), _sum(a.h, b.h))
    if t is Sub:
        return Jet(a.v - b.v, _diffr(a.g, b.g), _diffr(a.h, b.h))
    if t is Div:
        bad = b.v == 0
        if bad.any():
            raise DomainError(f"division by zero at point {_first_bad(X, bad)}")
        r = 1.0 / b.v
        b = _chain(b, r, -r * r, 2 * r**3, order)
    elif t is not Mul:
        raise TypeError(f"cannot evaluate {t.__name__}")
    g = h = None
    if order >= 1:
        g = _sum(_scale(a.v, b.g), _scale(b.v, a.g))
    if order >= 2:
        h = _sum(_sum(_scale(a.v, b.h), _scale(b.v, a.h)), _sum(_outer(a.g, b.g), _outer(b.g, a.g)))
    return Jet(a.v * b.v, g, h)


def _eval_matinv(node, memo, X, m, n, order):
    k = node.k
    ents = [memo[id(e)] for e in node.args]
    A = np.stack([e.v for e in ents], axis=1).reshape(m, k, k)
    cond = np.linalg.cond(A)
    bad = ~(cond <= COND_LIMIT)
    if bad.any():
        raise DegenerateEta(
            f"matrix to invert is degenerate (condition number {cond[bad][0]:.3g}) "
            f"at point {_first_bad(X, bad)}"
        )
    N = np.linalg.inv(A)
    g = h = None
    if order >= 1:
        dA = np.stack([e.grad(m, n) for e in ents], axis=1).reshape(m, k, k, n)
        M = np.einsum("mab,mbcl->macl", N, dA)
        g = -np.einsum("mabl,mbc->macl", M, N)
        if order >= 2:
            HA = np.stack([e.hess(m, n) for e in ents], axis=1).reshape(m, k, k, n, n)
            t1 = np.einsum("mabl,mbcr,mcd->madlr", M, M, N)
            t3 = np.einsum("mab,mbclr,mcd->madlr", N, HA, N)
            h = t1 + t1.transpose(0, 1, 2, 4, 3) - t3
    return Jet(N, g, h)


# ---------------------------------------------------------------- scalar codegen


def _inv_checked(k, entries):
    A = np.array(entries, dtype=float).reshape(k, k)
    c = np.linalg.cond(A)
    if not c <= COND_LIMIT:
        raise DegenerateEta(f"matrix to invert is degenerate (condition number {c:.3g})")
    return np.linalg.inv(A).tolist()


def compile_scalar(roots: Sequence[Node], n: int):
    """Compile trees into ``f(x) -> list`` for fast single-point evaluation.

    Used in integrator inner loops where per-call numpy overhead dominates.
    Domain failures surface as DomainError, overflow as NonFinite.
    """
    nodes = postorder(roots)
    name = {}
    lines = []
    for idx, node in enumerate(nodes):
        t = type(node)
        v = f"t{idx}"
        name[id(node)] = v
        if t is Const:
            expr = repr(node.value)
        elif t is Var:
            expr = f"x[{node.index}]"
        elif t is Func:
            expr = f"_{node.args[0]}({name[id(node.args[1])]})"
        elif t is Pow:
            expr = f"{name[id(node.args[0])]}**{node.args[1]}"
        elif t is Neg:
            expr = f"-{name[id(node.args[0])]}"
        elif t is MatInv:
            expr = f"_inv({node.k}, [{', '.join(name[id(a)] for a in node.args)}])"
        elif t is InvEntry:
            expr = f"{name[id(node.args[0])]}[{node.args[1]}][{node.args[2]}]"
        else:
            op = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[t]
            expr = f"{name[id(node.args[0])]} {op} {name[id(node.args[1])]}"
        lines.append(f"    {v} = {expr}")
    ret = ", ".join(name[id(r)] for r in roots)
    src = "def _f(x):\n" + "\n".join(lines) + f"\n    return [{ret}]\n"
    env = {
        "_sin": math.sin,
        "_cos": math.cos,
        "_exp": math.exp,
        "_log": math.log,
        "_inv": _inv_checked,
    }
    exec(compile(src, "<field>", "exec"), env)
    raw = env["_f"]

    def f(x):
        try:
            out = raw(x)
        except (ZeroDivisionError, ValueError) as e:
            raise DomainError(f"{e} at point {list(x)}") from None
        except OverflowError as e:
            raise NonFinite(f"{e} at point {list(x)}") from None
        for v in out:
            if not math.isfinite(v):
                raise NonFinite(f"non-finite result at point {list(x)}")
        return out

    return f
