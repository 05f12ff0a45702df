"""Smooth fields on chart domains and the coordinate tensor calculus on them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from numbers import Real
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from . import expr as ex
from .errors import ChartMismatch, DomainError, NonFinite
from .parser import parse_expression

DEFAULT_HALF_WIDTH = 2.0


@dataclass(frozen=True)
class ChartDomain:
    coord_names: tuple[str, ...]
    bounds: tuple | None = None
    box: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        names = tuple(self.coord_names)
        object.__setattr__(self, "coord_names", names)
        if not names:
            raise ValueError("a chart needs at least one coordinate")
        if len(set(names)) != len(names):
            raise ValueError(f"coordinate names must be distinct: {names}")
        if self.bounds is not None:
            b = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
            if len(b) != len(names) or any(not lo < hi for lo, hi in b):
                raise ValueError(f"bad bounds {self.bounds}")
            object.__setattr__(self, "bounds", b)
        if self.box is not None:
            object.__setattr__(self, "box", tuple((float(lo), float(hi)) for lo, hi in self.box))

    @property
    def n(self) -> int:
        return len(self.coord_names)

    def index(self, name: str) -> int:
        return self.coord_names.index(name)

    def coord(self, name_or_index) -> "ScalarField":
        i = name_or_index if isinstance(name_or_index, int) else self.index(name_or_index)
        return ScalarField(self, ex.Var(i, self.coord_names[i]))

    def coords(self) -> list:
        return [self.coord(i) for i in range(self.n)]

    def const(self, c) -> "ScalarField":
        return ScalarField(self, ex.const(c))

    def parse(self, src: str) -> "ScalarField":
        return parse_field(src, self)

    def inside(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.bounds is None:
            return np.ones(len(X), dtype=bool)
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return np.all((X > lo) & (X < hi), axis=1)

    def sampling_box(self) -> list:
        """Finite box used for quasi-random sampling.

        Unbounded sides fall back to a width of 2*DEFAULT_HALF_WIDTH.
        """
        if self.box is not None:
            return list(self.box)
        out = []
        for i in range(self.n):
            lo, hi = self.bounds[i] if self.bounds else (-math.inf, math.inf)
            w = 2 * DEFAULT_HALF_WIDTH
            if math.isinf(lo) and math.isinf(hi):
                lo, hi = -DEFAULT_HALF_WIDTH, DEFAULT_HALF_WIDTH
            elif math.isinf(lo):
                lo = hi - w
            elif math.isinf(hi):
                hi = lo + w
            out.append((lo, hi))
        return out

    def sample(self, count: int, seed: int = 0) -> np.ndarray:
        return sample_box(self.sampling_box(), count, seed)


def sample_box(box, count: int, seed: int = 0) -> np.ndarray:
    """Scrambled Halton points strictly inside ``box`` (reproducible from seed)."""
    box = np.asarray(box, dtype=float)
    u = qmc.Halton(d=len(box), scramble=True, seed=np.random.default_rng(int(seed))).random(count)
    return box[:, 0] + u * (box[:, 1] - box[:, 0])


@dataclass(frozen=True)
class CovectorFieldValue:
    point: tuple
    components: np.ndarray


def _points(chart: ChartDomain, x) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.ndim != 2 or X.shape[1] != chart.n:
        raise ChartMismatch(f"points of shape {np.shape(x)} on a chart of dimension {chart.n}")
    if not np.all(np.isfinite(X)):
        raise NonFinite("non-finite chart point")
    ok = chart.inside(X)
    if not ok.all():
        bad = X[int(np.argmin(ok))].tolist()
        raise DomainError(f"point {bad} is outside the chart bounds {chart.bounds}")
    return X, single


def _same_chart(*objs):
    c = objs[0].chart
    for o in objs[1:]:
        if o.chart != c:
            raise ChartMismatch(f"{c.coord_names} vs {o.chart.coord_names}")
    return c


class ScalarField:
    """A smooth function on a chart, backed by an expression tree.

    ``guards`` holds (map trees, target chart) pairs whose images must stay in
    the target's bounds; they come from pull-backs along base maps.
    """

    __slots__ = ("chart", "node", "guards")

    def __init__(self, chart: ChartDomain, node: ex.Node, guards: tuple = ()):
        self.chart = chart
        self.node = node
        self.guards = tuple(guards)

    # construction helpers
    def _wrap(self, other):
        if isinstance(other, ScalarField):
            _same_chart(self, other)
            return other
        if isinstance(other, Real):
            return ScalarField(self.chart, ex.const(other))
        return NotImplemented

    def _new(self, node, *others):
        g = self.guards
        for o in others:
            g = g + tuple(x for x in o.guards if x not in g)
        return ScalarField(self.chart, node, g)

    def __add__(self, other):
        o = self._wrap(other)
        return NotImplemented if o is NotImplemented else self._new(ex.add(self.node, o.node), o)

    def __radd__(self, other):
        o = self._wrap(other)
        return NotImplemented if o is NotImplemented else self._new(ex.add(o.node, self.node), o)

    def __sub__(self, other):
        o = self._wrap(other)
        return NotImplemented if o is NotImplemented else self._new(ex.sub(self.node, o.node), o)

    def __rsub__(self, other):
        o = self._wrap(other)
        return NotImplemented if o is NotImplemented else self._new(ex.sub(o.node, self.node), o)

    def __mul__(self, other):
        o = self._wrap(other)
        return NotImplemented if o is NotImplemented else self._new(ex.mul(self.node, o.node), o)

    def __rmul__(self, other):
        o = self._wrap(other)
        return NotImplemented if o is NotImplemented else self._new(ex.mul(o.node, self.node), o)

    def __truediv__(self, other):
        o = self._wrap(other)
        return NotImplemented if o is NotImplemented else self._new(ex.div(self.node, o.node), o)

    def __rtruediv__(self, other):
        o = self._wrap(other)
        return NotImplemented if o is NotImplemented else self._new(ex.div(o.node, self.node), o)

    def __neg__(self):
        return self._new(ex.neg(self.node))

    def __pow__(self, k: int):
        if int(k) != k:
            raise TypeError("only integer powers are supported")
        return self._new(ex.power(self.node, int(k)))

    def apply(self, name: str) -> "ScalarField":
        return self._new(ex.func(name, self.node))

    def d(self, j: int) -> "ScalarField":
        return self._new(self.node.diff(j))

    def differential(self) -> list:
        return [self.d(j) for j in range(self.chart.n)]

    # evaluation
    def jets(self, x, order: int = 0):
        return evaluate_fields([self], x, order)[0]

    def __call__(self, x):
        return eval_field(self, x)

    def __repr__(self):
        return f"ScalarField({ex.to_source(self.node, self.chart.coord_names)})"


def _check_guards(fields, X):
    seen = []
    for f in fields:
        for g in f.guards:
            if g not in seen:
                seen.append(g)
    for maps, target in seen:
        if target.bounds is None:
            continue
        jets = ex.evaluate(list(maps), X, 0)
        Y = np.stack([j.v for j in jets], axis=1)
        ok = target.inside(Y)
        if not ok.all():
            i = int(np.argmin(ok))
            raise DomainError(
                f"base map sends {X[i].tolist()} to {Y[i].tolist()}, outside the target bounds"
            )


def evaluate_fields(fields: Sequence[ScalarField], x, order: int = 0):
    """Jets of several fields on one chart at once, sharing common subtrees."""
    chart = _same_chart(*fields)
    X, _ = _points(chart, x)
    _check_guards(fields, X)
    return ex.evaluate([f.node for f in fields], X, order)


def parse_field(src: str, chart: ChartDomain, annotations: bool = False) -> ScalarField:
    return ScalarField(chart, parse_expression(src, chart.coord_names, annotations))


def eval_field(f: ScalarField, x):
    X, single = _points(f.chart, x)
    v = evaluate_fields([f], X, 0)[0].v
    return float(v[0]) if single else v


def grad(f: ScalarField, x):
    X, single = _points(f.chart, x)
    g = evaluate_fields([f], X, 1)[0].grad(len(X), f.chart.n)
    if single:
        return CovectorFieldValue(tuple(X[0]), g[0].copy())
    return g


def hess(f: ScalarField, x):
    X, single = _points(f.chart, x)
    h = evaluate_fields([f], X, 2)[0].hess(len(X), f.chart.n)
    return h[0] if single else h


class VectorField:
    __slots__ = ("chart", "components")

    def __init__(self, chart: ChartDomain, components: Sequence):
        comps = []
        for c in components:
            if isinstance(c, Real):
                c = chart.const(c)
            if c.chart != chart:
                raise ChartMismatch("vector field component on a different chart")
            comps.append(c)
        if len(comps) != chart.n:
            raise ChartMismatch(f"{len(comps)} components on a chart of dimension {chart.n}")
        self.chart = chart
        self.components = tuple(comps)

    @classmethod
    def zero(cls, chart):
        return cls(chart, [0.0] * chart.n)

    @classmethod
    def parse(cls, chart, srcs: Sequence[str]):
        return cls(chart, [parse_field(s, chart) for s in srcs])

    def __getitem__(self, i):
        return self.components[i]

    def apply(self, f: ScalarField) -> ScalarField:
        """The directional derivative X[f]."""
        _same_chart(self, f)
        acc = f.chart.const(0.0)
        for j, Xj in enumerate(self.components):
            acc = acc + Xj * f.d(j)
        return acc

    def __add__(self, other: "VectorField"):
        _same_chart(self, other)
        return VectorField(self.chart, [a + b for a, b in zip(self.components, other.components)])

    def __sub__(self, other: "VectorField"):
        _same_chart(self, other)
        return VectorField(self.chart, [a - b for a, b in zip(self.components, other.components)])

    def __neg__(self):
        return VectorField(self.chart, [-a for a in self.components])

    def scaled(self, s) -> "VectorField":
        return VectorField(self.chart, [s * a for a in self.components])

    def at(self, x) -> np.ndarray:
        X, single = _points(self.chart, x)
        jets = evaluate_fields(self.components, X, 0)
        V = np.stack([j.v for j in jets], axis=1)
        return V[0] if single else V

    def arrays(self, X, order=1):
        """Values (m,n) and Jacobian (m,n,n) with [m,i,l] = d_l X^i."""
        m, n = len(X), self.chart.n
        jets = evaluate_fields(self.components, X, order)
        V = np.stack([j.v for j in jets], axis=1)
        if order == 0:
            return V, None
        return V, np.stack([j.grad(m, n) for j in jets], axis=1)


class BivectorField:
    """Antisymmetric bivector stored by its strictly upper triangle."""

    __slots__ = ("chart", "upper")

    def __init__(self, chart: ChartDomain, upper: dict | None = None):
        self.chart = chart
        self.upper = {}
        for (i, j), c in (upper or {}).items():
            if isinstance(c, Real):
                c = chart.const(c)
            if c.chart != chart:
                raise ChartMismatch("bivector component on a different chart")
            if i == j:
                raise ValueError("a bivector has no diagonal components")
            if i > j:
                i, j, c = j, i, -c
            if (i, j) in self.upper:
                raise ValueError(f"component ({i},{j}) given twice")
            self.upper[(i, j)] = c

    @classmethod
    def zero(cls, chart):
        return cls(chart)

    @classmethod
    def from_function(cls, chart, entry: Callable[[int, int], ScalarField]):
        n = chart.n
        return cls(chart, {(i, j): entry(i, j) for i in range(n) for j in range(i + 1, n)})

    def component(self, i: int, j: int) -> ScalarField:
        if i == j:
            return self.chart.const(0.0)
        if i < j:
            return self.upper.get((i, j), self.chart.const(0.0))
        return -self.upper.get((j, i), self.chart.const(0.0))

    def __neg__(self):
        return BivectorField(self.chart, {k: -v for k, v in self.upper.items()})

    def contract(self, f: ScalarField, g: ScalarField) -> ScalarField:
        """pi(df, dg) = sum_ij pi^ij d_i f d_j g."""
        acc = self.chart.const(0.0)
        for (i, j), c in self.upper.items():
            acc = acc + c * (f.d(i) * g.d(j) - f.d(j) * g.d(i))
        return acc

    def sharp(self, f: ScalarField) -> VectorField:
        """The vector field with components sum_j pi^ji d_j f."""
        n = self.chart.n
        comps = [self.chart.const(0.0) for _ in range(n)]
        for (i, j), c in self.upper.items():
            # pi^ij d_i f contributes to component j, pi^ji = -pi^ij to component i
            comps[j] = comps[j] + c * f.d(i)
            comps[i] = comps[i] - c * f.d(j)
        return VectorField(self.chart, comps)

    def arrays(self, X, order=1):
        """Matrix (m,n,n) and its derivative (m,n,n,n) with [m,i,j,l] = d_l pi^ij."""
        m, n = len(X), self.chart.n
        keys = list(self.upper)
        P = np.zeros((m, n, n))
        dP = np.zeros((m, n, n, n)) if order >= 1 else None
        if not keys:
            return P, dP
        jets = evaluate_fields([self.upper[k] for k in keys], X, order)
        for (i, j), jt in zip(keys, jets):
            P[:, i, j] = jt.v
            P[:, j, i] = -jt.v
            if order >= 1 and jt.g is not None:
                dP[:, i, j] = jt.g
                dP[:, j, i] = -jt.g
        return P, dP

    def at(self, x) -> np.ndarray:
        X, single = _points(self.chart, x)
        P, _ = self.arrays(X, 0)
        return P[0] if single else P


def lie_bracket(X: VectorField, Y: VectorField) -> VectorField:
    """[X,Y]^i = X^j d_j Y^i - Y^j d_j X^i."""
    _same_chart(X, Y)
    return VectorField(
        X.chart, [X.apply(Yi) - Y.apply(Xi) for Xi, Yi in zip(X.components, Y.components)]
    )


def _cyclic(T):
    # T[m,i,j,k] + T[m,j,k,i] + T[m,k,i,j]
    return T + T.transpose(0, 3, 1, 2) + T.transpose(0, 2, 3, 1)


def schouten_arrays(P, dP):
    T = np.einsum("mil,mjkl->mijk", P, dP)
    return 2.0 * _cyclic(T)


def wedge_arrays(R, P):
    T = np.einsum("mi,mjk->mijk", R, P)
    return _cyclic(T)


def lie_derivative_arrays(R, dR, P, dP):
    return (
        np.einsum("ml,mijl->mij", R, dP)
        - np.einsum("mlj,mil->mij", P, dR)
        - np.einsum("mil,mjl->mij", P, dR)
    )


def schouten_pi_pi(pi: BivectorField, x) -> np.ndarray:
    """[pi,pi]^ijk = 2 sum_l (pi^il d_l pi^jk + pi^jl d_l pi^ki + pi^kl d_l pi^ij)."""
    X, single = _points(pi.chart, x)
    S = schouten_arrays(*pi.arrays(X, 1))
    return S[0] if single else S


def lie_derivative_bivector(R: VectorField, pi: BivectorField, x) -> np.ndarray:
    """(L_R pi)^ij = R^l d_l pi^ij - pi^lj d_l R^i - pi^il d_l R^j."""
    _same_chart(R, pi)
    X, single = _points(pi.chart, x)
    L = lie_derivative_arrays(*R.arrays(X, 1), *pi.arrays(X, 1))
    return L[0] if single else L


def wedge_R_pi(R: VectorField, pi: BivectorField, x) -> np.ndarray:
    """(R ^ pi)^ijk = R^i pi^jk + R^j pi^ki + R^k pi^ij."""
    _same_chart(R, pi)
    X, single = _points(pi.chart, x)
    W = wedge_arrays(R.arrays(X, 0)[0], pi.arrays(X, 0)[0])
    return W[0] if single else W
