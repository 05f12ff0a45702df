"""Calculus on trivialized line bundles: factors, derivations, jets, products.

A section of the trivial bundle over a chart is just a ScalarField on it.
A factor is a pair (b, beta) of a base map and a nonvanishing fibre scale;
derivations are pairs X (+) f of a vector field and a function.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import expr as ex
from .errors import (
    BasePointMismatch,
    ChartMismatch,
    CoordinateNameClash,
    NoInverseDeclared,
    VanishingDenominator,
)
from .fields import (
    ChartDomain,
    ScalarField,
    VectorField,
    _points,
    evaluate_fields,
    lie_bracket,
    parse_field,
)

NONVANISHING_SAMPLES = 10_000
NONVANISHING_THRESHOLD = 1e-12


@dataclass(frozen=True)
class TrivialLineBundle:
    base: ChartDomain

    @property
    def n(self):
        return self.base.n


def _bundle(x) -> TrivialLineBundle:
    return x if isinstance(x, TrivialLineBundle) else TrivialLineBundle(x)


def certify_nonvanishing(s: ScalarField, count=NONVANISHING_SAMPLES, seed=0, what="section"):
    """Reject ``s`` if it comes within 1e-12 of zero on quasi-random samples.

    The sampling box is connected, so a change of sign between two samples
    also proves a zero and is rejected.
    """
    X = s.chart.sample(count, seed)
    v = evaluate_fields([s], X, 0)[0].v
    i = int(np.argmin(np.abs(v)))
    if not abs(v[i]) > NONVANISHING_THRESHOLD:
        raise VanishingDenominator(f"{what} vanishes near {X[i].tolist()} (value {v[i]!r})")
    if v.min() < 0 < v.max():
        j, k = int(np.argmin(v)), int(np.argmax(v))
        raise VanishingDenominator(
            f"{what} changes sign between {X[j].tolist()} and {X[k].tolist()}, so it vanishes in between"
        )


def compose(s: ScalarField, maps: Sequence[ScalarField]) -> ScalarField:
    """The field s(b(x)) on the chart of the maps; keeps track of target bounds."""
    return compose_all([s], maps)[0]


def compose_all(fields: Sequence[ScalarField], maps: Sequence[ScalarField]) -> list:
    """Compose several fields with one map, sharing common subtrees."""
    return [_compose_one(s, node, maps) for s, node in zip(fields, _substituted(fields, maps))]


def _substituted(fields, maps):
    for s in fields:
        if s.chart != fields[0].chart:
            raise ChartMismatch("composed fields live on different charts")
        if len(maps) != s.chart.n:
            raise ChartMismatch(f"{len(maps)} map components for a chart of dimension {s.chart.n}")
    return ex.substitute([s.node for s in fields], tuple(m.node for m in maps))


def _compose_one(s, node, maps):
    src = maps[0].chart
    bnodes = tuple(m.node for m in maps)
    guards = []
    for m in maps:
        guards.extend(g for g in m.guards if g not in guards)
    if s.chart.bounds is not None:
        g = (bnodes, s.chart)
        if g not in guards:
            guards.append(g)
    for gmaps, tgt in s.guards:
        g = (tuple(ex.substitute(list(gmaps), bnodes)), tgt)
        guards.append(g)
    return ScalarField(src, node, tuple(guards))


class Factor:
    """Fibre-wise invertible bundle map (b, beta) from ``source`` to ``target``."""

    def __init__(self, b, beta, source, target, inverse=None, check=True, seed=0):
        self.source = _bundle(source)
        self.target = _bundle(target)
        sc, tc = self.source.base, self.target.base
        b = [parse_field(x, sc) if isinstance(x, str) else x for x in b]
        if isinstance(beta, str):
            beta = parse_field(beta, sc)
        elif not isinstance(beta, ScalarField):
            beta = sc.const(beta)
        if len(b) != tc.n:
            raise ChartMismatch(f"base map has {len(b)} components, target has dimension {tc.n}")
        if any(c.chart != sc for c in b) or beta.chart != sc:
            raise ChartMismatch("factor components must live on the source chart")
        if inverse is not None:
            inverse = [parse_field(x, tc) if isinstance(x, str) else x for x in inverse]
            if len(inverse) != sc.n or any(c.chart != tc for c in inverse):
                raise ChartMismatch("declared inverse must map the target chart to the source chart")
        self.b = tuple(b)
        self.beta = beta
        self.inverse = None if inverse is None else tuple(inverse)
        if check:
            certify_nonvanishing(beta, seed=seed, what="factor scale beta")

    @classmethod
    def identity(cls, bundle):
        L = _bundle(bundle)
        return cls(L.base.coords(), 1.0, L, L, inverse=L.base.coords(), check=False)

    def map_points(self, x) -> np.ndarray:
        X, single = _points(self.source.base, x)
        Y = np.stack([j.v for j in evaluate_fields(self.b, X, 0)], axis=1)
        _points(self.target.base, Y)  # bounds check
        return Y[0] if single else Y

    def jacobian(self, x) -> np.ndarray:
        X, single = _points(self.source.base, x)
        jets = evaluate_fields(self.b, X, 1)
        J = np.stack([j.grad(len(X), self.source.n) for j in jets], axis=1)
        return J[0] if single else J

    def then(self, other: "Factor") -> "Factor":
        """``other`` after ``self``."""
        return compose_factors(other, self)

    def inverse_factor(self) -> "Factor":
        if self.inverse is None:
            raise NoInverseDeclared("factor has no declared inverse map")
        beta_inv = 1.0 / compose(self.beta, self.inverse)
        return Factor(self.inverse, beta_inv, self.target, self.source, inverse=self.b, check=False)

    def perturbed(self, scale: ScalarField) -> "Factor":
        """Same base map with beta multiplied by ``scale`` (a control, not a symmetry)."""
        return Factor(self.b, self.beta * scale, self.source, self.target, self.inverse)


def compose_factors(F: Factor, G: Factor) -> Factor:
    """F o G: first G, then F."""
    if G.target.base != F.source.base:
        raise ChartMismatch("composed factors do not share the middle bundle")
    b = [compose(c, G.b) for c in F.b]
    beta = compose(F.beta, G.b) * G.beta
    inverse = None
    if F.inverse is not None and G.inverse is not None:
        inverse = [compose(c, F.inverse) for c in G.inverse]
    return Factor(b, beta, G.source, F.target, inverse=inverse, check=False)


def pullback_section(F: Factor, s: ScalarField) -> ScalarField:
    """(b, beta)^* s = (s o b) / beta."""
    if s.chart != F.target.base:
        raise ChartMismatch("section does not live on the factor's target")
    return compose(s, F.b) / F.beta


@dataclass(frozen=True)
class DerValue:
    """A derivation at a point: tangent vector v and scalar part a."""

    point: tuple
    v: np.ndarray
    a: float


class Derivation:
    __slots__ = ("X", "f")

    def __init__(self, X: VectorField, f):
        if not isinstance(f, ScalarField):
            f = X.chart.const(f)
        if f.chart != X.chart:
            raise ChartMismatch("symbol and scalar part on different charts")
        self.X = X
        self.f = f

    @property
    def chart(self):
        return self.X.chart

    @classmethod
    def parse(cls, chart, X: Sequence[str], f: str = "0"):
        return cls(VectorField.parse(chart, X), parse_field(f, chart))

    def __add__(self, other):
        return Derivation(self.X + other.X, self.f + other.f)

    def scaled(self, c):
        return Derivation(self.X.scaled(c), self.f * c)

    def at(self, x) -> DerValue:
        X, _ = _points(self.chart, x)
        vals = evaluate_fields(list(self.X.components) + [self.f], X, 0)
        return DerValue(tuple(X[0]), np.array([j.v[0] for j in vals[:-1]]), float(vals[-1].v[0]))


def apply_derivation(D: Derivation, s: ScalarField) -> ScalarField:
    """(X (+) f)[s] = X[s] + f s."""
    if s.chart != D.chart:
        raise ChartMismatch("section and derivation on different charts")
    return D.X.apply(s) + D.f * s


def der_bracket(D1: Derivation, D2: Derivation) -> Derivation:
    """[X (+) f, Y (+) g] = [X,Y] (+) (X[g] - Y[f])."""
    if D1.chart != D2.chart:
        raise ChartMismatch("derivations on different charts")
    return Derivation(lie_bracket(D1.X, D2.X), D1.X.apply(D2.f) - D2.X.apply(D1.f))


def der_map(F: Factor, x, d) -> DerValue:
    """D(b,beta)(v (+) a) = Db v (+) (a - d beta(v) / beta)."""
    if isinstance(d, DerValue):
        if not np.allclose(d.point, x, rtol=0, atol=1e-12):
            raise BasePointMismatch(f"derivation at {d.point}, map applied at {tuple(x)}")
        v, a = d.v, d.a
    else:
        v, a = d
    X, _ = _points(F.source.base, x)
    v = np.asarray(v, dtype=float)
    jets = evaluate_fields(list(F.b) + [F.beta], X, 1)
    n = F.source.n
    J = np.stack([j.grad(1, n)[0] for j in jets[:-1]])
    bet = jets[-1]
    y = np.array([j.v[0] for j in jets[:-1]])
    _points(F.target.base, y)
    return DerValue(tuple(y), J @ v, float(a - bet.grad(1, n)[0] @ v / bet.v[0]))


def der_pushforward(F: Factor, D: Derivation) -> Derivation:
    """(b,beta)_*(X (+) f) = b_*X (+) (f + beta X[1/beta]) o b^-1."""
    if F.inverse is None:
        raise NoInverseDeclared("push-forward needs the factor's declared inverse")
    if D.chart != F.source.base:
        raise ChartMismatch("derivation does not live on the factor's source")
    comps = [D.X.apply(bi) for bi in F.b]
    g = D.f - D.X.apply(F.beta) / F.beta
    tc = F.target.base
    return Derivation(
        VectorField(tc, [compose(c, F.inverse) for c in comps]), compose(g, F.inverse)
    )


@dataclass(frozen=True)
class JetValue:
    """j^1 s at a point in the trivialization T*M (+) R: (ds, s)."""

    base_point: tuple
    p: np.ndarray
    u: float


def jet_prolong(s: ScalarField, x) -> JetValue:
    X, _ = _points(s.chart, x)
    j = evaluate_fields([s], X, 1)[0]
    return JetValue(tuple(X[0]), j.grad(1, s.chart.n)[0].copy(), float(j.v[0]))


def jet_pairing(j: JetValue, d) -> float:
    """<(p,u), v (+) a> = p.v + u a."""
    if isinstance(d, DerValue):
        if not np.allclose(d.point, j.base_point, rtol=0, atol=1e-12):
            raise BasePointMismatch(f"jet at {j.base_point}, derivation at {d.point}")
        v, a = d.v, d.a
    else:
        v, a = d
    return float(np.dot(j.p, v) + j.u * a)


@dataclass(frozen=True)
class ProductChart(ChartDomain):
    """Chart of M x N x R^x: first factor, second factor, fibre ratio b."""

    first: ChartDomain | None = field(default=None, compare=False)
    second: ChartDomain | None = field(default=None, compare=False)
    branch: int = 1

    @property
    def n1(self):
        return self.first.n

    @property
    def n2(self):
        return self.second.n

    @property
    def ratio_index(self):
        return self.n - 1

    def lift_first(self, s: ScalarField) -> ScalarField:
        if s.chart != self.first:
            raise ChartMismatch("section does not live on the first factor")
        return compose(s, self.coords()[: self.n1])

    def lift_second(self, s: ScalarField) -> ScalarField:
        if s.chart != self.second:
            raise ChartMismatch("section does not live on the second factor")
        return compose(s, self.coords()[self.n1 : self.n1 + self.n2])

    def ratio(self) -> ScalarField:
        return self.coord(self.ratio_index)


def base_product(L1, L2, branch: int = 1, on_clash: str = "error") -> ProductChart:
    """Chart (y1, y2, b) of the line product, b on the positive or negative branch.

    Clashing coordinate names raise CoordinateNameClash unless
    ``on_clash="suffix"``, which appends 1 and 2 to every name of the
    respective factor.
    """
    c1, c2 = _bundle(L1).base, _bundle(L2).base
    n1, n2 = list(c1.coord_names), list(c2.coord_names)
    clash = (set(n1) & set(n2)) | ({"b"} & (set(n1) | set(n2)))
    if clash:
        if on_clash != "suffix":
            raise CoordinateNameClash(f"coordinate names {sorted(clash)} occur in both factors")
        n1 = [f"{x}1" for x in n1]
        n2 = [f"{x}2" for x in n2]
        if len(set(n1 + n2 + ["b"])) != len(n1) + len(n2) + 1:
            raise CoordinateNameClash("suffixing did not resolve the name clash")
    if branch not in (1, -1):
        raise ValueError("branch must be +1 or -1")
    inf = float("inf")
    fb = (0.0, inf) if branch == 1 else (-inf, 0.0)
    free = [(-inf, inf)]
    b1 = list(c1.bounds) if c1.bounds else free * c1.n
    b2 = list(c2.bounds) if c2.bounds else free * c2.n
    box = c1.sampling_box() + c2.sampling_box() + [(0.5, 2.0) if branch == 1 else (-2.0, -0.5)]
    return ProductChart(
        tuple(n1 + n2 + ["b"]), tuple(b1 + b2 + [fb]), box=tuple(box),
        first=c1, second=c2, branch=branch,
    )


def ratio_function(s1: ScalarField, s2: ScalarField, P: ProductChart, check=True) -> ScalarField:
    """(s1/s2)(y1, y2, b) = s1(y1) b / s2(y2)."""
    if check:
        certify_nonvanishing(s2, what="denominator section")
    return P.lift_first(s1) * P.ratio() / P.lift_second(s2)


def product_projections(P: ProductChart) -> tuple[Factor, Factor]:
    """The factors P1 = (pr1, 1) and P2 = (pr2, b) out of the line product."""
    y = P.coords()
    p1 = Factor(y[: P.n1], 1.0, P, P.first, check=False)
    p2 = Factor(y[P.n1 : P.n1 + P.n2], P.ratio(), P, P.second, check=False)
    return p1, p2
