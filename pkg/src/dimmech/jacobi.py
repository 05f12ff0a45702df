"""Lichnerowicz pairs: brackets, Hamiltonian maps and integrability reports."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .bundle import Derivation
from .errors import ChartMismatch, UncertifiedInput
from .fields import (
    BivectorField,
    ChartDomain,
    ScalarField,
    VectorField,
    _points,
    evaluate_fields,
    lie_derivative_arrays,
    schouten_arrays,
    wedge_arrays,
)

BATTERY_SIZE = 10
BATTERY_SEED = 20240917


@dataclass(frozen=True)
class LichnerowiczPair:
    chart: ChartDomain
    pi: BivectorField
    R: VectorField
    certified: bool = False

    def __post_init__(self):
        if self.pi.chart != self.chart or self.R.chart != self.chart:
            raise ChartMismatch("pi and R must live on the pair's chart")

    @classmethod
    def zero(cls, chart):
        return cls(chart, BivectorField.zero(chart), VectorField.zero(chart))

    def opposite(self) -> "LichnerowiczPair":
        """The pair of the bracket -{,}."""
        return LichnerowiczPair(self.chart, -self.pi, -self.R, self.certified)

    def require_certified(self, what="operation"):
        if not self.certified:
            raise UncertifiedInput(f"{what} needs a certified Lichnerowicz pair")

    def arrays(self, X):
        P, dP = self.pi.arrays(X, 1)
        R, dR = self.R.arrays(X, 1)
        return P, dP, R, dR


@dataclass
class CertificationReport:
    """Flat record of a residual-based check."""

    check: str
    tolerance: float
    samples: int
    residuals: dict
    passed: bool
    seed: int | None = None
    info: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"check = {self.check}", f"tolerance = {self.tolerance!r}", f"samples = {self.samples}"]
        if self.seed is not None:
            lines.append(f"seed = {self.seed}")
        for k, v in self.info.items():
            lines.append(f"{k} = {v}")
        for k, v in self.residuals.items():
            lines.append(f"residual.{k} = {v!r}")
        lines.append(f"status = {'pass' if self.passed else 'fail'}")
        return "\n".join(lines) + "\n"

    def __bool__(self):
        return self.passed


def _check_chart(J, *fs):
    for f in fs:
        if f.chart != J.chart:
            raise ChartMismatch("field and pair live on different charts")


def bracket_field(J: LichnerowiczPair, f: ScalarField, g: ScalarField) -> ScalarField:
    """{f,g} = pi(df,dg) + f R[g] - g R[f] as a field."""
    _check_chart(J, f, g)
    return J.pi.contract(f, g) + f * J.R.apply(g) - g * J.R.apply(f)


def _bracket_values(P, R, f, df, g, dg):
    return (
        np.einsum("mi,mij,mj->m", df, P, dg)
        + f * np.einsum("mi,mi->m", R, dg)
        - g * np.einsum("mi,mi->m", R, df)
    )


def _bracket_jet(arrs, fj, gj, m, n):
    """Value and gradient of {f,g} from order-2 jets of f, g and order-1 data of (pi, R)."""
    P, dP, R, dR = arrs
    f, df, hf = fj.v, fj.grad(m, n), fj.hess(m, n)
    g, dg, hg = gj.v, gj.grad(m, n), gj.hess(m, n)
    val = _bracket_values(P, R, f, df, g, dg)
    Rdf = np.einsum("mi,mi->m", R, df)
    Rdg = np.einsum("mi,mi->m", R, dg)
    grad = (
        np.einsum("mijl,mi,mj->ml", dP, df, dg)
        + np.einsum("mij,mil,mj->ml", P, hf, dg)
        + np.einsum("mij,mi,mjl->ml", P, df, hg)
        + df * Rdg[:, None]
        + f[:, None] * (np.einsum("mkl,mk->ml", dR, dg) + np.einsum("mk,mkl->ml", R, hg))
        - dg * Rdf[:, None]
        - g[:, None] * (np.einsum("mkl,mk->ml", dR, df) + np.einsum("mk,mkl->ml", R, hf))
    )
    return val, grad


def jacobi_bracket(J: LichnerowiczPair, f: ScalarField, g: ScalarField, x):
    _check_chart(J, f, g)
    X, single = _points(J.chart, x)
    m, n = X.shape
    fj, gj = evaluate_fields([f, g], X, 1)
    P, _ = J.pi.arrays(X, 0)
    R, _ = J.R.arrays(X, 0)
    v = _bracket_values(P, R, fj.v, fj.grad(m, n), gj.v, gj.grad(m, n))
    return float(v[0]) if single else v


def hamiltonian_vf(J: LichnerowiczPair, f: ScalarField) -> VectorField:
    """X_f with components sum_j pi^ji d_j f + f R^i."""
    _check_chart(J, f)
    return J.pi.sharp(f) + J.R.scaled(f)


def hamiltonian_derivation(J: LichnerowiczPair, f: ScalarField) -> Derivation:
    """Delta_f = X_f (+) -R[f]; Delta_f[g] = {f,g}."""
    return Derivation(hamiltonian_vf(J, f), -J.R.apply(f))


def identity_battery(chart: ChartDomain, count: int = BATTERY_SIZE, seed: int = BATTERY_SEED):
    """Deterministic polynomial-trig test fields, grouped in triples."""
    rng = np.random.default_rng(seed)
    return [tuple(random_field(chart, rng) for _ in range(3)) for _ in range(count)]


def random_field(chart: ChartDomain, rng, degree: int = 2, trig: bool = True) -> ScalarField:
    """A random polynomial of the given degree plus optional sin/cos/exp terms."""
    n = chart.n
    x = chart.coords()
    acc = chart.const(round(float(rng.normal()), 3))
    for i in range(n):
        acc = acc + round(float(rng.normal()), 3) * x[i]
    if degree >= 2:
        for i in range(n):
            for j in range(i, n):
                if rng.random() < 0.5:
                    acc = acc + round(float(rng.normal()), 3) * x[i] * x[j]
    if degree >= 3:
        i, j, k = rng.integers(0, n, 3)
        acc = acc + round(float(rng.normal()), 3) * x[i] * x[j] * x[k]
    if trig:
        i, j = rng.integers(0, n, 2)
        acc = acc + round(float(rng.normal()), 3) * (0.7 * x[i]).apply("sin")
        acc = acc + round(float(rng.normal()), 3) * (0.5 * x[j]).apply("cos")
        acc = acc + 0.2 * (0.3 * x[int(rng.integers(0, n))]).apply("exp")
    return acc


def jacobi_identity_residual(J: LichnerowiczPair, triples, X) -> np.ndarray:
    """max over triples of |{f,{g,h}} + {g,{h,f}} + {h,{f,g}}| at each point."""
    m, n = X.shape
    arrs = J.arrays(X)
    P, _, R, _ = arrs
    worst = np.zeros(m)
    for f, g, h in triples:
        jf, jg, jh = evaluate_fields([f, g, h], X, 2)
        total = np.zeros(m)
        for a, b, c in ((jf, jg, jh), (jg, jh, jf), (jh, jf, jg)):
            bv, bg = _bracket_jet(arrs, b, c, m, n)
            total += _bracket_values(P, R, a.v, a.grad(m, n), bv, bg)
        worst = np.maximum(worst, np.abs(total))
    return worst


def integrability_residuals(J: LichnerowiczPair, X) -> dict:
    P, dP, R, dR = J.arrays(X)
    lie = lie_derivative_arrays(R, dR, P, dP)
    integ = schouten_arrays(P, dP) + 2.0 * wedge_arrays(R, P)
    return {
        "lie_derivative": float(np.max(np.abs(lie), initial=0.0)),
        "schouten_plus_2_wedge": float(np.max(np.abs(integ), initial=0.0)),
    }


def check_jacobi_pair(J: LichnerowiczPair, samples, tol: float, seed=None, battery=None) -> CertificationReport:
    """Report [R,pi] and [pi,pi] + 2 R^pi over the samples plus a Jacobi-identity battery."""
    X, _ = _points(J.chart, samples)
    res = integrability_residuals(J, X)
    passed = res["lie_derivative"] < tol and res["schouten_plus_2_wedge"] < tol
    triples = battery if battery is not None else identity_battery(J.chart)
    res["jacobi_identity"] = float(np.max(jacobi_identity_residual(J, triples, X), initial=0.0))
    return CertificationReport("jacobi_pair", tol, len(X), res, bool(passed), seed)


def certify(J: LichnerowiczPair, samples, tol: float, seed=None):
    """Return (pair with the certified flag set from the report, report)."""
    rep = check_jacobi_pair(J, samples, tol, seed)
    return replace(J, certified=rep.passed), rep
