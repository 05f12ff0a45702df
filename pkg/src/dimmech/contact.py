"""Exact contact forms, jet charts and the canonical contact structure.

Conventions (see the bracket relations check, which pins them):
the 2-form paired with theta is omega = d theta with
(d theta)_ij = d_i theta_j - d_j theta_i, eta = theta (x) theta + omega,
R = eta^-T theta and pi = eta^-1 omega eta^-T.  The canonical form on a jet
chart (q, p, z) is theta = sum_i p_i dq_i - dz.  With these choices the
canonical pair is pi = sum_i d/dp_i ^ d/dq_i + p_i d/dp_i ^ d/dz and
R = -d/dz, which satisfies {l_a, l_b} = l_[a,b] for l = p.X + z f.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import expr as ex
from .bundle import Derivation, apply_derivation, compose, der_bracket
from .errors import ChartMismatch, DegenerateEta, LengthMismatch
from .fields import (
    BivectorField,
    ChartDomain,
    ScalarField,
    VectorField,
    _points,
    evaluate_fields,
    parse_field,
)
from .jacobi import CertificationReport, LichnerowiczPair, certify, jacobi_bracket

CERT_SAMPLES = 100
CERT_TOL = 1e-9
DET_THRESHOLD = 1e-10


class ContactForm:
    def __init__(self, chart: ChartDomain, theta: Sequence, samples=None, seed=0):
        if chart.n % 2 != 1:
            raise ValueError("a contact form needs an odd-dimensional chart")
        theta = [parse_field(t, chart) if isinstance(t, str) else t for t in theta]
        if len(theta) != chart.n or any(t.chart != chart for t in theta):
            raise ChartMismatch("theta needs one component per chart coordinate")
        self.chart = chart
        self.theta = tuple(theta)
        X = chart.sample(CERT_SAMPLES, seed) if samples is None else samples
        X, _ = _points(chart, X)
        det = np.linalg.det(self.eta_at(X))
        bad = ~(np.abs(det) > DET_THRESHOLD)
        if bad.any():
            raise DegenerateEta(f"eta is degenerate near {X[int(np.argmax(bad))].tolist()}")

    def omega(self) -> list:
        """omega_ij = d_i theta_j - d_j theta_i."""
        n = self.chart.n
        return [[self.theta[j].d(i) - self.theta[i].d(j) for j in range(n)] for i in range(n)]

    def eta(self) -> list:
        n = self.chart.n
        om = self.omega()
        return [[self.theta[i] * self.theta[j] + om[i][j] for j in range(n)] for i in range(n)]

    def eta_at(self, X) -> np.ndarray:
        n = self.chart.n
        eta = self.eta()
        jets = evaluate_fields([eta[i][j] for i in range(n) for j in range(n)], X, 0)
        return np.stack([j.v for j in jets], axis=1).reshape(len(X), n, n)

    def reeb_residuals(self, R: VectorField, X) -> tuple[float, float]:
        """max |theta(R) - 1| and max |i_R d theta| at the points."""
        n = self.chart.n
        X, _ = _points(self.chart, X)
        th = np.stack([j.v for j in evaluate_fields(self.theta, X, 0)], axis=1)
        om = self.omega()
        W = np.stack(
            [j.v for j in evaluate_fields([om[i][j] for i in range(n) for j in range(n)], X, 0)], axis=1
        ).reshape(len(X), n, n)
        Rv = R.arrays(X, 0)[0]
        return (
            float(np.max(np.abs(np.einsum("mi,mi->m", th, Rv) - 1.0))),
            float(np.max(np.abs(np.einsum("mi,mij->mj", Rv, W)))),
        )


def contact_to_jacobi(theta: ContactForm, samples=None, tol=CERT_TOL, seed=0) -> LichnerowiczPair:
    """Non-degenerate pair of an exact contact form, certified at the samples.

    eta is inverted pointwise at evaluation time (condition number guarded).
    """
    chart = theta.chart
    n = chart.n
    eta = theta.eta()
    om = theta.omega()
    N = ex.MatInv([[eta[i][j].node for j in range(n)] for i in range(n)])
    inv = [[ScalarField(chart, ex.inv_entry(N, i, j)) for j in range(n)] for i in range(n)]
    R = VectorField(
        chart, [sum((inv[j][i] * theta.theta[j] for j in range(n)), chart.const(0.0)) for i in range(n)]
    )
    nz = [(i, j) for i in range(n) for j in range(n) if not (isinstance(om[i][j].node, ex.Const) and om[i][j].node.value == 0)]

    def entry(a, b):
        acc = chart.const(0.0)
        for i, j in nz:
            acc = acc + inv[a][i] * om[i][j] * inv[b][j]
        return acc

    pair = LichnerowiczPair(chart, BivectorField.from_function(chart, entry), R)
    X = chart.sample(CERT_SAMPLES, seed) if samples is None else samples
    return certify(pair, X, tol, seed)[0]


def contact_form_of(J: LichnerowiczPair, x) -> np.ndarray:
    """theta at points, recovered as the kernel of pi normalized by theta(R) = 1."""
    X, single = _points(J.chart, x)
    P = J.pi.arrays(X, 0)[0]
    R = J.R.arrays(X, 0)[0]
    out = []
    for Pm, Rm in zip(P, R):
        _, _, vt = np.linalg.svd(Pm)
        k = vt[-1]
        out.append(k / (k @ Rm))
    out = np.array(out)
    return out[0] if single else out


@dataclass(frozen=True)
class JetChart(ChartDomain):
    """Chart (q_1..q_n, p_1..p_n, z) of J^1 of the trivial bundle over ``base``."""

    base: ChartDomain | None = field(default=None, compare=False)

    @property
    def base_n(self):
        return self.base.n

    def q(self):
        return self.coords()[: self.base_n]

    def p(self):
        return self.coords()[self.base_n : 2 * self.base_n]

    def z(self):
        return self.coord(2 * self.base_n)

    def pull(self, s: ScalarField) -> ScalarField:
        """pi^* s: the z-independent extension s(q)."""
        if s.chart != self.base:
            raise ChartMismatch("section does not live on the jet chart's base")
        return compose(s, self.q())


def _momentum_name(name):
    return "p" + name[1:] if name.startswith("q") and len(name) > 0 else "p_" + name


def jet_chart(base: ChartDomain) -> JetChart:
    ps = [_momentum_name(x) for x in base.coord_names]
    names = list(base.coord_names) + ps + ["z"]
    if len(set(names)) != len(names):
        ps = ["p_" + x for x in base.coord_names]
        names = list(base.coord_names) + ps + ["z_"]
    inf = float("inf")
    bounds = None
    if base.bounds is not None:
        bounds = tuple(list(base.bounds) + [(-inf, inf)] * (base.n + 1))
    box = tuple(base.sampling_box() + [(-2.0, 2.0)] * (base.n + 1))
    return JetChart(tuple(names), bounds, box=box, base=base)


def canonical_form(jc: JetChart) -> ContactForm:
    """theta = sum_i p_i dq_i - dz."""
    n = jc.base_n
    theta = [p for p in jc.p()] + [jc.const(0.0)] * n + [jc.const(-1.0)]
    return ContactForm(jc, theta)


def canonical_contact(base: ChartDomain, seed=0):
    """Jet chart over ``base`` and the certified pair of the canonical form.

    The inverse of eta is known in closed form here (pi^{p_i q_i} = 1,
    pi^{p_i z} = p_i, R = -d/dz), which avoids the pointwise inversion.
    """
    jc = jet_chart(base)
    n = jc.base_n
    iz = 2 * n
    upper = {}
    for i, p in enumerate(jc.p()):
        upper[(n + i, i)] = 1.0
        upper[(n + i, iz)] = p
    R = VectorField(jc, [jc.const(0.0)] * iz + [jc.const(-1.0)])
    pair = LichnerowiczPair(jc, BivectorField(jc, upper), R)
    return jc, certify(pair, jc.sample(CERT_SAMPLES, seed), CERT_TOL, seed)[0]


class FibrewiseLinearSection:
    """l_(X (+) f)(q, p, z) = sum_i p_i X^i(q) + z f(q)."""

    def __init__(self, jc: JetChart, D: Derivation):
        if D.chart != jc.base:
            raise ChartMismatch("derivation does not live on the jet chart's base")
        self.chart = jc
        self.derivation = D
        acc = jc.z() * jc.pull(D.f)
        for pi, Xi in zip(jc.p(), D.X.components):
            acc = acc + pi * jc.pull(Xi)
        self.field = acc

    def __call__(self, x):
        return self.field(x)

    def in_zero_locus(self, x, tol=1e-12):
        return np.abs(np.atleast_1d(self.field(x))) <= tol


def linear_section(jc: JetChart, D: Derivation) -> ScalarField:
    return FibrewiseLinearSection(jc, D).field


def check_bracket_relations(J: LichnerowiczPair, a: Derivation, b: Derivation, s: ScalarField, r: ScalarField, samples, tol, seed=None) -> CertificationReport:
    jc = J.chart
    if not isinstance(jc, JetChart):
        raise ChartMismatch("bracket relations need a pair on a jet chart")
    for obj in (a, b, s, r):
        if obj.chart != jc.base:
            raise ChartMismatch("derivations and sections must live on the base chart")
    X, _ = _points(jc, samples)
    la, lb = linear_section(jc, a), linear_section(jc, b)
    ps, pr = jc.pull(s), jc.pull(r)
    r1 = jacobi_bracket(J, la, lb, X) - linear_section(jc, der_bracket(a, b))(X)
    r2 = jacobi_bracket(J, la, ps, X) - jc.pull(apply_derivation(a, s))(X)
    r3 = jacobi_bracket(J, ps, pr, X)
    res = {
        "linear_linear": float(np.max(np.abs(r1))),
        "linear_pullback": float(np.max(np.abs(r2))),
        "pullback_pullback": float(np.max(np.abs(r3))),
    }
    return CertificationReport("bracket_relations", tol, len(X), res, all(v < tol for v in res.values()), seed)


def comoment(Psi: Sequence[Derivation], xi: Sequence[float], jc: JetChart | None = None) -> FibrewiseLinearSection:
    """mu(xi) = l_(sum_i xi_i Psi_i)."""
    if len(Psi) != len(xi):
        raise LengthMismatch(f"{len(xi)} coefficients for {len(Psi)} generators")
    if not Psi:
        raise LengthMismatch("at least one generator is needed")
    base = Psi[0].chart
    if any(D.chart != base for D in Psi):
        raise ChartMismatch("generators live on different charts")
    acc = Derivation(VectorField.zero(base), 0.0)
    for c, D in zip(xi, Psi):
        acc = acc + D.scaled(float(c))
    return FibrewiseLinearSection(jc or jet_chart(base), acc)
