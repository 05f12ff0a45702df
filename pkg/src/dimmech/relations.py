"""Coisotropic submanifolds, product structures, Jacobi maps and jet lifts."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .bundle import (
    Derivation,
    Factor,
    ProductChart,
    base_product,
    compose,
    compose_all,
    der_pushforward,
    pullback_section,
)
from .contact import JetChart, jet_chart, linear_section
from .errors import ChartMismatch, NoInverseDeclared, SampleOffGraph, SampleOffSurface
from .fields import BivectorField, ScalarField, VectorField, _points, evaluate_fields
from .jacobi import (
    CertificationReport,
    LichnerowiczPair,
    _bracket_values,
    bracket_field,
    jacobi_bracket,
    random_field,
)

SURFACE_TOL = 1e-8


def _values_and_grads(fields, X):
    m, n = X.shape
    jets = evaluate_fields(fields, X, 1)
    return np.stack([j.v for j in jets]), np.stack([j.grad(m, n) for j in jets])


def _tangency_residuals(J, X, vanishing, constraints):
    """max |dc_m(X_V)| and max |{V_i, V_j}| over the samples."""
    P, _ = J.pi.arrays(X, 0)
    R, _ = J.R.arrays(X, 0)
    V, dV = _values_and_grads(vanishing, X)
    _, dC = _values_and_grads(constraints, X)
    # X_V^i = sum_k pi^ki d_k V + V R^i
    XV = np.einsum("mki,vmk->vmi", P, dV) + V[:, :, None] * R[None]
    tangency = np.einsum("cmi,vmi->vcm", dC, XV)
    closure = 0.0
    for i in range(len(vanishing)):
        for j in range(i + 1, len(vanishing)):
            br = _bracket_values(P, R, V[i], dV[i], V[j], dV[j])
            closure = max(closure, float(np.max(np.abs(br))))
    return float(np.max(np.abs(tangency), initial=0.0)), closure


def _require_on_surface(constraints, X, err=SampleOffSurface):
    C, _ = _values_and_grads(constraints, X)
    worst = np.max(np.abs(C), axis=0)
    if np.any(worst >= SURFACE_TOL):
        i = int(np.argmax(worst))
        raise err(f"sample {X[i].tolist()} violates the constraints by {worst[i]:.3g}")
    return float(np.max(worst))


def coisotropic_check(J: LichnerowiczPair, constraints: Sequence[ScalarField], surface_samples, test_sections: Sequence[ScalarField], tol: float, seed=None) -> CertificationReport:
    """Tangency of X_(c_j u) to {c = 0}, plus closure of the c_j u under the bracket."""
    X, _ = _points(J.chart, surface_samples)
    for f in list(constraints) + list(test_sections):
        if f.chart != J.chart:
            raise ChartMismatch("constraints and test sections must live on the pair's chart")
    _require_on_surface(constraints, X)
    vanishing = [c * u for c in constraints for u in test_sections]
    tangency, closure = _tangency_residuals(J, X, vanishing, constraints)
    res = {"tangency": tangency, "bracket_closure": closure}
    return CertificationReport("coisotropic", tol, len(X), res, tangency < tol and closure < tol, seed)


def product_jacobi(J1: LichnerowiczPair, J2: LichnerowiczPair, chart: ProductChart | None = None) -> LichnerowiczPair:
    """Product pair on M1 x M2 x R^x in the frame where P1^*1 = 1 and P2^*s = s(y2)/b.

    Components (b the fibre ratio coordinate):
      pi = pi1(y1) + b pi2(y2) - b R1(y1) ^ d_b + b^2 R2(y2) ^ d_b,   R = R1(y1).
    These are the unique components for which
      {P1^*s, P1^*s'} = P1^*{s,s'}_1, {P2^*s, P2^*s'} = P2^*{s,s'}_2, {P1^*s, P2^*s'} = 0.
    """
    J1.require_certified("product_jacobi")
    J2.require_certified("product_jacobi")
    P = chart or base_product(J1.chart, J2.chart, on_clash="suffix")
    if P.first != J1.chart or P.second != J2.chart:
        raise ChartMismatch("product chart does not match the factors")
    n1, n2 = P.n1, P.n2
    y = P.coords()
    b = P.ratio()
    k1 = sorted(J1.pi.upper)
    k2 = sorted(J2.pi.upper)
    f1 = compose_all([J1.pi.upper[k] for k in k1] + list(J1.R.components), y[:n1])
    f2 = compose_all([J2.pi.upper[k] for k in k2] + list(J2.R.components), y[n1 : n1 + n2])
    upper = {}
    for k, c in zip(k1, f1):
        upper[k] = c
    for (i, j), c in zip(k2, f2):
        upper[(n1 + i, n1 + j)] = b * c
    r = P.ratio_index
    for i, c in enumerate(f1[len(k1):]):
        upper[(i, r)] = -(b * c)
    for i, c in enumerate(f2[len(k2):]):
        upper[(n1 + i, r)] = b * b * c
    R = VectorField(P, list(f1[len(k1):]) + [0.0] * (n2 + 1))
    return LichnerowiczPair(P, BivectorField(P, upper), R)


def jacobi_map_check(F: Factor, J1: LichnerowiczPair, J2: LichnerowiczPair, section_pairs, samples, tol: float, seed=None) -> CertificationReport:
    """max |F^*{s,s'}_2 - {F^*s, F^*s'}_1| with J1 on F's source and J2 on its target."""
    if J1.chart != F.source.base or J2.chart != F.target.base:
        raise ChartMismatch("structures do not match the factor's source and target")
    J1.require_certified("jacobi_map_check")
    J2.require_certified("jacobi_map_check")
    X, _ = _points(J1.chart, samples)
    worst = 0.0
    for s, t in section_pairs:
        lhs = pullback_section(F, bracket_field(J2, s, t))
        ps, pt = pullback_section(F, s), pullback_section(F, t)
        diff = evaluate_fields([lhs], X, 0)[0].v - jacobi_bracket(J1, ps, pt, X)
        worst = max(worst, float(np.max(np.abs(diff))))
    return CertificationReport("jacobi_map", tol, len(X), {"morphism": worst}, worst < tol, seed)


def jet_lift_diffeo(F: Factor, jc_source: JetChart | None = None, jc_target: JetChart | None = None) -> Factor:
    """J^1 F for a factor F: L1 -> L2 covering a diffeomorphism.

    The lift runs the other way, from the jet chart of L2 to that of L1:
    (q2, p2, z2) -> (q1, p1, z1) with q1 = b^-1(q2),
    p1 = (Db(q1)^T p2 - z2 grad beta(q1) / beta(q1)) / beta(q1), z1 = z2 / beta(q1),
    and fibre scale 1 / beta(q1).
    """
    if F.inverse is None:
        raise NoInverseDeclared("jet lifts need the factor's declared inverse")
    base1, base2 = F.source.base, F.target.base
    j1 = jc_source or jet_chart(base1)
    j2 = jc_target or jet_chart(base2)
    n = base1.n
    if base2.n != n:
        raise ChartMismatch("a diffeomorphic factor needs equal dimensions")
    # everything is first expressed on base1, then moved to jet chart 2 through q1 = b^-1(q2)
    q1 = [compose(c, j2.q()) for c in F.inverse]
    beta = F.beta
    lifted = compose_all(
        [beta] + [beta.d(j) for j in range(n)] + [F.b[i].d(j) for i in range(n) for j in range(n)], q1
    )
    bq, dbeta, Db = lifted[0], lifted[1 : n + 1], lifted[n + 1 :]
    p2, z2 = j2.p(), j2.z()
    p1 = []
    for j in range(n):
        acc = -(z2 * dbeta[j] / bq)
        for i in range(n):
            acc = acc + Db[i * n + j] * p2[i]
        p1.append(acc / bq)
    z1 = z2 / bq
    # inverse: (q1, p1, z1) -> q2 = b(q1), z2 = beta z1, p2 = Db^-T (beta p1 + z1 grad beta)
    qb = [compose(c, j1.q()) for c in F.b]
    inv_jac = compose_all([F.inverse[i].d(j) for i in range(n) for j in range(n)], qb)
    beta1 = compose_all([beta] + [beta.d(j) for j in range(n)], j1.q())
    pp1, zz1 = j1.p(), j1.z()
    w = [beta1[0] * pp1[j] + zz1 * beta1[1 + j] for j in range(n)]
    p2_inv = []
    for i in range(n):
        acc = j1.const(0.0)
        for j in range(n):
            # (Db^-1)_{ji} = d(b^-1)^j / dq2_i evaluated at b(q1)
            acc = acc + inv_jac[j * n + i] * w[j]
        p2_inv.append(acc)
    inverse = qb + p2_inv + [beta1[0] * zz1]
    return Factor(q1 + p1 + [z1], 1.0 / bq, j2, j1, inverse=inverse, check=False)


def lgraph_constraints(G: Factor, P: ProductChart) -> list:
    """Constraints y2 - b(y1) = 0 and b_ratio - beta(y1) = 0 cutting out the L-graph of G."""
    if P.first != G.source.base or P.second != G.target.base:
        raise ChartMismatch("product chart does not match the factor")
    y = P.coords()
    n1 = P.n1
    lifted = compose_all(list(G.b) + [G.beta], y[:n1])
    cons = [y[n1 + i] - c for i, c in enumerate(lifted[:-1])]
    cons.append(P.ratio() - lifted[-1])
    return cons


def lgraph_samples(G: Factor, P: ProductChart, count: int, seed: int = 0) -> np.ndarray:
    X = G.source.base.sample(count, seed)
    Y = G.map_points(X)
    beta = evaluate_fields([G.beta], X, 0)[0].v
    return np.column_stack([X, Y, beta])


def _graph_test_sections(P, seed):
    rng = np.random.default_rng(seed)
    return [P.const(1.0)] + [random_field(P, rng, degree=1) for _ in range(2)]


def lgraph_check(G: Factor, J_product: LichnerowiczPair, samples, tol: float, seed: int = 0) -> CertificationReport:
    """Coisotropy of the L-graph of G; by the coisotropic-relation criterion, G is Jacobi iff it passes."""
    P = J_product.chart
    cons = lgraph_constraints(G, P)
    X, _ = _points(P, samples)
    _require_on_surface(cons, X, SampleOffGraph)
    rep = coisotropic_check(J_product, cons, X, _graph_test_sections(P, seed), tol, seed)
    rep.check = "lgraph"
    return rep


def jet_lift_graph(F: Factor, J_product: LichnerowiczPair) -> Factor:
    """The factor whose L-graph in J^1L1 x J^1L2 x R^x is the jet lift of F."""
    P = J_product.chart
    return jet_lift_diffeo(F, P.first, P.second).inverse_factor()


def jet_lift_graph_samples(F: Factor, J_product: LichnerowiczPair, count: int, seed: int = 0):
    return lgraph_samples(jet_lift_graph(F, J_product), J_product.chart, count, seed)


def jet_lift_graph_check(F: Factor, J_product: LichnerowiczPair, samples, tol: float, seed: int = 0, n_generators: int = 3) -> CertificationReport:
    """Coisotropy of the jet lift of F in the product of the jet charts.

    Uses the spanning vanishing sections R1^*l_a1 - R2^*l_a2 (a2 = F_* a1) and
    R1^*u1 - R2^*u2 (u1 = F^*u2), where R1^*s = s(y1) and R2^*s = s(y2)/b.
    Reports their values on the samples, the tangency of their Hamiltonian
    vector fields to the graph and the closure of their brackets.
    """
    P = J_product.chart
    if not isinstance(P, ProductChart) or not isinstance(P.first, JetChart) or not isinstance(P.second, JetChart):
        raise ChartMismatch("jet_lift_graph_check needs a pair on a product of jet charts")
    jc1, jc2 = P.first, P.second
    if jc1.base != F.source.base or jc2.base != F.target.base:
        raise ChartMismatch("jet charts do not match the factor")
    H = jet_lift_graph(F, J_product)
    cons = lgraph_constraints(H, P)
    X, _ = _points(P, samples)
    _require_on_surface(cons, X, SampleOffGraph)

    rng = np.random.default_rng(seed)
    base1, base2 = F.source.base, F.target.base
    b = P.ratio()
    vanishing = []
    for _ in range(n_generators):
        a1 = Derivation(
            VectorField(base1, [random_field(base1, rng) for _ in range(base1.n)]),
            random_field(base1, rng),
        )
        a2 = der_pushforward(F, a1)
        vanishing.append(P.lift_first(linear_section(jc1, a1)) - P.lift_second(linear_section(jc2, a2)) / b)
        u2 = random_field(base2, rng)
        u1 = pullback_section(F, u2)
        vanishing.append(P.lift_first(jc1.pull(u1)) - P.lift_second(jc2.pull(u2)) / b)
    V, _ = _values_and_grads(vanishing, X)
    tangency, closure = _tangency_residuals(J_product, X, vanishing, cons)
    res = {
        "generators_on_graph": float(np.max(np.abs(V))),
        "tangency": tangency,
        "bracket_closure": closure,
    }
    return CertificationReport("jet_lift_graph", tol, len(X), res, all(v < tol for v in res.values()), seed)
