import numpy as np
import pytest

from dimmech import (
    ChartDomain,
    Derivation,
    Factor,
    VectorField,
    apply_derivation,
    base_product,
    compose_factors,
    der_bracket,
    der_map,
    der_pushforward,
    eval_field,
    grad,
    jet_pairing,
    jet_prolong,
    parse_field,
    product_projections,
    pullback_section,
    ratio_function,
)
from dimmech.bundle import DerValue, JetValue, TrivialLineBundle, compose
from dimmech.errors import (
    BasePointMismatch,
    ChartMismatch,
    CoordinateNameClash,
    NoInverseDeclared,
    VanishingDenominator,
)
from dimmech.jacobi import random_field

Q = ChartDomain(("q",))
QR = ChartDomain(("q", "r"))


def pts(chart, k=50, seed=0):
    return chart.sample(k, seed)


def random_derivation(chart, rng):
    return Derivation(VectorField(chart, [random_field(chart, rng) for _ in range(chart.n)]), random_field(chart, rng))


def random_affine(chart, rng, with_inverse=True):
    """x -> A x + c with beta = exp(w.x + w0) and the exact inverse."""
    n = chart.n
    A = rng.uniform(-1, 1, (n, n)) + 2 * np.eye(n)
    c = rng.uniform(-0.5, 0.5, n)
    w = rng.uniform(-0.3, 0.3, n)
    Ai = np.linalg.inv(A)
    A, Ai, c, w = A.tolist(), Ai.tolist(), c.tolist(), w.tolist()
    names = chart.coord_names
    fwd = [" + ".join(f"({A[i][j]!r})*{names[j]}" for j in range(n)) + f" + ({c[i]!r})" for i in range(n)]
    inv = [" + ".join(f"({Ai[i][j]!r})*({names[j]} - ({c[j]!r}))" for j in range(n)) for i in range(n)]
    beta = "exp(" + " + ".join(f"({w[i]!r})*{names[i]}" for i in range(n)) + " + 0.1)"
    return Factor(fwd, beta, chart, chart, inverse=inv if with_inverse else None)


def test_pullback_examples():
    s = parse_field("q^2 + 1", Q)
    X = pts(Q)
    c = Factor(["q"], 4.0, Q, Q)
    assert np.allclose(eval_field(pullback_section(c, s), X), eval_field(s, X) / 4.0)
    ident = Factor.identity(Q)
    assert np.array_equal(eval_field(pullback_section(ident, s), X), eval_field(s, X))


def test_pullback_contravariant_and_module_compatible():
    rng = np.random.default_rng(1)
    for _ in range(5):
        F, G = random_affine(QR, rng), random_affine(QR, rng)
        s, g = random_field(QR, rng), random_field(QR, rng)
        X = pts(QR)
        lhs = eval_field(pullback_section(compose_factors(F, G), s), X)
        rhs = eval_field(pullback_section(G, pullback_section(F, s)), X)
        assert np.max(np.abs(lhs - rhs)) < 1e-12 * max(1, np.max(np.abs(lhs)))
        lhs = eval_field(pullback_section(F, g * s), X)
        rhs = eval_field(compose(g, F.b) * pullback_section(F, s), X)
        assert np.max(np.abs(lhs - rhs)) < 1e-12 * max(1, np.max(np.abs(lhs)))


def test_factor_validation():
    with pytest.raises(VanishingDenominator):
        Factor(["q"], "q", Q, Q)
    with pytest.raises(ChartMismatch):
        Factor(["q", "q"], 1.0, Q, Q)
    with pytest.raises(NoInverseDeclared):
        Factor(["q"], 1.0, Q, Q).inverse_factor()


def test_apply_derivation_examples():
    s = parse_field("sin(q) + q^3", Q)
    X = pts(Q)
    unit = Derivation.parse(Q, ["0"], "1")
    assert np.allclose(eval_field(apply_derivation(unit, s), X), eval_field(s, X))
    dq = Derivation.parse(Q, ["1"], "0")
    assert np.allclose(eval_field(apply_derivation(dq, parse_field("q^2", Q)), X), 2 * X[:, 0])


def test_leibniz():
    rng = np.random.default_rng(2)
    X = pts(QR)
    for _ in range(5):
        D, g, s = random_derivation(QR, rng), random_field(QR, rng), random_field(QR, rng)
        # D[g s] = X[g] s + g D[s]
        lhs = eval_field(apply_derivation(D, g * s), X)
        rhs = eval_field(D.X.apply(g) * s + g * apply_derivation(D, s), X)
        assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_der_bracket_examples_and_commutator():
    rng = np.random.default_rng(3)
    D = random_derivation(QR, rng)
    X = pts(QR)
    DD = der_bracket(D, D)
    assert not DD.X.at(X).any() and not np.any(eval_field(DD.f, X))
    b = der_bracket(Derivation.parse(Q, ["1"], "0"), Derivation.parse(Q, ["0"], "q"))
    assert np.allclose(b.X.at(pts(Q)), 0.0) and np.allclose(eval_field(b.f, pts(Q)), 1.0)
    for _ in range(5):
        D1, D2 = random_derivation(QR, rng), random_derivation(QR, rng)
        for _ in range(5):
            s = random_field(QR, rng)
            lhs = eval_field(apply_derivation(der_bracket(D1, D2), s), X)
            rhs = eval_field(
                apply_derivation(D1, apply_derivation(D2, s)) - apply_derivation(D2, apply_derivation(D1, s)), X
            )
            assert np.max(np.abs(lhs - rhs)) < 1e-9 * max(1, np.max(np.abs(lhs)))


def test_der_map_examples():
    F = Factor(["2*q + r", "r^3 + q"], 3.0, QR, QR)
    out = der_map(F, [0.5, 0.2], ([1.0, -1.0], 0.7))
    assert out.a == pytest.approx(0.7)
    assert np.allclose(out.v, F.jacobian([0.5, 0.2]) @ [1.0, -1.0])
    G = Factor(["q + r"], "exp(q)", QR, Q)
    z = der_map(G, [0.1, 0.4], ([0.0, 0.0], -2.0))
    assert not z.v.any() and z.a == -2.0
    with pytest.raises(BasePointMismatch):
        der_map(G, [0.1, 0.4], DerValue((0.0, 0.0), np.zeros(2), 1.0))


def test_der_functoriality():
    rng = np.random.default_rng(4)
    X = pts(QR)
    ident = Factor.identity(QR)
    for _ in range(20):
        F, G = random_affine(QR, rng), random_affine(QR, rng)
        FG = compose_factors(F, G)
        x = X[rng.integers(len(X))]
        d = (rng.normal(size=2), float(rng.normal()))
        lhs = der_map(FG, x, d)
        mid = der_map(G, x, d)
        rhs = der_map(F, mid.point, mid)
        assert np.max(np.abs(lhs.v - rhs.v)) < 1e-10 and abs(lhs.a - rhs.a) < 1e-10
        same = der_map(ident, x, d)
        assert np.array_equal(same.v, d[0]) and same.a == d[1]


def test_der_pushforward():
    rng = np.random.default_rng(5)
    X = pts(QR)
    D = random_derivation(QR, rng)
    ident = Factor.identity(QR)
    pushed = der_pushforward(ident, D)
    assert np.allclose(pushed.X.at(X), D.X.at(X)) and np.allclose(eval_field(pushed.f, X), eval_field(D.f, X))
    const = Factor(["q", "r"], 2.5, QR, QR, inverse=["q", "r"])
    assert np.allclose(eval_field(der_pushforward(const, D).f, X), eval_field(D.f, X))
    for _ in range(5):
        F = random_affine(QR, rng)
        D, s = random_derivation(QR, rng), random_field(QR, rng)
        # F_* a [s] = (F^-1)^* a [F^* s]
        lhs = apply_derivation(der_pushforward(F, D), s)
        rhs = pullback_section(F.inverse_factor(), apply_derivation(D, pullback_section(F, s)))
        Y = F.map_points(X)
        assert np.max(np.abs(eval_field(lhs, Y) - eval_field(rhs, Y))) < 1e-9


def test_jets():
    j = jet_prolong(parse_field("7.0", QR), [0.3, 0.1])
    assert not j.p.any() and j.u == 7.0
    j = jet_prolong(parse_field("q", Q), [5.0])
    assert j.p.tolist() == [1.0] and j.u == 5.0
    assert jet_pairing(JetValue((0.0,), np.zeros(1), 0.0), ([3.0], 2.0)) == 0.0
    assert jet_pairing(JetValue((0.0,), np.array([4.0]), 1.5), ([0.0], 1.0)) == 1.5
    with pytest.raises(BasePointMismatch):
        jet_pairing(j, DerValue((4.0,), np.ones(1), 0.0))


def test_jet_der_duality():
    rng = np.random.default_rng(6)
    X = pts(QR)
    for _ in range(20):
        D, s = random_derivation(QR, rng), random_field(QR, rng)
        x = X[rng.integers(len(X))]
        lhs = jet_pairing(jet_prolong(s, x), D.at(x))
        assert abs(lhs - eval_field(apply_derivation(D, s), x)) < 1e-10


# -- products

def test_base_product_shapes():
    P = base_product(ChartDomain(("q1",)), ChartDomain(("q2",)))
    assert P.coord_names == ("q1", "q2", "b") and P.n == 3
    P = base_product(ChartDomain(("a", "c")), ChartDomain(("x", "y", "w")))
    assert P.n == 6
    with pytest.raises(CoordinateNameClash):
        base_product(Q, Q)
    P = base_product(Q, Q, on_clash="suffix")
    assert P.coord_names == ("q1", "q2", "b")
    N = base_product(ChartDomain(("q1",)), ChartDomain(("q2",)), branch=-1)
    assert N.bounds[-1][1] == 0.0 and (N.sample(10)[:, -1] < 0).all()
    assert isinstance(TrivialLineBundle(Q).base, ChartDomain)


def test_ratio_function():
    A, B = ChartDomain(("q1",)), ChartDomain(("q2",))
    P = base_product(A, B)
    X = pts(P)
    r = ratio_function(parse_field("1", A), parse_field("1", B), P)
    assert np.array_equal(eval_field(r, X), X[:, -1])
    c1, c2 = parse_field("2 + cos(q1)", A), parse_field("exp(q2)", B)
    # (c1/c2) . (c2/c1) = 1 under the swap b -> 1/b
    Pswap = base_product(B, A)
    r12 = ratio_function(c1, c2, P)
    r21 = ratio_function(c2, c1, Pswap)
    Xs = np.column_stack([X[:, 1], X[:, 0], 1.0 / X[:, 2]])
    assert np.allclose(eval_field(r12, X) * eval_field(r21, Xs), 1.0, rtol=1e-13)
    with pytest.raises(VanishingDenominator):
        ratio_function(c1, parse_field("q2", B), P)


@pytest.mark.parametrize("n", [1, 2])
def test_ratio_differentials_span(n):
    A = ChartDomain(tuple(f"x{i}" for i in range(n)))
    B = ChartDomain(tuple(f"y{i}" for i in range(n)))
    P = base_product(A, B)
    monos = ["1"] + list(A.coord_names) + [f"{a}^2" for a in A.coord_names]
    dens = ["1"] + [f"exp({y})" for y in B.coord_names]
    fields = [ratio_function(parse_field(m, A), parse_field(d, B), P) for m in monos for d in dens]
    for x in pts(P, 10):
        M = np.array([grad(f, x).components for f in fields])
        assert np.linalg.matrix_rank(M, tol=1e-9) == 2 * n + 1


def test_projections():
    A, B = ChartDomain(("q1",)), ChartDomain(("q2",))
    P = base_product(A, B)
    P1, P2 = product_projections(P)
    X = pts(P)
    s = parse_field("1 + q2^2", B)
    assert np.allclose(eval_field(pullback_section(P2, s), X), (1 + X[:, 1] ** 2) / X[:, 2])
    assert np.allclose(eval_field(pullback_section(P1, parse_field("q1", A)), X), X[:, 0])
