from dataclasses import replace

import numpy as np
import pytest

from dimmech import (
    ChartDomain,
    Factor,
    LichnerowiczPair,
    base_product,
    canonical_contact,
    check_jacobi_pair,
    compose_factors,
    der_pushforward,
    eval_field,
    jacobi_bracket,
    jacobi_map_check,
    jet_lift_diffeo,
    jet_lift_graph_check,
    jet_lift_graph_samples,
    lgraph_check,
    linear_section,
    parse_field,
    product_jacobi,
    product_projections,
    pullback_section,
    Derivation,
    VectorField,
)
from dimmech.errors import SampleOffGraph, UncertifiedInput
from dimmech.jacobi import bracket_field, random_field
from dimmech.relations import jet_lift_graph, lgraph_samples

BASE = ChartDomain(("q",))
JC, J = canonical_contact(BASE)
F = Factor(["2*q + 1"], "exp(0.3*q)", BASE, BASE, inverse=["(q - 1)/2"])
G = Factor(["0.5*q - 0.25"], "2 + cos(q)", BASE, BASE, inverse=["2*q + 0.5"])


def product_of(Ja, Jb):
    return product_jacobi(Ja, Jb, base_product(Ja.chart, Jb.chart, on_clash="suffix"))


def _max_abs(a):
    return float(np.max(np.abs(a)))


# -- product structure

def test_product_defining_relations():
    Jp = product_of(J, J)
    P = Jp.chart
    P1, P2 = product_projections(P)
    X = P.sample(100, seed=1)
    rng = np.random.default_rng(21)
    for _ in range(3):
        s, t = random_field(JC, rng), random_field(JC, rng)
        for Pk in (P1, P2):
            lhs = jacobi_bracket(Jp, pullback_section(Pk, s), pullback_section(Pk, t), X)
            rhs = eval_field(pullback_section(Pk, bracket_field(J, s, t)), X)
            assert _max_abs(lhs - rhs) < 1e-9
        cross = jacobi_bracket(Jp, pullback_section(P1, s), pullback_section(P2, t), X)
        assert _max_abs(cross) < 1e-9


def test_product_of_zero_structures():
    A, B = ChartDomain(("x",)), ChartDomain(("y",))
    za = replace(LichnerowiczPair.zero(A), certified=True)
    zb = replace(LichnerowiczPair.zero(B), certified=True)
    Jp = product_of(za, zb)
    P1, P2 = product_projections(Jp.chart)
    X = Jp.chart.sample(30)
    s, t = parse_field("x^2 + 1", A), parse_field("sin(y)", B)
    for a in (pullback_section(P1, s), pullback_section(P2, t)):
        for b in (pullback_section(P1, s), pullback_section(P2, t)):
            assert _max_abs(jacobi_bracket(Jp, a, b, X)) == 0.0


def test_product_certifies_and_projections_are_jacobi_maps():
    Jp = product_of(J, J)
    X = Jp.chart.sample(100, seed=5)
    assert check_jacobi_pair(Jp, X, 1e-8).passed
    Jp = replace(Jp, certified=True)
    P1, P2 = product_projections(Jp.chart)
    rng = np.random.default_rng(8)
    pairs = [(random_field(JC, rng), random_field(JC, rng)) for _ in range(3)]
    assert jacobi_map_check(P1, Jp, J, pairs, X, 1e-9).passed
    assert jacobi_map_check(P2, Jp, J, pairs, X, 1e-9).passed


def test_product_requires_certified_inputs():
    with pytest.raises(UncertifiedInput):
        product_jacobi(J, LichnerowiczPair.zero(JC))


# -- Jacobi maps

def test_identity_is_a_jacobi_map():
    rng = np.random.default_rng(3)
    pairs = [(random_field(JC, rng), random_field(JC, rng))]
    rep = jacobi_map_check(Factor.identity(JC), J, J, pairs, JC.sample(50), 1e-12)
    assert rep.passed and rep.residuals["morphism"] < 1e-13


def test_jet_lift_is_a_jacobi_map_and_perturbation_is_not():
    JF = jet_lift_diffeo(F)
    rng = np.random.default_rng(4)
    pairs = [(random_field(JC, rng), random_field(JC, rng)) for _ in range(3)]
    X = JC.sample(100, seed=2)
    assert jacobi_map_check(JF, J, J, pairs, X, 1e-8).passed
    bad = JF.perturbed(parse_field("1 + 0.1*q", JC))
    rep = jacobi_map_check(bad, J, J, pairs, X, 1e-8)
    assert not rep.passed and rep.residuals["morphism"] > 1e-3


# -- jet lifts

def test_jet_lift_identity():
    X = JC.sample(30)
    JI = jet_lift_diffeo(Factor.identity(BASE))
    assert np.allclose(JI.map_points(X), X, rtol=0, atol=1e-15)
    assert np.allclose(eval_field(JI.beta, X), 1.0)


def test_jet_lift_constant_scale():
    c = 2.5
    Fc = Factor(["q"], c, BASE, BASE, inverse=["q"])
    JFc = jet_lift_diffeo(Fc)
    X = JC.sample(30)
    Y = JFc.map_points(X)
    assert np.allclose(Y[:, 0], X[:, 0]) and np.allclose(Y[:, 2], X[:, 2] / c)
    # the transformation rules force p -> p/c together with fibre scale 1/c
    assert np.allclose(Y[:, 1], X[:, 1] / c)
    _check_rules(Fc)
    # keeping p fixed breaks the linear-section rule
    JFc = jet_lift_diffeo(Fc)
    literal = Factor(["q", "p", f"z/{c}"], JFc.beta, JC, JC)
    a = Derivation.parse(BASE, ["1"], "0")
    lhs = pullback_section(literal, linear_section(JC, a))
    rhs = linear_section(JC, der_pushforward(Fc, a))
    assert _max_abs(eval_field(lhs, X) - eval_field(rhs, X)) > 0.1


def _check_rules(B, n_cases=3, tol=1e-9):
    JB = jet_lift_diffeo(B)
    jc = JB.source
    X = jc.base.sample(60, seed=9)
    rng = np.random.default_rng(17)
    for _ in range(n_cases):
        a = Derivation(VectorField(BASE, [random_field(BASE, rng)]), random_field(BASE, rng))
        u = random_field(BASE, rng)
        lhs = pullback_section(JB, linear_section(JC, a))
        rhs = linear_section(JC, der_pushforward(B, a))
        assert _max_abs(eval_field(lhs, X) - eval_field(rhs, X)) < tol
        lhs = pullback_section(JB, JC.pull(u))
        rhs = JC.pull(pullback_section(B.inverse_factor(), u))
        assert _max_abs(eval_field(lhs, X) - eval_field(rhs, X)) < tol


@pytest.mark.parametrize("B", [F, G], ids=["exp-scale", "cos-scale"])
def test_jet_lift_transformation_rules(B):
    _check_rules(B)


def test_composed_lifts():
    X = JC.sample(50, seed=6)
    lhs = jet_lift_diffeo(compose_factors(G, F))
    rhs = compose_factors(jet_lift_diffeo(F), jet_lift_diffeo(G))
    assert _max_abs(lhs.map_points(X) - rhs.map_points(X)) < 1e-10
    assert _max_abs(eval_field(lhs.beta, X) - eval_field(rhs.beta, X)) < 1e-10


# -- graphs

def _jet_product():
    return product_of(J, J.opposite())


def test_jet_lift_graph_identity_and_affine():
    Jp = _jet_product()
    ident = Factor.identity(BASE)
    X = jet_lift_graph_samples(ident, Jp, 50, seed=1)
    assert jet_lift_graph_check(ident, Jp, X, 1e-8).passed
    X = jet_lift_graph_samples(F, Jp, 100, seed=2)
    rep = jet_lift_graph_check(F, Jp, X, 1e-8)
    assert rep.passed, rep.to_text()


def test_jet_lift_graph_off_graph_samples_rejected():
    Jp = _jet_product()
    X = jet_lift_graph_samples(F, Jp, 20, seed=3)
    X[:, 0] += 1e-2
    with pytest.raises(SampleOffGraph):
        jet_lift_graph_check(F, Jp, X, 1e-8)


def test_perturbed_graph_is_not_coisotropic():
    Jp = _jet_product()
    good = jet_lift_graph(F, Jp)
    X = lgraph_samples(good, Jp.chart, 100, seed=4)
    assert lgraph_check(good, Jp, X, 1e-8).passed
    bad = good.perturbed(parse_field("1 + 0.1*q", good.source.base))
    Xb = lgraph_samples(bad, Jp.chart, 100, seed=4)
    assert not lgraph_check(bad, Jp, Xb, 1e-8).passed
