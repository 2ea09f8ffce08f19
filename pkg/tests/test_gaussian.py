import random
from fractions import Fraction as Fr

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grassnorm import gaussian as gs
from grassnorm.algebra import FieldIndex, Layout, NElement, fermion, primed, real_boson
from grassnorm.verify import InstanceSpec, oracle_isserlis, random_element, random_spd, susy_layout

L = susy_layout(2)
phi = [FieldIndex("phi", 0, x) for x in range(2)]
phibar = [FieldIndex("phi", 1, x) for x in range(2)]
psi = [FieldIndex("psi", 0, x) for x in range(2)]
psibar = [FieldIndex("psi", 1, x) for x in range(2)]
C = ((Fr(2), Fr(1, 2)), (Fr(1, 2), Fr(1)))
SUSY = gs.CovariancePair.supersymmetric(C)


def mono(*seq, c=1, layout=L):
    return NElement.monomial(layout, seq, c)


def E(F, cov=SUSY, method="determinant"):
    return gs.combined_expectation(F, cov, method)


# construction


def test_covariance_validation():
    with pytest.raises(gs.CovarianceError):
        gs.CovariancePair({"phi": [[1, 2], [2, 1]]}, {})  # indefinite
    with pytest.raises(gs.CovarianceError):
        gs.CovariancePair({}, {"psi": [[1, 1], [1, 1]]})  # singular
    with pytest.raises(gs.CovarianceError):
        gs.CovariancePair({"phi": [[1, 0.5], [0.2, 1]]}, {})  # not symmetric
    assert SUSY.is_supersymmetric()


def test_exp_decay_covariance_is_periodic():
    from grassnorm.lattice import Torus

    T = Torus(1, 2, 2)
    M = gs.exp_decay_covariance(T.volume, Fr(1, 2), T)
    assert M[0][3] == Fr(1, 2) and M[0][2] == Fr(1, 4)


# Grassmann integration


def test_grassmann_integral_examples():
    La = Layout((fermion("a"),), 1)
    u1, u2 = FieldIndex("a", 0, 0), FieldIndex("a", 1, 0)
    assert gs.grassmann_integral(NElement.constant(La, 3), [u1, u2]).is_zero()
    assert gs.grassmann_integral(mono(u1, u2, c=Fr(5), layout=La), [u1, u2]) == 5
    assert gs.grassmann_integral(mono(u1, u2, layout=La), [u2, u1]) == -1
    with pytest.raises(ValueError):
        gs.grassmann_integral(mono(u1, u2, layout=La), [u1])


# moments


def test_fermion_two_point():
    for k in range(2):
        for l in range(2):
            assert E(mono(psibar[k], psi[l])) == C[k][l]


def test_fermion_psi_psi_uses_the_assembled_block():
    block = SUSY.fermion_entries(L)
    for u in psi + psibar:
        for v in psi + psibar:
            assert E(mono(u, v)) == -block.get((u, v), 0)


def test_fermion_four_point_determinant():
    got = E(mono(psibar[0], psi[0], psibar[1], psi[1]))
    assert got == C[0][0] * C[1][1] - C[0][1] * C[1][0]
    assert got == gs.fermion_expectation(mono(psibar[0], psi[0], psibar[1], psi[1]), SUSY, "grassmann")


def test_boson_moments():
    for k in range(2):
        for l in range(2):
            assert E(mono(phibar[k], phi[l])) == C[k][l]
            assert E(mono(phi[k], phi[l])).is_zero()
            assert E(mono(phibar[k], phibar[l])).is_zero()
    assert E(mono(phi[0], phi[0], phibar[0], phibar[0])) == 2 * C[0][0] ** 2


def test_normalisation():
    assert E(NElement.constant(L, 1)) == 1
    assert E(NElement.constant(L, 1), method="grassmann") == 1


def test_supersymmetric_cancellation():
    assert E(mono(phibar[0], phi[1]) + mono(psibar[0], psi[1])) == 2 * C[0][1]
    tau = mono(phi[0], phibar[0]) + mono(psi[0], psibar[0])
    assert E(tau).is_zero()


def test_real_species_moments_match_the_matching_oracle():
    Lr = Layout((real_boson("x", 1),), 2)
    M = ((Fr(3), Fr(1)), (Fr(1), Fr(2)))
    cov = gs.CovariancePair({"x": M}, {})
    x = Lr.boson_indices
    for seq in ([x[0], x[1]], [x[0]] * 4, [x[0], x[0], x[1], x[1]]):
        assert gs.boson_expectation(mono(*seq, layout=Lr), cov) == oracle_isserlis(seq, M, real=True)


# Laplacian and heat semigroup


def test_laplacian_examples():
    half = Fr(1, 2)
    assert gs.laplacian(mono(phi[0], phibar[1]), SUSY).scale(half) == C[1][0]
    assert gs.laplacian(NElement.constant(L, 7), SUSY).is_zero()
    assert gs.laplacian(mono(psibar[0], psi[1]), SUSY).scale(half) == C[0][1]


def test_heat_semigroup_examples():
    P = mono(phi[0], phibar[1]) + mono(psibar[0], psi[0])
    assert gs.heat_semigroup(P, SUSY, 0) == P
    t = Fr(3)
    assert gs.heat_semigroup(P, SUSY, t) == P + gs.laplacian(P, SUSY).scale(t / 2)


def test_heat_semigroup_gives_real_two_point():
    Lr = Layout((real_boson("x", 1),), 2)
    M = ((Fr(3), Fr(1)), (Fr(1), Fr(2)))
    cov = gs.CovariancePair({"x": M}, {})
    x = Lr.boson_indices
    out = gs.heat_semigroup(mono(x[0], x[1], layout=Lr), cov).set_zero(["x"])
    assert out == M[0][1]


# theta


def test_theta_examples():
    D = L.doubled()
    got = gs.theta(NElement.generator(L, psi[1]))
    assert got == NElement.generator(D, psi[1]) + NElement.generator(D, FieldIndex(primed("psi"), 0, 1))
    F = mono(phi[0], psibar[1], psi[0], c=Fr(2))
    assert gs.theta(F, 0) == F.relayout(D)


def test_theta_external_sites_keep_primed_part_zero():
    got = gs.theta(NElement.generator(L, phi[1]), 1, external=[("phi", 1)])
    assert got == NElement.generator(L.doubled(), phi[1])


SPEC = InstanceSpec(max_degree=3, max_terms=3)
seeds = st.integers(0, 2 ** 32)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_theta_is_a_homomorphism(seed):
    rng = random.Random(seed)
    A, B = random_element(rng, L, SPEC), random_element(rng, L, SPEC)
    assert gs.theta(A * B) == gs.theta(A) * gs.theta(B)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_fermion_routes_agree(seed):
    rng = random.Random(seed)
    F = random_element(rng, L, SPEC)
    cov = gs.CovariancePair({"phi": random_spd(rng, 2)}, {"psi": random_spd(rng, 2)})
    assert gs.fermion_expectation(F, cov, "determinant") == gs.fermion_expectation(F, cov, "grassmann")


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_expectation_is_heat_semigroup_at_zero(seed):
    rng = random.Random(seed)
    F = random_element(rng, L, InstanceSpec(max_degree=4, max_terms=3))
    lhs = gs.expect_theta(F, SUSY)
    rhs = gs.heat_semigroup(F, SUSY)
    assert lhs == rhs


# convolution and factorisation


C1 = gs.CovariancePair.supersymmetric(((Fr(1), Fr(1, 3)), (Fr(1, 3), Fr(1))))
C2 = gs.CovariancePair.supersymmetric(((Fr(2), Fr(0)), (Fr(0), Fr(1, 2))))


@pytest.mark.parametrize("F", [
    NElement.constant(L, 1),
    mono(phi[0], phibar[1]),
    mono(psibar[0], psi[1]),
    mono(phi[0], phibar[0], psibar[1], psi[0]) + mono(phi[1], phi[1], phibar[0], phibar[0]),
])
def test_convolution_is_exact(F):
    equal, res = gs.convolution_check(F, C1, C2)
    assert equal and res == 0


def test_convolution_two_point_value():
    F = mono(phi[0], phibar[1])
    assert gs.expect_theta(F, C1 + C2) == F + (C1 + C2).boson["phi"][1][0]


def test_factorisation_examples():
    cov = gs.CovariancePair.supersymmetric(((Fr(2), Fr(0)), (Fr(0), Fr(3))))
    one = NElement.constant(L, 1)
    assert gs.factorisation_check(one, one, cov, {0}, {1})
    assert gs.factorisation_check(mono(psibar[0], psi[0]), mono(psibar[1], psi[1]), cov, {0}, {1})
    assert gs.factorisation_check(mono(phibar[0], phi[0]), mono(phibar[1], phi[1]), cov, {0}, {1})
    assert E(mono(phibar[0], phi[0], phibar[1], phi[1]), cov) == 6


def test_factorisation_preconditions():
    with pytest.raises(ValueError):
        gs.factorisation_check(mono(phi[0]), mono(phi[1]), SUSY, {0}, {1})  # coupled
    cov = gs.CovariancePair.supersymmetric(((Fr(2), Fr(0)), (Fr(0), Fr(3))))
    with pytest.raises(ValueError):
        gs.factorisation_check(mono(phi[1]), mono(phi[1]), cov, {0}, {1})  # wrong support
