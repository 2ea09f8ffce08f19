import math
import random
from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grassnorm import gaussian as gs
from grassnorm import norms as nm
from grassnorm.algebra import FieldIndex, NElement, complex_field, primed
from grassnorm.lattice import Torus
from grassnorm.verify import InstanceSpec, random_element, random_test_function, susy_layout

T = Torus(1, 2, 1)
L = susy_layout(0, T)
phi = [FieldIndex("phi", 0, x) for x in range(2)]
phibar = [FieldIndex("phi", 1, x) for x in range(2)]
psi = [FieldIndex("psi", 0, x) for x in range(2)]
psibar = [FieldIndex("psi", 1, x) for x in range(2)]


def mono(*seq, c=1, layout=L):
    return NElement.monomial(layout, seq, c)


def W(h, p_phi=0, R=2):
    return nm.Weight({"phi": h, "psi": h}, p_phi, R)


def tau(x):
    return mono(phi[x], phibar[x]) + mono(psi[x], psibar[x])


# parameters


def test_parameter_validation():
    with pytest.raises(ValueError):
        nm.Weight({"phi": 0.0})
    with pytest.raises(ValueError):
        nm.NormParams(4, W(1.0, 1), "exact")
    with pytest.raises(ValueError):
        nm.NormParams(4, W(1.0), "grid")
    with pytest.raises(ValueError):
        nm.TestFunction(L, {(psi[0], phi[0]): 1})  # not species ordered


# Phi norm


def test_phi_norm_of_zero():
    assert nm.phi_norm(nm.TestFunction(L), W(1.0))[0] == 0


def test_phi_norm_of_constant_is_derivative_free():
    h = 1.7
    g = nm.TestFunction(L, {(u,): h for u in L.boson_indices})
    for p in (0, 1, 2):
        assert nm.phi_norm(g, W(h, p))[0] == pytest.approx(1.0, rel=1e-15)


def test_phi_norm_counts_derivatives():
    g = nm.TestFunction(L, {(phi[0],): 1.0})  # a delta: nabla has size 1 with weight R/h
    assert nm.phi_norm(g, W(1.0, 1, R=3))[0] == pytest.approx(3.0)
    with pytest.raises(ValueError):
        nm.phi_norm(nm.TestFunction(susy_layout(2), {(phi[0],): 1.0}), W(1.0, 1))


def test_per_length_norms():
    g = nm.TestFunction(L, {(): 2.0, (phi[0],): 3.0, (phi[0], phi[1]): 5.0})
    total, per = nm.phi_norm(g, W(1.0))
    assert per == {0: 2.0, 1: 3.0, 2: 5.0} and total == 5.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_phi_norm_of_a_product_test_function(seed):
    rng = random.Random(seed)
    g1 = random_test_function(rng, L, 4, 2)
    g2 = random_test_function(rng, L, 4, 2)
    vals = {L.concat(z1, z2): a * b for z1, a in g1.items() for z2, b in g2.items()}
    w = W(rng.uniform(0.5, 2.0))
    bound = nm.phi_norm(g1, w)[0] * nm.phi_norm(g2, w)[0]
    assert nm.phi_norm(nm.TestFunction(L, vals), w)[0] <= bound * (1 + 1e-12)


# pairing and symmetrisation


def test_pairing_with_empty_sequence_only():
    F = mono(phi[0], phibar[1], c=3) + NElement.constant(L, 2)
    g = nm.TestFunction(L, {(): 5})
    fld = complex_field(L, "phi", [1, 2j])
    assert nm.pairing(F, g, fld) == F.coefficient([], fld) * 5


def test_pairing_symmetrises():
    F = mono(phi[0], phi[1])
    g = nm.TestFunction(L, {(phi[0], phi[1]): 1})
    # F_z = 1 at (0,1) and (1,0); z! = 2 and g sits on one ordering only
    assert nm.pairing(F, g) == Fr(1, 2)
    assert nm.pairing(F, nm.symmetrise(g)) == Fr(1, 2)


def test_symmetrise_examples():
    g = nm.TestFunction(L, {(phi[0], phi[1]): 1, (phi[1], phi[0]): 1})
    assert nm.symmetrise(g).values == g.values
    h = nm.symmetrise(nm.TestFunction(L, {(psi[0], psi[1]): 1}))
    assert h[(psi[0], psi[1])] == Fr(1, 2) and h[(psi[1], psi[0])] == Fr(-1, 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_symmetrise_idempotent_and_pairing_invariant(seed):
    rng = random.Random(seed)
    g = random_test_function(rng, L, 8, 3)
    F = random_element(rng, L, InstanceSpec(max_degree=3))
    Sg = nm.symmetrise(g)
    assert nm.symmetrise(Sg).values == Sg.values
    fld = {u: Fr(rng.randint(-2, 2)) for u in L.boson_indices}
    assert nm.pairing(F, g, fld) == nm.pairing(F, Sg, fld)


# T_phi semi-norm


@pytest.mark.parametrize("mode,p_phi", [("exact", 0), ("lp", 0), ("lp", 1), ("lp", 2)])
def test_tau_norm_real_field(mode, p_phi):
    h = 0.8
    fld = complex_field(L, "phi", [1.3, -0.4])
    got = nm.tnorm(tau(0), fld, nm.NormParams(4, W(h, p_phi), mode))
    assert got == pytest.approx((1.3 + h) ** 2 + h ** 2, rel=1e-12)


def test_tau_norm_complex_field_is_bracketed():
    h = 0.8
    fld = complex_field(L, "phi", [1 + 1j, 0.5j])
    expect = (abs(1 + 1j) + h) ** 2 + h ** 2
    assert nm.tnorm(tau(0), fld, nm.NormParams(4, W(h), "exact")) == pytest.approx(expect)
    res = nm.tphi_norm(tau(0), fld, nm.NormParams(4, W(h, 1), "complex", K=32))
    assert res.value <= expect * (1 + 1e-12) <= res.upper * (1 + 1e-12)
    assert res.value >= res.factor * res.upper * (1 - 1e-12)


def test_norm_of_a_field_and_a_fermion_pair():
    h = 1.5
    fld = complex_field(L, "phi", [0.25 - 1j, 0])
    P = nm.NormParams(4, W(h), "exact")
    assert nm.tnorm(NElement.generator(L, phi[0]), fld, P) == pytest.approx(abs(0.25 - 1j) + h)
    assert nm.tnorm(mono(psi[0], psibar[0]), fld, P) == pytest.approx(h * h)


@pytest.mark.parametrize("mode", ["exact", "lp", "complex"])
def test_constant_norm(mode):
    c = 3 - 4j if mode != "lp" else -5.0
    res = nm.tphi_norm(NElement.constant(L, c), None, nm.NormParams(4, W(1.0), mode))
    assert res.value == pytest.approx(5.0)


def test_lp_mode_rejects_complex_data():
    fld = complex_field(L, "phi", [1j, 0])
    with pytest.raises(ValueError):
        nm.tnorm(NElement.generator(L, phi[0]), fld, nm.NormParams(4, W(1.0), "lp"))


def test_truncated_element_needs_enough_degree():
    E = NElement(L, {((), ()): 1}, truncation=2)
    with pytest.raises(ValueError):
        nm.tnorm(E, None, nm.NormParams(4, W(1.0)))


@pytest.mark.parametrize("mode,p_phi", [("exact", 0), ("lp", 1), ("complex", 1)])
def test_certificates_verify(mode, p_phi):
    F = tau(0) + mono(phi[0], phi[1], c=Fr(1, 2)) - mono(psi[1], psibar[0])
    fld = complex_field(L, "phi", [0.5, -1.0] if mode != "complex" else [0.5j, 1 - 1j])
    P = nm.NormParams(4, W(1.2, p_phi), mode)
    res = nm.tphi_norm(F, fld, P, certificate=True)
    assert nm.verify_certificate(F, fld, res, P, rtol=1e-9)


# adjoint maps


def test_theta_star_on_unprimed_support_is_identity():
    D = L.doubled()
    g = nm.TestFunction(D, {(phi[0], phibar[1]): 2, (psi[0],): -1})
    out = nm.theta_star(g, L)
    assert out.values == {(phi[0], phibar[1]): 2, (psi[0],): -1}


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_theta_adjoint_identity(seed):
    rng = random.Random(seed)
    F = random_element(rng, L, InstanceSpec(max_degree=3))
    D = L.doubled()
    g = random_test_function(rng, D, 10, 3)
    a = {u: Fr(rng.randint(-2, 2)) for u in L.boson_indices}
    b = {u: Fr(rng.randint(-2, 2)) for u in L.boson_indices}
    joint = dict(a)
    joint.update({FieldIndex(primed(u.species), u.comp, u.site): v for u, v in b.items()})
    summed = {u: a[u] + b[u] for u in a}
    assert nm.pairing(gs.theta(F), g, joint) == nm.pairing(F, nm.theta_star(g, L), summed)


def test_sigma_star_at_zero_is_truncation():
    g = nm.TestFunction(L, {(): 1, (phi[0],): 2, (phi[0], phi[1], phi[1]): 3}, p_N=2)
    xi = {phi[0]: 1.0}
    out = nm.sigma_star(g, xi, s=0, m=0)
    assert out.values == {(): 1, (phi[0],): 2}


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_sigma_star_pairing_identity(seed):
    rng = random.Random(seed)
    F = random_element(rng, L, InstanceSpec(max_degree=3))
    g = random_test_function(rng, L, 8, 2, p_N=6)
    xi = {u: Fr(rng.randint(-2, 2)) for u in L.boson_indices}
    base = {u: Fr(rng.randint(-2, 2)) for u in L.boson_indices}
    s = Fr(rng.randint(-3, 3), 2)
    moved = {u: base[u] + s * xi[u] for u in base}
    assert nm.pairing(F, g, moved) == nm.pairing(F, nm.sigma_star(g, xi, s, max_length=6), base)


def test_covariance_star_is_adjoint_to_half_laplacian():
    C = gs.CovariancePair.supersymmetric(((Fr(2), Fr(1, 2)), (Fr(1, 2), Fr(1))))
    F = mono(phi[0], phibar[1], psi[0], psibar[1]) + mono(phi[1], phibar[1], phi[0], phibar[0])
    rng = random.Random(3)
    g = random_test_function(rng, L, 12, 2)
    lhs = nm.pairing(gs.laplacian(F, C).scale(Fr(1, 2)), g)
    rhs = nm.pairing(F, nm.covariance_star(g, C.entries(L), 4))
    assert lhs == rhs


# localized norms and the comparison ratio


def test_localized_norm_on_whole_torus_is_the_phi_norm():
    T4 = Torus(1, 2, 2)
    vals = np.array([0.5, -1.0, 2.0, 0.25])
    L4 = susy_layout(0, T4)
    w = nm.Weight({"phi": 1.3}, 1, T4.R)
    expect = nm.phi_norm(nm.TestFunction(L4, {(phi_i,): v for phi_i, v in zip(
        [FieldIndex("phi", 0, x) for x in range(4)], vals)}), w)[0]
    lo, hi = nm.localized_phi_norm(vals, range(4), 1.3, 1, T4)
    assert lo == hi == pytest.approx(expect, rel=1e-9)


def test_localized_norm_of_field_outside_set_vanishes():
    T4 = Torus(1, 2, 2)
    vals = np.array([0, 0, 2.0, -1.0])
    for p in (0, 1):
        lo, hi = nm.localized_phi_norm(vals, {0, 1}, 1.0, p, T4)
        assert hi == pytest.approx(0.0, abs=1e-12)


def test_polynomial_quotient_removes_linear_fields():
    T8 = Torus(1, 2, 4)
    vals = 0.7 * np.arange(8) - 1.0
    lo, hi = nm.localized_phi_norm(vals, range(6), 1.0, 1, T8, poly_degree=1)
    assert hi == pytest.approx(0.0, abs=1e-9)
    assert nm.localized_phi_norm(vals, range(6), 1.0, 1, T8)[1] > 0.1


def test_polynomial_quotient_rejects_wraparound():
    with pytest.raises(ValueError):
        nm.localized_phi_norm(np.zeros(4), range(4), 1.0, 0, Torus(1, 2, 2), poly_degree=0)


def test_rho_examples():
    w = nm.Weight({"phi": 1.0}, 0, 2)
    assert nm.rho_ratio(w, w, 1, 4) == 2.0
    half = nm.Weight({"phi": 0.5}, 0, 2)
    assert nm.rho_ratio(half, w, 2, 4) == pytest.approx(0.5)


def test_weight_sum_and_union():
    a, b = W(1.0), W(2.0)
    assert (a + b).scale("phi") == 3.0
    u = a.disjoint_union(b)
    assert u.scale("phi") == 1.0 and u.scale("phi'") == 2.0
    with pytest.raises(ValueError):
        a + W(1.0, 1)


def test_exact_norm_is_the_weighted_coefficient_sum():
    F = mono(phi[0], phi[0], c=3) + mono(psi[0], psibar[1], c=-2)
    h = 0.5
    got = nm.tnorm(F, None, nm.NormParams(4, W(h)))
    # F_{(0,0)} = 6, divided by 2!; fermion pair weighted by h^2
    assert got == pytest.approx(3 * h * h + 2 * h * h)


def test_norm_is_at_least_the_constant_term():
    F = mono(phi[0], phibar[0]) + NElement.constant(L, -2)
    fld = complex_field(L, "phi", [0.5 + 0.5j, 0])
    assert nm.tnorm(F, fld, nm.NormParams(4, W(0.1))) >= abs(0.5 - 2) - 1e-12
    assert math.isclose(nm.tnorm(F, fld, nm.NormParams(4, W(1e-9))), 1.5, rel_tol=1e-6)
