import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ymhlab.algebra import (AlgebraError, Representation, StructureData, adjoint_representation,
                            batched_group_exp, dexp, expm, group_exp, su2)

vec3 = arrays(np.float64, 3, elements=st.floats(-3, 3, allow_nan=False))

E = np.eye(3)


def test_invariants_of_shipped_su2(s, rep):
    assert max(s.invariant_residuals().values()) <= 1e-12
    assert max(rep.invariant_residuals().values()) <= 1e-12


def test_bracket_basis(s):
    np.testing.assert_array_equal(s.bracket(E[0], E[1]), E[2])
    np.testing.assert_array_equal(s.bracket(E[0], E[0] + E[1]), E[2])


def test_killing_metric_by_hand(s):
    # ad matrices of eps_abk traced by hand: -tr(ad_a ad_b) = 2 delta_ab
    np.testing.assert_array_equal(s.killing_metric, 2 * np.eye(3))
    assert s.inner(np.zeros(3), E[1]) == 0.0


def test_rho_act_trivial_cases(s, rep, rng):
    v = rng.normal(size=3)
    np.testing.assert_array_equal(rep.act(np.zeros(3), v), 0.0)
    x = rng.normal(size=3)
    np.testing.assert_allclose(rep.act(x, v), s.bracket(x, v), atol=1e-15)


def test_odot_adjoint_is_bracket(s, rep, rng):
    for _ in range(20):
        u1, u2 = rng.normal(size=(2, 3))
        np.testing.assert_allclose(rep.odot(u1, u2), s.bracket(u1, u2), atol=1e-14)
        assert np.abs(rep.odot(u1, u1)).max() <= 1e-14


def test_odot_defining_property_100_triples(s, rep, rng):
    x, u1, u2 = rng.normal(size=(3, 3, 100))
    lhs = s.inner(x, rep.odot(u1, u2))
    rhs = rep.inner(rep.act(x, u1), u2)
    assert np.abs(lhs - rhs).max() <= 1e-12


def test_ad_invariance_100_triples(s, rng):
    x, y, z = rng.normal(size=(3, 3, 100))
    assert np.abs(s.inner(s.bracket(x, y), z) - s.inner(x, s.bracket(y, z))).max() <= 1e-12


@settings(max_examples=60, deadline=None)
@given(vec3, vec3, vec3)
def test_jacobi_and_antisymmetry(x, y, z):
    s = su2()
    jac = s.bracket(x, s.bracket(y, z)) + s.bracket(y, s.bracket(z, x)) + s.bracket(z, s.bracket(x, y))
    assert np.abs(jac).max() <= 1e-12 * max(1.0, np.abs(np.stack([x, y, z])).max() ** 3)
    np.testing.assert_allclose(s.bracket(x, y), -s.bracket(y, x), atol=1e-14)
    assert np.abs(s.bracket(x, x)).max() == 0.0


@settings(max_examples=60, deadline=None)
@given(vec3, vec3)
def test_generators_skew(x, v):
    rep = adjoint_representation(su2())
    assert abs(float(rep.inner(rep.act(x, v), v))) <= 1e-12 * max(1.0, float(np.abs(v).max()) ** 2 * 9)


@settings(max_examples=40, deadline=None)
@given(vec3)
def test_group_exp_orthogonal_and_inverse(x):
    s = su2()
    rep = adjoint_representation(s)
    g = group_exp(x, rep)
    K = s.killing_metric
    assert np.abs(g.ad_matrix.T @ K @ g.ad_matrix - K).max() <= 1e-10
    gi = group_exp(-x, rep)
    assert np.abs((g @ gi).matrix - np.eye(3)).max() <= 1e-12
    assert np.abs((g @ gi).ad_matrix - np.eye(3)).max() <= 1e-12


def test_group_exp_zero_is_identity(rep):
    g = group_exp(np.zeros(3), rep)
    np.testing.assert_array_equal(g.matrix, np.eye(3))
    np.testing.assert_array_equal(g.ad_matrix, np.eye(3))


def test_expm_rotation_closed_form():
    # exp of theta * generator about e3 is a plane rotation
    theta = 2.7
    M = np.array([[0.0, -theta, 0.0], [theta, 0.0, 0.0], [0.0, 0.0, 0.0]])
    R = np.array([[np.cos(theta), -np.sin(theta), 0], [np.sin(theta), np.cos(theta), 0], [0, 0, 1]])
    np.testing.assert_allclose(expm(M), R, atol=1e-13)


def test_batched_exp_matches_single(rep, rng):
    xi = rng.normal(size=(3, 4, 5))
    rho, Ad = batched_group_exp(xi, rep)
    g = group_exp(xi[:, 2, 3], rep)
    np.testing.assert_allclose(rho[2, 3], g.matrix, atol=1e-14)
    np.testing.assert_allclose(Ad[2, 3], g.ad_matrix, atol=1e-14)


def test_dexp_right_matches_finite_difference(s, rep, rng):
    x, d = rng.normal(size=(2, 3))
    eps = 1e-6
    gp = group_exp(x + eps * d, rep).matrix
    gm = group_exp(x - eps * d, rep).matrix
    g = group_exp(x, rep).matrix
    deriv = (gp - gm) / (2 * eps) @ np.linalg.inv(g)
    z = dexp(s, x, d, side="right")
    np.testing.assert_allclose(deriv, rep.matrix(z), atol=1e-8)


def test_structure_table_round_trip(s):
    s2 = StructureData.from_table(s.to_table())
    np.testing.assert_array_equal(s2.structure_constants, s.structure_constants)


def test_corrupted_structure_constants_rejected(s):
    c = np.array(s.structure_constants)
    c[0, 1, 2] = 2.0  # breaks antisymmetry
    with pytest.raises(AlgebraError):
        StructureData(c)
    with pytest.raises(AlgebraError):
        StructureData.from_table("1 2 3 1.0\n")


def test_indefinite_killing_rejected():
    # sl(2,R): [h,e]=2e, [h,f]=-2f, [e,f]=h is not compact
    c = np.zeros((3, 3, 3))
    for a, b, k, v in ((0, 1, 1, 2.0), (0, 2, 2, -2.0), (1, 2, 0, 1.0)):
        c[a, b, k] = v
        c[b, a, k] = -v
    with pytest.raises(AlgebraError):
        StructureData(c)


def test_bad_representation_rejected(s):
    with pytest.raises(AlgebraError):
        Representation(s, 2 * s.ad_matrices, s.killing_metric)  # commutation fails


def test_dimension_mismatch(s, rep):
    with pytest.raises(AlgebraError):
        s.bracket(np.zeros(2), np.zeros(3))
    with pytest.raises(AlgebraError):
        rep.act(np.zeros(3), np.zeros(4))
