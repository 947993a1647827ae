import math

import numpy as np
import pytest
from scipy.integrate import quad
from hypothesis import given, settings
from hypothesis import strategies as st

from ymhlab import heatball as hb

X5 = np.zeros(5)

# |E_r| = pi^{n/2} (2(n-4))^{n/2} D^{n/2+1} / (n/2+1)^{n/2+1}, D = r^2/(4 pi): substitute
# a = D e^{-s} in int_0^D omega_n R(a)^n da to get a Gamma integral.  n = 5, r = 1:
VOLUME_N5_R1 = 1.7537875857883905e-04
C5 = 0.24197072451914337  # sqrt(1/(2 pi e))


def test_c_n_value():
    assert hb.c_n(5) == pytest.approx(C5, rel=1e-15)
    assert hb.c_n(5) == pytest.approx(0.24197, abs=1e-5)


def test_kernel_at_centre_and_domain():
    t, T = -0.7, 0.0
    assert hb.phi_kernel(X5, T, X5, t) == pytest.approx((4 * math.pi * 0.7) ** -0.5, rel=1e-15)
    with pytest.raises(hb.KernelDomainError):
        hb.phi_kernel(X5, T, X5, 0.0)
    with pytest.raises(hb.KernelDomainError):
        hb.Kernel(tuple(X5), 0.0, weighted=False)(X5, 0.5)


def test_phi_gamma_relation_10k_points():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(10_000, 5))
    t = -rng.uniform(0.01, 2.0, size=10_000)
    phi = hb.phi_kernel(X5, 0.0, x, t)
    gam = hb.gamma_kernel(X5, 0.0, x, t)
    assert np.max(np.abs(phi - (4 * math.pi * (-t)) ** 2 * gam) / phi) <= 1e-14


def test_level_set_on_boundary():
    for n, r in ((5, 1.0), (6, 0.6), (7, 2.0)):
        ball = hb.HeatBall(tuple(np.zeros(n)), 0.0, r)
        taus = -ball.depth * np.array([0.05, 0.3, 0.7, 0.95])
        R = ball.radius(taus)
        x = np.zeros((4, n))
        x[:, 0] = R
        np.testing.assert_allclose(hb.phi_kernel(np.zeros(n), 0.0, x, taus), r ** -(n - 4), rtol=1e-12)


def test_radius_profile():
    ball = hb.HeatBall(tuple(X5), 0.0, 1.3)
    d = ball.depth
    assert ball.radius(-d * (1 - 1e-12)) < 1e-5
    assert ball.radius(-1e-14) < 1e-5
    taus = -np.linspace(1e-9, d * (1 - 1e-9), 200001)
    k = np.argmax(ball.radius(taus))
    assert ball.radius(taus[k]) == pytest.approx(C5 * 1.3, abs=1e-6)
    assert taus[k] == pytest.approx(-1.3 ** 2 / (4 * math.pi * math.e), rel=1e-3)
    for bad in (0.0, -d, 0.1):
        with pytest.raises(ValueError):
            ball.radius(bad)
    with pytest.raises(ValueError):
        hb.HeatBall(tuple(X5), 0.0, 0.0)
    with pytest.raises(ValueError):
        hb.HeatBall((0.0,) * 4, 0.0, 1.0)


def test_contains():
    r = 1.0
    ball = hb.HeatBall(tuple(X5), 0.0, r)
    assert ball.contains(X5, -r * r / (8 * math.pi))
    assert not ball.contains(X5, 0.0)
    assert not ball.contains(X5, 0.3)
    x = np.zeros(5)
    x[2] = 1.001 * C5 * r
    ts = -np.linspace(1e-4, ball.depth * 0.999, 500)
    assert not np.any(ball.contains(np.broadcast_to(x, (500, 5)), ts))


def test_quadrature_spec_validation():
    for kw in ({"q": 1.0}, {"J_time": 10}, {"M_ball": 100}, {"radial_grading": 0.5}):
        with pytest.raises(ValueError):
            hb.QuadratureSpec(**kw)


def test_volume_two_routes():
    ball = hb.HeatBall(tuple(X5), 0.0, 1.0)
    q = hb.integrate(ball, lambda p, t: np.ones(p.shape[0]))
    assert q.value == pytest.approx(VOLUME_N5_R1, rel=1e-4)
    assert abs(q.value - VOLUME_N5_R1) <= q.error
    assert hb.spacetime_volume(ball) == pytest.approx(VOLUME_N5_R1, rel=1e-7)


def test_singular_weight_integrand():
    # (T-t)^-2 (n-4)/(2(T-t)) over E_1 gives (4 pi)^2
    ball = hb.HeatBall(tuple(X5), 0.0, 1.0)
    q = hb.integrate(ball, lambda p, t: np.full(p.shape[0], 0.5 * (-t) ** -3.0))
    assert q.value == pytest.approx((4 * math.pi) ** 2, rel=1e-3)


def test_odd_integrand_vanishes():
    ball = hb.HeatBall(tuple(X5), 0.0, 1.0)
    q = hb.integrate(ball, lambda p, t: p[:, 1] * (1 + p[:, 0] ** 2))
    assert abs(q.value) <= max(q.error, 1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 3))
def test_integrate_linear(a, b, seed):
    ball = hb.HeatBall(tuple(X5), 0.0, 1.0)
    spec = hb.QuadratureSpec(seed=seed)
    f = lambda p, t: np.exp(-((p - 0.05) ** 2).sum(axis=1))
    g = lambda p, t: (-t) ** -1.0 * np.cos(p[:, 0])
    both = hb.integrate(ball, lambda p, t: a * f(p, t) + b * g(p, t), spec, slices=80).value
    sep = a * hb.integrate(ball, f, spec, slices=80).value + b * hb.integrate(ball, g, spec, slices=80).value
    assert abs(both - sep) <= 1e-12 * max(1.0, abs(a), abs(b)) * (
        abs(hb.integrate(ball, f, spec, slices=80).value) + abs(hb.integrate(ball, g, spec, slices=80).value))


def test_vector_integrand_matches_components():
    ball = hb.HeatBall(tuple(X5), 0.0, 1.0)
    f = lambda p, t: np.stack([np.ones(p.shape[0]), p[:, 0] ** 2])
    q = hb.integrate(ball, f)
    assert q.value[0] == pytest.approx(hb.integrate(ball, lambda p, t: np.ones(p.shape[0])).value, rel=1e-14)


def _radial_reference(ball, a):
    # integrand exp(-a|y|^2)(1 + 2 y_0^2 - y_1 y_2): the y_1 y_2 part vanishes by symmetry and
    # y_0^2 averages to |y|^2/n, so each slice is a 1-d radial integral
    n = ball.n
    def slice_integral(R):
        g = lambda rho: rho ** (n - 1) * math.exp(-a * rho * rho) * (1 + 2 * rho * rho / n)
        return n * hb.unit_ball_volume(n) * quad(g, 0, R, epsabs=0, epsrel=1e-13)[0]
    return quad(lambda tau: slice_integral(float(ball.radius(-tau))), 0, ball.depth,
                epsabs=0, epsrel=1e-12, limit=400)[0]


@pytest.mark.parametrize("r", [1.0, 2.0])
def test_error_estimate_covers_observed_error(r):
    a = 4.0

    def f(p, t):
        g = np.exp(-a * (p ** 2).sum(axis=1))
        return g * (1 + 2 * p[:, 0] ** 2 - p[:, 1] * p[:, 2])

    ball = hb.HeatBall(tuple(X5), 0.0, r)
    ref = _radial_reference(ball, a)
    trials = 40
    hits = sum(abs((q := hb.integrate(ball, f, hb.QuadratureSpec(seed=seed))).value - ref) <= q.error
               for seed in range(trials))
    assert hits >= 0.95 * trials


def test_diagnostics_rows():
    ball = hb.HeatBall(tuple(X5), 0.0, 1.0)
    q = hb.integrate(ball, lambda p, t: np.ones(p.shape[0]), diagnostics=True)
    assert len(q.rows) == q.slices
    text = hb.diagnostics_csv(q)
    assert text.splitlines()[1].count(",") == 4


def test_gaussian_integral_closed_forms():
    for t in (-0.2, -1.0, -3.0):
        tau = -t
        one = hb.gaussian_weighted_integral(lambda p, s: np.ones(p.shape[0]), X5, 0.0, t)
        assert one == pytest.approx((4 * math.pi * tau) ** 2, rel=1e-9)
        sq = hb.gaussian_weighted_integral(lambda p, s: (p ** 2).sum(axis=1), X5, 0.0, t)
        assert sq == pytest.approx((4 * math.pi * tau) ** 2 * 2 * 5 * tau, rel=1e-9)


def test_scaling_identity():
    f = lambda p, s: np.full(p.shape[0], (-s) ** -2.0)
    lhs_vals = []
    for r in (0.5, 1.0, 2.0):
        lhs, rhs, err = hb.scaling_check(f, X5, 0.0, -0.3, r)
        lhs_vals.append(lhs)
        assert rhs == pytest.approx((4 * math.pi) ** 2, rel=1e-3)
    lhs2 = hb.gaussian_weighted_integral(f, X5, 0.0, -2.0)
    assert lhs2 == pytest.approx(lhs_vals[0], rel=1e-3)
    assert hb.scaling_check(lambda p, s: np.zeros(p.shape[0]), X5, 0.0, -0.3, 1.0)[:2] == (0.0, 0.0)


def test_scaling_rejects_non_homogeneous():
    with pytest.raises(hb.HomogeneityError):
        hb.scaling_check(lambda p, s: np.full(p.shape[0], (-s) ** -1.0), X5, 0.0, -0.3, 1.0)


def test_ibp_cases():
    n = 5
    lhs, rhs, err = hb.ibp_check(lambda p, t: (p - X5).T, X5, 0.0, 1.0, div=lambda p, t: np.full(p.shape[0], 5.0))
    assert lhs == pytest.approx(n * VOLUME_N5_R1, rel=1e-4)
    assert rhs == pytest.approx(lhs, rel=1e-2)
    lhs, rhs, _ = hb.ibp_check(lambda p, t: (-t) * (p - X5).T, X5, 0.0, 1.0)
    assert rhs == pytest.approx(lhs, rel=1e-2)
    const = np.array([0.3, -0.2, 0.1, 0.0, 0.5])
    lhs, rhs, err = hb.ibp_check(lambda p, t: np.broadcast_to(const[:, None], (5, p.shape[0])), X5, 0.0, 1.0)
    assert abs(lhs) <= 1e-12
    assert abs(rhs) <= max(10 * err, 1e-6 * n * VOLUME_N5_R1)


def test_graded_points_preserve_volume():
    for p in (1.0, 2.0, 3.0):
        pts, w = hb.graded_ball_points(5, 4096, 0, p)
        assert np.all((pts ** 2).sum(axis=1) <= 1 + 1e-12)
        assert w.mean() == pytest.approx(1.0, rel=2e-2)


def test_sphere_points_antipodal():
    pts = hb.sphere_points(5, 1024, 0)
    np.testing.assert_allclose((pts ** 2).sum(axis=1), 1.0, atol=1e-14)
    assert np.abs(pts.mean(axis=0)).max() <= 1e-15
