import math

import numpy as np
import pytest

from ymhlab import analytic as an
from ymhlab import flow
from ymhlab.algebra import batched_group_exp
from ymhlab.fields import (GaugeField, LatticeGeometry, Potential, ScalarFieldV, ZERO_POTENTIAL,
                           gauge_transform_lattice, ymhe_fields)

QUARTIC = Potential("quartic", 1.0, 1.0)


def small_state(s, rep, N=8, seed=0, amp=0.3, higgs=0.2, W=QUARTIC):
    g = LatticeGeometry(5, N, 1.0)
    return flow.gaussian_packets(g, rep, seed=seed, amplitude=amp, sigma=2.0, W=W, higgs_amplitude=higgs)


def test_rhs_trivial(s, rep):
    g = LatticeGeometry(5, 8, 1.0)
    dA, du = flow.rhs(flow.FlowState.zero(g, rep))
    assert np.abs(dA).max() == 0 and np.abs(du).max() == 0
    dA, du = flow.rhs(flow.FlowState.vacuum(g, rep, QUARTIC), QUARTIC)
    assert np.abs(dA).max() <= 1e-15 and np.abs(du).max() <= 1e-15


def test_rhs_is_minus_residual_and_backends_agree(s, rep):
    st = small_state(s, rep)
    dA, du = flow.rhs(st, QUARTIC)
    RA, Ru = ymhe_fields(st.A, st.u, QUARTIC)
    np.testing.assert_allclose(dA, -RA, atol=1e-13)
    np.testing.assert_allclose(du, -Ru, atol=1e-13)
    rA, ru = flow.rhs(st, QUARTIC, backend="reference")
    np.testing.assert_allclose(dA, rA, atol=1e-13)
    with pytest.raises(ValueError):
        flow.rhs(st, QUARTIC, backend="gpu")


def test_zero_state_stays_zero(s, rep):
    g = LatticeGeometry(5, 8, 1.0)
    st = flow.step(flow.FlowState.zero(g, rep), ZERO_POTENTIAL, flow.max_stable_dt(g))
    assert np.abs(st.A.data).max() == 0 and np.abs(st.u.data).max() == 0


def test_cfl_refused(s, rep):
    g = LatticeGeometry(5, 8, 1.0)
    st = flow.FlowState.zero(g, rep)
    with pytest.raises(flow.CFLViolation):
        flow.step(st, ZERO_POTENTIAL, 1.01 * flow.max_stable_dt(g))
    with pytest.raises(flow.CFLViolation):
        flow.evolve(st, ZERO_POTENTIAL, 1.0, dt=0.2)


def test_abelian_mode_decay(s, rep):
    # A_1 = eps sin(k x_2) e_1 is divergence free and abelian, so the flow is the
    # lattice heat equation: decay rate sin^2(kh)/h^2, which tends to k^2
    errs = []
    for N in (8, 12):
        L = 8.0
        g = LatticeGeometry(5, N, L / N)
        k = 2 * np.pi / L
        A = np.zeros((5, 3) + g.shape)
        A[0, 0] = 1e-3 * np.sin(k * g.coords()[1])
        st = flow.FlowState(GaugeField(g, s, A), ScalarFieldV.zeros(g, rep))
        t_end = 0.5
        run = flow.evolve(st, ZERO_POTENTIAL, t_end, k_snap=10 ** 6)
        amp = run.snapshots[-1].A.data[0, 0] / A[0, 0].clip(min=1e-12) * (A[0, 0] > 1e-6)
        ratio = amp[A[0, 0] > 1e-6].mean()
        lam = math.sin(k * g.h) ** 2 / g.h ** 2
        assert ratio == pytest.approx(math.exp(-lam * t_end), rel=1e-8)
        errs.append(abs(ratio - math.exp(-k * k * t_end)))
    assert 2.0 < errs[0] / errs[1] < 2.5  # (12/8)^2


def test_energy_nonincreasing_and_deterministic(s, rep):
    st = small_state(s, rep)
    r1 = flow.evolve(st, QUARTIC, 1.0, k_snap=5)
    ok, worst = r1.energy_nonincreasing(1e-10)
    assert ok and worst < 0
    r2 = flow.evolve(st, QUARTIC, 1.0, k_snap=5)
    for a, b in zip(r1.snapshots, r2.snapshots):
        assert np.array_equal(a.A.data, b.A.data) and np.array_equal(a.u.data, b.u.data)
    np.testing.assert_array_equal(r1.energy_trace, r2.energy_trace)
    assert r1.snapshot_steps[0] == 0 and r1.snapshot_steps[-1] == len(r1.energy_trace) - 1


def test_evolve_single_snapshot(s, rep):
    st = small_state(s, rep)
    run = flow.evolve(st, QUARTIC, st.t)
    assert len(run.snapshots) == 1 and len(run.energy_trace) == 1


def test_observers_see_every_level(s, rep):
    st = small_state(s, rep)
    seen = []
    flow.evolve(st, QUARTIC, 0.3, observers=[lambda v: seen.append((v.step, v.t, v.energy))])
    assert [x[0] for x in seen] == list(range(len(seen)))
    assert seen[-1][1] == 0.3


def test_flow_run_save_load(tmp_path, s, rep):
    st = small_state(s, rep)
    run = flow.evolve(st, QUARTIC, 0.2, k_snap=2)
    run.save(tmp_path / "run")
    back = flow.FlowRun.load(tmp_path / "run", rep)
    assert back.dt == run.dt and back.config == run.config
    for a, b in zip(run.snapshots, back.snapshots):
        np.testing.assert_array_equal(a.A.data, b.A.data)
        assert a.t == b.t
    text = (tmp_path / "run" / "manifest.txt").read_text()
    assert "step,t,E_total,max_e" in text


def test_nan_aborts_with_last_good(tmp_path, s, rep):
    st = small_state(s, rep)
    st.A.data[0, 0, 0, 0, 0, 0, 0] = np.nan
    with pytest.raises(flow.FlowAbort):
        flow.evolve(st, QUARTIC, 0.1, abort_dir=tmp_path / "abort")


def test_rk4_self_convergence_small(s, rep):
    st = small_state(s, rep, amp=0.5)
    t_end = 0.2
    finals = [flow.evolve(st, QUARTIC, t_end, k_snap=10 ** 6, dt=dt).snapshots[-1]
              for dt in (0.05, 0.025, 0.0125)]
    d1 = np.abs(finals[0].A.data - finals[1].A.data).max()
    d2 = np.abs(finals[1].A.data - finals[2].A.data).max()
    assert math.log2(d1 / d2) >= 3.5


def test_higgs_equilibrium(s, rep):
    g = LatticeGeometry(5, 8, 1.0)
    vac = flow.FlowState.vacuum(g, rep, QUARTIC)
    ok, diag = flow.higgs_equilibrium_check(vac, QUARTIC)
    assert ok, diag
    half = flow.FlowState(vac.A, ScalarFieldV(g, rep, 0.5 * vac.u.data))
    assert not flow.higgs_equilibrium_check(half, QUARTIC)[0]
    nxt = flow.step(vac, QUARTIC, flow.max_stable_dt(g))
    assert np.abs(nxt.u.data - vac.u.data).max() <= 1e-12


def test_selfsim_residuals(s, rep):
    prof = an.BumpProfile.random(5, 3, seed=3, rho=1.0, amplitude=0.5)
    X, T = np.zeros(5), 0.0
    pair = an.make_self_similar(prof, X, T, s, rep)
    pts = np.random.default_rng(0).uniform(-0.4, 0.4, (6, 5))
    S0, J0 = flow.selfsim_residuals(pair, X, T, t=-0.5, points=pts)
    assert np.abs(S0).max() > 1e-3  # not radially gauged
    assert np.abs(J0).max() == 0.0
    S1, _ = flow.selfsim_residuals(an.radial_gauge(pair, X), X, T, t=-0.5, points=pts)
    assert np.abs(S1).max() <= 1e-6
    with pytest.raises(ValueError):
        flow.selfsim_residuals(pair, X, T, t=0.1, points=pts)
    st = small_state(s, rep)
    S, J = flow.selfsim_residuals(st, X, 1.0, QUARTIC)
    assert S.shape == (5, 3) + st.geometry.shape and np.abs(S).max() > 0


def test_rhs_gauge_equivariant(s, rep):
    # rhs(g.state) = g.rhs(state) up to O(h^2); measured at the centre site of centred blocks
    # (the stencils reach three sites, so the block wrap does not pollute the centre)
    L, defects = 8.0, []
    c = (Ellipsis,) + (4,) * 5
    for h in (0.5, 0.25):
        g = LatticeGeometry(5, 8, h)
        pts = g.coords().reshape(5, -1).T
        A = np.stack([an.periodic_algebra_field(5, s, L, seed=i, amplitude=0.3)[0](pts) for i in range(5)])
        u = an.periodic_algebra_field(5, s, L, seed=40, amplitude=0.3)[0](pts)
        st = flow.FlowState(GaugeField(g, s, A.reshape((5, 3) + g.shape)),
                            ScalarFieldV(g, rep, u.reshape((3,) + g.shape)))
        xi = an.periodic_algebra_field(5, s, L, seed=41, amplitude=0.4)[0](pts).reshape((3,) + g.shape)
        gA, gu = gauge_transform_lattice(xi, st.A, st.u)
        dA, du = flow.rhs(st, QUARTIC)
        gdA, gdu = flow.rhs(flow.FlowState(gA, gu), QUARTIC)
        rho, Ad = batched_group_exp(xi, rep)
        defects.append(max(np.abs(gdA - np.einsum("...kb,jb...->jk...", Ad, dA))[c].max(),
                           np.abs(gdu - np.einsum("...vw,w...->v...", rho, du))[c].max()))
    assert 1.6 <= math.log2(defects[0] / defects[1]) <= 2.4
