import math

import numpy as np
import pytest

from ymhlab import analytic as an
from ymhlab import flow
from ymhlab import monotone as mo
from ymhlab.fields import GaugeField, LatticeGeometry, Potential, ScalarFieldV, ZERO_POTENTIAL
from ymhlab.heatball import c_n

QUARTIC = Potential("quartic", 1.0, 1.0)
X = np.zeros(5)
T = 0.6


def _record(rep, state, W, t_end=T, r_max=1.5):
    rec = mo.SpacetimeRecorder.for_radius(state.geometry, rep, X, r_max)
    run = flow.evolve(state, W, t_end, observers=[rec], k_snap=5)
    return run, rec.field()


@pytest.fixture(scope="module")
def geom():
    return LatticeGeometry(5, 8, 1.0)


@pytest.fixture(scope="module")
def zero_field(rep, geom):
    return _record(rep, flow.FlowState.zero(geom, rep), ZERO_POTENTIAL)[1]


@pytest.fixture(scope="module")
def vacuum_field(rep, geom):
    return _record(rep, flow.FlowState.vacuum(geom, rep, QUARTIC), QUARTIC)[1]


@pytest.fixture(scope="module")
def packet_run(rep, geom):
    st = flow.gaussian_packets(geom, rep, seed=1, amplitude=0.3, sigma=2.0, W=QUARTIC, higgs_amplitude=0.3)
    return _record(rep, st, QUARTIC)


@pytest.fixture(scope="module")
def constants():
    return mo.derive_constants(5)


def test_cutoff_shape():
    eta = mo.Cutoff()
    s = np.linspace(-1, 2, 3001)
    v = eta(s)
    assert v.min() >= 0 and v.max() <= 1
    assert np.all(v[s <= 0.5] == 0) and np.all(v[s >= 1] == 1)
    assert eta(0.5) == 0 and eta(1.0) == 1
    d = eta.derivative(s)
    assert d.min() >= 0
    # symmetric about 3/4 with the peak there: eta'(3/4) = 2 * 2 e^{-2} e^{-2} / (2 e^{-2})^2 * 2 = 4
    assert eta.sup_derivative == pytest.approx(4.0, rel=1e-10)
    fd = (eta(0.7 + 1e-6) - eta(0.7 - 1e-6)) / 2e-6
    assert eta.derivative(0.7) == pytest.approx(fd, rel=1e-7)


def test_derive_constants(constants):
    k = constants
    assert k.c_n == pytest.approx(c_n(5), rel=1e-15)
    assert k.eta_sup == pytest.approx(4.0, rel=1e-10)
    # max of sigma^{-1/2} e^{-c^2/(4 sigma)} / sigma over sigma > 0, at sigma = c^2/6, with 4 pi sigma folded in
    assert k.const_n == pytest.approx(12 * math.pi * math.sqrt(3), rel=1e-8)
    assert k.c_tilde == pytest.approx(k.const_n * (4 * 16 / k.c_n ** 2 + 8), rel=1e-12)
    assert k.ratio_weight == pytest.approx(math.sqrt(4 * math.pi) * math.exp(0.25), rel=1e-15)
    for v in (k.const_n, k.c_tilde, k.gamma, k.I_a, k.I_b):
        assert math.isfinite(v) and v > 0
    with pytest.raises(ValueError):
        mo.derive_constants(4)


def test_constants_report(constants):
    text = constants.report()
    assert text.startswith("# derived constants v1")
    kv = dict(line.split("=", 1) for line in text.splitlines()[1:])
    assert float(kv["gamma"]) == constants.gamma


def test_zero_flow_everything_vanishes(zero_field, constants):
    s = mo.sample(zero_field, X, T, 1.0)
    assert (s.M, s.D, s.M_err, s.D_err) == (0.0, 0.0, 0.0, 0.0)
    est = mo.cutoff_estimates(zero_field, X, T, 1.0, constants=constants)
    assert est.dissipation == 0 and est.dissipation_bound == 0 and max(est.ratios) == 0 and est.ratio_bound == 0
    assert est.holds
    assert tuple(map(float, mo.summability_bound(zero_field, X, T, 1.0, constants=constants))) == (0.0, 0.0)
    scan = mo.monotonicity_scan(zero_field, X, T, [0.8, 1.2])
    assert scan.passed


def test_equilibrium_flow_vanishes(vacuum_field):
    s = mo.sample(vacuum_field, X, T, 1.2)
    assert abs(s.M) <= 1e-10 and abs(s.D) <= 1e-10


def test_hong_zero_and_vacuum(rep, geom):
    assert mo.hong_global(flow.FlowState.zero(geom, rep), X, 1.0) == (0.0, (0.0, 0.0))
    v, (a, b) = mo.hong_global(flow.FlowState.vacuum(geom, rep, QUARTIC), X, 1.0, W=QUARTIC)
    assert max(abs(v), abs(a), abs(b)) <= 1e-10


def test_hong_trace_consistency(rep, geom):
    st = flow.gaussian_packets(geom, rep, seed=2, amplitude=0.3, sigma=2.0, W=QUARTIC, higgs_amplitude=0.3)
    tr = mo.HongTrace(geom, X, 1.5)
    run = flow.evolve(st, QUARTIC, 0.4, observers=[tr], k_snap=10 ** 6)
    cons = tr.consistency()
    assert cons[:, 3].max() <= 0.05
    v, _ = mo.hong_global(run, X, 1.5, t=run.snapshots[-1].t)
    assert v == pytest.approx(tr.table()[-1, 1], rel=1e-12)
    assert tr.csv().splitlines()[1] == "t,value,rhs1,rhs2"
    with pytest.raises(ValueError):
        mo.hong_global(run, X, 1.5)
    with pytest.raises(mo.TrustRegionError):
        mo.hong_global(run, X, 1.5, t=3.0)


def test_packet_scan_and_dissipation_sign(packet_run):
    _, sf = packet_run
    scan = mo.monotonicity_scan(sf, X, T, [0.8, 1.1, 1.4])
    for smp in scan.samples + scan.midpoints:
        assert smp.D >= -smp.D_err
        assert smp.M >= 0
    assert scan.passed
    assert all(d <= 0.05 for _, _, d in scan.ftc)
    lines = scan.csv().splitlines()
    assert lines[1] == "r,M,M_err,D,D_err,verdictA,verdictB_residual" and len(lines) == 5
    assert lines[2].endswith(",,")


def test_single_radius_has_no_pair_verdicts(packet_run):
    scan = mo.monotonicity_scan(packet_run[1], X, T, [1.0])
    assert scan.verdict_a == [] and scan.verdict_b == [] and scan.passed
    with pytest.raises(ValueError):
        mo.monotonicity_scan(packet_run[1], X, T, [1.0, 1.0])


def test_local_integrands_pointwise_nonnegative(packet_run):
    _, sf = packet_run
    rng = np.random.default_rng(5)
    pts = rng.uniform(-0.2, 0.2, (200, 5))
    vals = mo.local_integrands(sf, X, T, pts, T - 0.05)
    assert vals[1].min() >= 0 and vals[2].min() >= 0


def test_packet_bounds_hold(packet_run, constants):
    _, sf = packet_run
    est = mo.cutoff_estimates(sf, X, T, 1.0, constants=constants)
    assert est.holds and est.dissipation > 0 and len(est.ratios) == 5
    lhs, rhs = mo.summability_bound(sf, X, T, 1.0, constants=constants)
    assert 0 < lhs <= rhs


def test_energy_ratio_interval(packet_run):
    _, sf = packet_run
    lo = T - math.exp(-0.5) / (4 * math.pi)
    for t in (lo - 0.01, lo, T, T + 0.1):
        with pytest.raises(ValueError):
            mo.energy_ratio(sf, X, T, 1.0, t)
    assert mo.energy_ratio(sf, X, T, 1.0, 0.5 * (lo + T)) > 0


def test_trust_region(packet_run):
    run, sf = packet_run
    with pytest.raises(mo.TrustRegionError):
        mo.sample(sf, X, T, 4.0)  # heat ball starts before the recording
    with pytest.raises(mo.TrustRegionError):
        mo.sample(sf, X, T + 1.0, 1.0)  # apex after the last level
    with pytest.raises(mo.TrustRegionError):
        mo.ball_energy(sf, X, 0.5, 3.0)


def test_sample_rejects_bad_radius(zero_field):
    with pytest.raises(ValueError):
        mo.MonotoneSample(0.0, 0.0, 0.0, 0.0, 0.0)
    with pytest.raises(FloatingPointError):
        mo.MonotoneSample(1.0, float("nan"), 0.0, 0.0, 0.0)


def test_static_trivial_pairs(s, rep, geom):
    for A, u, W in ((GaugeField.zeros(geom, s), ScalarFieldV.zeros(geom, rep), ZERO_POTENTIAL),
                    (GaugeField.zeros(geom, s), flow.FlowState.vacuum(geom, rep, QUARTIC).u, QUARTIC)):
        rep_s = mo.static_monotonicity(A, u, W, X, [1.5, 2.5])
        assert max(map(abs, rep_s.lhs + rep_s.rhs)) <= 1e-10
        assert rep_s.csv().splitlines()[1] == "r,lhs,rhs"


def test_static_refuses_non_pair(s, rep, geom):
    pts = geom.coords().reshape(5, -1).T
    A = np.stack([an.periodic_algebra_field(5, s, 8.0, seed=i, amplitude=0.5)[0](pts) for i in range(5)])
    with pytest.raises(mo.NotAPairError):
        mo.static_monotonicity(GaugeField(geom, s, A.reshape((5, 3) + geom.shape)),
                               ScalarFieldV.zeros(geom, rep), ZERO_POTENTIAL, X, [1.5])
