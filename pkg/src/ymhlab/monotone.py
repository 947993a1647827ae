"""Monotone quantities of the Yang-Mills-Higgs flow and their verification.

* Hong's global quantity ``int e Phi dx`` and its time derivative, as lattice sums.
* The local heat-ball quantity ``M(r)`` and its dissipation ``D(r)``, whose
  relation ``dM/dr = D`` is checked on recorded flow data by Simpson's rule.
* The cutoff estimates, the summability bound (with explicitly derived
  constants) and the static ball-energy formula for stationary pairs.

Lattice flow data reach the heat-ball quadrature through
:class:`SpacetimeField`: boxes of field values recorded around ``X`` while the
flow runs, interpolated multilinearly in space and linearly in time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate as sp_integrate
from scipy import optimize

from . import _kernels
from .analytic import PointFields, pointwise_energy
from .fields import (GaugeField, LatticeGeometry, Potential, ScalarFieldV, ZERO_POTENTIAL,
                     covariant_gradient, curvature, energy_density, ymhe_residual)
from .flow import FlowRun, FlowState, StepView, engine_for, full_curvature
from .heatball import (HeatBall, QuadratureSpec, ball_points, c_n, integrate, sphere_points,
                       unit_ball_volume, unit_sphere_area)


class TrustRegionError(ValueError):
    """A query leaves the recorded box or the recorded time window."""


class NotAPairError(ValueError):
    """The static formula was asked about fields that do not solve the stationary equations."""


# --- recorded spacetime boxes -------------------------------------------------

def _box_indices(geometry: LatticeGeometry, X, k: int):
    """Wrapped lattice indices of the ``(2k+1)^n`` box around the site nearest ``X``.

    Returns ``(index arrays per axis, physical coordinate of box index 0)``.
    """
    c = geometry.nearest_index(X)
    X = np.asarray(X, dtype=float)
    idx, origin = [], []
    for i in range(geometry.n):
        raw = np.arange(c[i] - k, c[i] + k + 1)
        idx.append(raw % geometry.N)
        # unwrap so the box sits around X rather than at the torus cell of c
        site = geometry.origin[i] + c[i] * geometry.h
        shift = round((X[i] - site) / geometry.L) * geometry.L
        origin.append(site + shift - k * geometry.h)
    return idx, np.array(origin)


def _half_width(geometry, X, radius):
    off = np.abs(np.asarray(X, dtype=float) - _site_coord(geometry, X)).max()
    return int(math.ceil((radius + off) / geometry.h - 1e-9))


def _site_coord(geometry, X):
    c = geometry.nearest_index(X)
    X = np.asarray(X, dtype=float)
    site = np.array([geometry.origin[i] + c[i] * geometry.h for i in range(geometry.n)])
    return site + np.round((X - site) / geometry.L) * geometry.L


@dataclass
class _BoxSeries:
    """Time series of ``(C, box sites)`` arrays on one box; multilinear / linear interpolation."""

    times: np.ndarray
    data: np.ndarray  # (Nt, C, S)
    origin: np.ndarray
    h: float
    side: int

    def covers(self, points) -> bool:
        lo = self.origin
        hi = self.origin + (self.side - 1) * self.h
        tol = 1e-12 * max(1.0, self.h)
        return bool(np.all(points >= lo - tol) and np.all(points <= hi + tol))

    def __call__(self, points, t):
        points = np.ascontiguousarray(points, dtype=float)
        if not self.times[0] - 1e-12 <= t <= self.times[-1] + 1e-12:
            raise TrustRegionError(f"t={t:.6g} outside the recorded window [{self.times[0]:.6g}, {self.times[-1]:.6g}]")
        if not self.covers(points):
            raise TrustRegionError("query points leave the recorded box")
        n = points.shape[1]
        shape = np.full(n, self.side, dtype=np.int64)
        j = int(np.searchsorted(self.times, t, side="right")) - 1
        j = min(max(j, 0), len(self.times) - 2) if len(self.times) > 1 else 0
        out = np.empty((points.shape[0], self.data.shape[1]))
        _kernels.multilinear(self.data[j], self.origin, self.h, shape, points, out)
        if len(self.times) > 1:
            t0, t1 = self.times[j], self.times[j + 1]
            s = (t - t0) / (t1 - t0)
            if s != 0.0:
                out1 = np.empty_like(out)
                _kernels.multilinear(self.data[j + 1], self.origin, self.h, shape, points, out1)
                out = (1.0 - s) * out + s * out1
        return out.T


class SpacetimeRecorder:
    """Flow observer that keeps field boxes around ``X`` for later heat-ball quadrature.

    The inner box (half-width ``inner`` sites) stores ``A, u, F, Du, d_tA, d_tu``;
    the outer box (half-width ``outer``) stores the lattice ``e`` only, which is
    all the cutoff estimates need.  Levels with ``t < t_from`` are skipped.
    """

    def __init__(self, geometry: LatticeGeometry, rep, X, inner: int, outer: int | None = None,
                 t_from: float = -math.inf, stride: int = 1):
        self.geometry = geometry
        self.rep = rep
        self.structure = rep.structure
        self.X = np.asarray(X, dtype=float)
        self.inner = int(inner)
        self.outer = int(outer if outer is not None else inner)
        self.t_from = t_from
        self.stride = int(stride)
        self._idx_in, self._org_in = _box_indices(geometry, self.X, self.inner)
        self._idx_out, self._org_out = _box_indices(geometry, self.X, self.outer)
        self.potential = None
        self.times: list = []
        self._inner: list = []
        self._outer: list = []

    @classmethod
    def for_radius(cls, geometry, rep, X, r_max: float, t_from: float = -math.inf, stride: int = 1):
        """Boxes large enough for heat balls up to ``r_max`` and the ``2 c_n r_max`` cutoff ball."""
        cn = c_n(geometry.n)
        return cls(geometry, rep, X, _half_width(geometry, X, cn * r_max),
                   _half_width(geometry, X, 2 * cn * r_max), t_from, stride)

    def _take(self, flat, idx):
        g = self.geometry
        arr = flat.reshape((flat.shape[0],) + g.shape)
        return arr[np.ix_(np.arange(flat.shape[0]), *idx)].reshape(flat.shape[0], -1)

    def __call__(self, view: StepView):
        if view.t < self.t_from - 1e-12 or view.step % self.stride:
            return
        self.potential = view.engine.potential
        stack = np.concatenate([view.A, view.u, view.F, view.Du, view.dA, view.du])
        self.times.append(float(view.t))
        self._inner.append(self._take(stack, self._idx_in))
        self._outer.append(self._take(view.e[None, :], self._idx_out))

    def field(self) -> "SpacetimeField":
        if len(self.times) < 2:
            raise ValueError("need at least two recorded time levels")
        t = np.array(self.times)
        h = self.geometry.h
        inner = _BoxSeries(t, np.stack(self._inner), self._org_in, h, 2 * self.inner + 1)
        outer = _BoxSeries(t, np.stack(self._outer), self._org_out, h, 2 * self.outer + 1)
        return SpacetimeField(self.geometry, self.rep, self.X, inner, outer, self.potential)


@dataclass
class SpacetimeField:
    """Recorded flow data around ``X`` as a function of ``(x, t)``; read-only.

    ``e`` and ``W`` are recomputed from the interpolated ``F``, ``Du`` and
    ``u`` rather than interpolated themselves: the energy then matches the other
    interpolated fields pointwise, which the local identity relies on.
    """

    geometry: LatticeGeometry
    rep: object
    X: np.ndarray
    inner: _BoxSeries
    outer: _BoxSeries
    potential: Potential = ZERO_POTENTIAL

    @property
    def structure(self):
        return self.rep.structure

    @property
    def n(self) -> int:
        return self.geometry.n

    @property
    def t_start(self) -> float:
        return float(self.inner.times[0])

    @property
    def t_end(self) -> float:
        return float(self.inner.times[-1])

    @cached_property
    def _pairs(self):
        from itertools import combinations
        return list(combinations(range(self.n), 2))

    def evaluate(self, points, t) -> PointFields:
        n, dg, dV = self.n, self.structure.dim, self.rep.dim
        vals = self.inner(points, t)
        P = vals.shape[1]
        o = 0

        def take(count):
            nonlocal o
            block = vals[o:o + count]
            o += count
            return block

        A = take(n * dg).reshape(n, dg, P)
        u = take(dV)
        Fp = take(len(self._pairs) * dg).reshape(-1, dg, P)
        Du = take(n * dV).reshape(n, dV, P)
        dA = take(n * dg).reshape(n, dg, P)
        du = take(dV)
        F = np.zeros((n, n, dg, P))
        for p, (i, j) in enumerate(self._pairs):
            F[i, j] = Fp[p]
            F[j, i] = -Fp[p]
        Wv = self.potential.W(self.rep.norm2(u))
        e = pointwise_energy(self.structure, self.rep, self.potential, F, Du, u)
        return PointFields(A, u, F, Du, dA, du, e, Wv)

    def energy(self, points, t) -> np.ndarray:
        return self.outer(points, t)[0]

    def check_ball(self, ball: HeatBall):
        if ball.t_start < self.t_start - 1e-12 or ball.T > self.t_end + 1e-12:
            raise TrustRegionError("heat ball extends outside the recorded time window")
        pts = np.asarray(ball.X) + ball.max_radius * np.vstack([np.eye(self.n), -np.eye(self.n)])
        if not self.inner.covers(pts):
            raise TrustRegionError("heat ball leaves the recorded box")

    def check_energy_ball(self, X, radius):
        pts = np.asarray(X) + radius * np.vstack([np.eye(self.n), -np.eye(self.n)])
        if not self.outer.covers(pts):
            raise TrustRegionError("energy ball leaves the recorded outer box")


# --- Hong's global formula ----------------------------------------------------

def _periodic_gaussian(geometry: LatticeGeometry, X, tau: float, images: int = 3) -> np.ndarray:
    """``prod_i sum_m exp(-(x_i - X_i + m L)^2 / (4 tau))`` on the lattice (periodised Gaussian)."""
    L = geometry.L
    out = np.ones(())
    for i in range(geometry.n):
        d = geometry.axis(i) - X[i]
        d = (d + L / 2) % L - L / 2
        g = sum(np.exp(-(d + m * L) ** 2 / (4 * tau)) for m in range(-images, images + 1))
        out = np.multiply.outer(out, g)
    return out.ravel()


def _min_image(geometry, X):
    L = geometry.L
    d = geometry.coords().reshape(geometry.n, -1) - np.asarray(X, dtype=float)[:, None]
    return (d + L / 2) % L - L / 2


def _hong_terms(engine, A2, u2, F, Du, e, dA, du, t, X, T, d):
    g = engine.geometry
    n, dg, dV = g.n, engine.dg, engine.dV
    tau = T - t
    if not tau > 0:
        raise ValueError("Hong's formula needs t < T")
    Phi = (4 * math.pi * tau) ** (-(n - 4) / 2) * _periodic_gaussian(g, X, tau)
    w = d / (2.0 * (t - T))
    Fp = F.reshape(-1, dg, F.shape[1])
    Du3 = Du.reshape(n, dV, -1)
    dA3 = dA.reshape(n, dg, -1)
    K, M = engine.K, engine.M
    s2 = np.zeros(u2.shape[1])
    for j in range(n):
        Sj = dA3[j].copy()
        for k in range(n):
            if k != j:
                sign = 1.0 if k < j else -1.0
                Sj += sign * w[k] * Fp[engine.pair_of[k, j]]
        s2 += np.einsum("ab,aS,bS->S", K, Sj, Sj)
    J = du + np.einsum("kS,kvS->vS", w, Du3)
    s2 += np.einsum("vw,vS,wS->S", M, J, J)
    uu = np.einsum("vw,vS,wS->S", M, u2, u2)
    grad = np.einsum("vw,kvS,kwS->S", M, Du3, Du3)
    hn = g.cell_volume
    value = float((e * Phi).sum() * hn)
    rhs1 = -float((s2 * Phi).sum() * hn)
    rhs2 = -float(((grad + 4 * engine.potential.W(uu)) * Phi).sum() * hn / (2 * tau))
    return value, rhs1, rhs2


class HongTrace:
    """Flow observer recording ``(t, value, rhs1, rhs2)`` of Hong's formula at every level.

    ``value = sum e Phi h^n`` with ``Phi = (4 pi (T-t))^2 Gamma`` periodised
    over the torus; ``rhs1 = -sum (sum_j |S_j|^2 + |J|^2) Phi h^n`` and
    ``rhs2 = -sum (sum_i |Du_i|^2 + 4W) / (2(T-t)) Phi h^n``.
    """

    def __init__(self, geometry: LatticeGeometry, X, T: float):
        self.geometry = geometry
        self.X = np.asarray(X, dtype=float)
        self.T = float(T)
        self._d = _min_image(geometry, self.X)
        self.rows: list = []

    def __call__(self, view: StepView):
        self.rows.append((view.t,) + _hong_terms(view.engine, view.A, view.u, view.F, view.Du, view.e,
                                                 view.dA, view.du, view.t, self.X, self.T, self._d))

    def table(self) -> np.ndarray:
        return np.array(self.rows, dtype=float).reshape(-1, 4)

    def consistency(self):
        """Central-difference ``d value/dt`` against ``rhs1 + rhs2`` at interior levels.

        Returns rows ``(t, dvalue_dt, rhs, relative_defect)``.
        """
        R = self.table()
        out = []
        for k in range(1, len(R) - 1):
            dv = (R[k + 1, 1] - R[k - 1, 1]) / (R[k + 1, 0] - R[k - 1, 0])
            rhs = R[k, 2] + R[k, 3]
            scale = max(abs(dv), abs(rhs))
            out.append((R[k, 0], dv, rhs, abs(dv - rhs) / scale if scale > 0 else 0.0))
        return np.array(out).reshape(-1, 4)

    def csv(self) -> str:
        lines = ["# hong global trace v1", "t,value,rhs1,rhs2"]
        lines += [",".join(repr(float(v)) for v in row) for row in self.table()]
        return "\n".join(lines) + "\n"


def hong_global(source, X, T: float, t: float | None = None, W: Potential | None = None):
    """Hong's weighted energy and the two right-side integrals at one time.

    ``source`` is a :class:`FlowState` (its own time is used) or a
    :class:`FlowRun` together with a snapshot time ``t``.
    Returns ``(value, (rhs1, rhs2))``.
    """
    if isinstance(source, FlowRun):
        if t is None:
            raise ValueError("a FlowRun needs the time t")
        if not source.t_start - 1e-12 <= t <= source.t_end + 1e-12:
            raise TrustRegionError(f"t={t:.6g} outside the run window")
        times = np.array([s.t for s in source.snapshots])
        k = int(np.argmin(np.abs(times - t)))
        if abs(times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"no snapshot at t={t:.6g}")
        W = source.config.potential if W is None else W
        state = source.snapshots[k]
    else:
        state = source
        W = ZERO_POTENTIAL if W is None else W
        if t is not None and abs(t - state.t) > 1e-12:
            raise TrustRegionError("t differs from the state's time")
    eng = engine_for(state.geometry, state.rep, W)
    A2 = eng.flat_A(state.A).copy()
    u2 = eng.flat_u(state.u).copy()
    dA, du, _ = eng.rhs(A2, u2, want_e=True)
    X = np.asarray(X, dtype=float)
    value, r1, r2 = _hong_terms(eng, A2, u2, eng.F, eng.Du, eng.e, dA, du, state.t, X, T,
                                _min_image(state.geometry, X))
    return value, (r1, r2)


# --- local monotone quantity --------------------------------------------------

def _fields_at(source, points, t) -> PointFields:
    ev = getattr(source, "evaluate_invariant", None)
    return ev(points, t) if ev is not None else source.evaluate(points, t)


def _metrics(source):
    return source.structure.killing_metric, source.rep.inner_product


def local_integrands(source, X, T, points, t) -> np.ndarray:
    """Rows ``(M integrand, D integrand, |S|^2 + |J|^2)`` at ``points``; shape ``(3, P)``.

    With ``w = (x-X)/(2(t-T))``, ``S_j = d_tA_j + sum_i w_i F_ij`` and
    ``J = d_tu + sum_i w_i Du_i``:

    * M: ``e (n-4)/(2(T-t)) - sum_j <sum_i w_i F_ij, S_j> - <sum_i w_i Du_i, J>``
    * D: ``(sum_i |Du_i|^2 + 4W)/(2(T-t)) + sum_j |S_j|^2 + |J|^2``
    """
    X = np.asarray(X, dtype=float)
    n = X.size
    K, Mv = _metrics(source)
    ev = _fields_at(source, points, t)
    tau = T - t
    w = (points - X).T / (2.0 * (t - T))
    wF = np.einsum("iP,ijaP->jaP", w, ev.F)
    S = ev.dA_dt + wF
    wD = np.einsum("iP,ivP->vP", w, ev.Du)
    J = ev.du_dt + wD
    SJ = np.einsum("ab,jaP,jbP->P", K, S, S) + np.einsum("vw,vP,wP->P", Mv, J, J)
    m = (ev.e * (n - 4) / (2 * tau) - np.einsum("ab,jaP,jbP->P", K, wF, S)
         - np.einsum("vw,vP,wP->P", Mv, wD, J))
    d = (np.einsum("vw,ivP,iwP->P", Mv, ev.Du, ev.Du) + 4 * ev.W) / (2 * tau) + SJ
    return np.stack([m, d, SJ])


@dataclass
class MonotoneSample:
    r: float
    M: float
    M_err: float
    D: float
    D_err: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("r must be positive")
        if not all(math.isfinite(v) for v in (self.M, self.M_err, self.D, self.D_err)):
            raise FloatingPointError(f"non-finite monotone sample at r={self.r}")


def _ball_for(source, X, T, r):
    ball = HeatBall(tuple(np.asarray(X, dtype=float)), T, r)
    check = getattr(source, "check_ball", None)
    if check is not None:
        check(ball)
    return ball


def sample(source, X, T: float, r: float, spec: QuadratureSpec = QuadratureSpec()) -> MonotoneSample:
    """``M(r)`` and ``D(r)`` from one heat-ball quadrature."""
    ball = _ball_for(source, X, T, r)
    n = ball.n
    res = integrate(ball, lambda p, t: local_integrands(source, X, T, p, t)[:2], spec)
    sM = r ** (-(n - 4))
    sD = (n - 4) * r ** (-(n - 3))
    return MonotoneSample(r, float(res.value[0]) * sM, float(res.error[0]) * sM,
                          float(res.value[1]) * sD, float(res.error[1]) * sD)


def local_quantity(source, X, T: float, r: float, spec: QuadratureSpec = QuadratureSpec()):
    """``M(r)`` with its error estimate."""
    s = sample(source, X, T, r, spec)
    return s.M, s.M_err


def local_dissipation(source, X, T: float, r: float, spec: QuadratureSpec = QuadratureSpec()):
    """``D(r)`` (the ``r``-derivative of ``M`` predicted by the local formula) with its error estimate."""
    s = sample(source, X, T, r, spec)
    return s.D, s.D_err


@dataclass
class ScanResult:
    samples: list
    midpoints: list
    verdict_a: list  # per consecutive pair: M(r2) >= M(r1) - (err1 + err2)
    ftc: list  # per consecutive pair: (dM, simpson integral of D, relative defect)
    rel_tol: float
    abs_floor: float

    @property
    def verdict_b(self) -> list:
        return [d <= self.rel_tol or abs(a - b) <= self.abs_floor for a, b, d in self.ftc]

    @property
    def passed(self) -> bool:
        return all(self.verdict_a) and all(self.verdict_b)

    def csv(self) -> str:
        lines = ["# monotonicity scan v1", "r,M,M_err,D,D_err,verdictA,verdictB_residual"]
        for k, s in enumerate(self.samples):
            if k == 0:
                va, vb = "", ""
            else:
                va = "pass" if self.verdict_a[k - 1] else "fail"
                vb = repr(float(self.ftc[k - 1][2]))
            lines.append(f"{s.r!r},{s.M!r},{s.M_err!r},{s.D!r},{s.D_err!r},{va},{vb}")
        return "\n".join(lines) + "\n"


def monotonicity_scan(source, X, T: float, r_list, spec: QuadratureSpec = QuadratureSpec(),
                      rel_tol: float = 0.05, abs_floor: float = 1e-10) -> ScanResult:
    """``M`` and ``D`` on ``r_list`` (plus midpoints) with both verdicts.

    Verdict A: ``M(r2) >= M(r1) - (err1 + err2)``.  Verdict B: ``M(r2) - M(r1)``
    against Simpson's rule for ``int D dr`` at relative tolerance ``rel_tol``;
    differences below ``abs_floor`` pass (all-zero data).
    """
    r_list = [float(r) for r in r_list]
    if any(b <= a for a, b in zip(r_list, r_list[1:])):
        raise ValueError("r_list must increase strictly")
    samples = [sample(source, X, T, r, spec) for r in r_list]
    mids = [sample(source, X, T, 0.5 * (a + b), spec) for a, b in zip(r_list, r_list[1:])]
    va, ftc = [], []
    for s1, sm, s2 in zip(samples, mids, samples[1:]):
        va.append(s2.M >= s1.M - (s1.M_err + s2.M_err))
        dM = s2.M - s1.M
        simpson = (s2.r - s1.r) / 6.0 * (s1.D + 4 * sm.D + s2.D)
        scale = max(abs(dM), abs(simpson))
        ftc.append((dM, simpson, abs(dM - simpson) / scale if scale > 0 else 0.0))
    return ScanResult(samples, mids, va, ftc, rel_tol, abs_floor)


# --- cutoff and constants -------------------------------------------------------

def _psi(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


@dataclass(frozen=True)
class Cutoff:
    """Smooth step ``eta``: 0 below 1/2, 1 above 1, from the ``exp(-1/x)`` bump."""

    grid: int = 200001

    def __call__(self, s):
        a = _psi(2 * np.asarray(s, dtype=float) - 1)
        b = _psi(2 - 2 * np.asarray(s, dtype=float))
        return a / (a + b)

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        x1, x2 = 2 * s - 1, 2 - 2 * s
        a, b = _psi(x1), _psi(x2)
        with np.errstate(divide="ignore", invalid="ignore"):
            da = np.where(x1 > 0, 2 * a / np.where(x1 > 0, x1, 1) ** 2, 0.0)
            db = np.where(x2 > 0, -2 * b / np.where(x2 > 0, x2, 1) ** 2, 0.0)
        return (da * b - a * db) / (a + b) ** 2

    @cached_property
    def sup_derivative(self) -> float:
        """``||eta'||_inf``: dense grid on ``[1/2, 1]`` refined by a bounded 1-d search."""
        s = np.linspace(0.5, 1.0, self.grid)
        d = self.derivative(s)
        k = int(np.argmax(d))
        lo, hi = s[max(k - 1, 0)], s[min(k + 1, len(s) - 1)]
        res = optimize.minimize_scalar(lambda x: -float(self.derivative(x)), bounds=(lo, hi),
                                       method="bounded", options={"xatol": 1e-14})
        return max(float(d[k]), -float(res.fun))


def _maximize(f, lo, hi, grid=4001):
    """Maximum of a unimodal-ish ``f`` on ``[lo, hi]`` (log grid + bounded refinement)."""
    xs = np.geomspace(lo, hi, grid)
    vals = np.array([f(x) for x in xs])
    k = int(np.argmax(vals))
    a, b = xs[max(k - 1, 0)], xs[min(k + 1, grid - 1)]
    res = optimize.minimize_scalar(lambda x: -f(x), bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-14 * b})
    return max(float(vals[k]), -float(res.fun)), float(res.x if -res.fun >= vals[k] else xs[k])


@dataclass(frozen=True)
class Constants:
    n: int
    c_n: float
    eta_sup: float
    const_n: float
    c_tilde: float
    c_tilde_printed: float
    ratio_weight: float
    K_early: float
    I_a: float
    I_b: float
    I_late: float
    gamma: float

    def report(self) -> str:
        lines = ["# derived constants v1"]
        for k, v in self.__dict__.items():
            lines.append(f"{k}={v!r}")
        return "\n".join(lines) + "\n"


def kernel_profile(n: int, sigma: float) -> float:
    """``(4 pi sigma)^{-(n-4)/2} exp(-c_n^2/(4 sigma))``: the weighted kernel at distance ``c_n`` (r = 1)."""
    return (4 * math.pi * sigma) ** (-(n - 4) / 2) * math.exp(-c_n(n) ** 2 / (4 * sigma))


def _radius_scaled(n, tau):
    """``R_1(-tau)`` for the unit heat ball."""
    if tau <= 0:
        return 0.0
    val = 2 * (n - 4) * tau * math.log(1.0 / (4 * math.pi * tau))
    return math.sqrt(max(val, 0.0))


def derive_constants(n: int, cutoff: Cutoff = Cutoff()) -> Constants:
    """Explicit constants for the cutoff estimates and the summability bound.

    ``const(n)`` bounds ``max(Phi, r^2/(s-t) Phi) r^{n-4}`` off ``B_{c_n r}``;
    after scaling out ``r`` it is a maximum over ``sigma = (s-t)/r^2`` at the
    nearest admissible distance ``c_n``.  The cutoff constant is
    ``const(n) (4 ||eta'||^2 / c_n^2 + 2 ||eta'||)``, from
    ``|grad phi| <= ||eta'|| / (c_n r)`` and ``|x-X| <= 2 c_n r`` on the
    support of ``grad phi``; the value ``const(n) (4 ||eta'||^2 + 2 c_n ||eta'||)``
    is reported alongside.

    ``gamma`` bounds the local quantity by ``r^{-(n-2)} iint e + r^{-(n-4)} int e``:
    the cross terms are at most ``|x-X|^2/(2(T-t)^2) e + (|S|^2+|J|^2)/2``; the
    early part ``T-t >= tau_c`` is bounded directly and the late part through
    the energy-ratio bound, integrated against the heat-ball profile.
    """
    if n < 5:
        raise ValueError("n must be at least 5")
    cn = c_n(n)
    eta_sup = cutoff.sup_derivative
    hi = 1e4
    m1, _ = _maximize(lambda s: kernel_profile(n, s), 1e-6, hi)
    m2, _ = _maximize(lambda s: kernel_profile(n, s) / s, 1e-6, hi)
    const_n = max(m1, m2)
    c_tilde = const_n * (4 * eta_sup ** 2 / cn ** 2 + 2 * eta_sup)
    c_tilde_printed = const_n * (4 * eta_sup ** 2 + 2 * cn * eta_sup)
    ratio_weight = (4 * math.pi) ** ((n - 4) / 2) * math.exp(0.25)
    depth = 1.0 / (4 * math.pi)
    tau_c = math.exp(-1.0 / (2 * (n - 4))) * depth
    weight = lambda tau: (n - 4) / (2 * tau) + _radius_scaled(n, tau) ** 2 / (2 * tau ** 2)
    K_early, _ = _maximize(weight, tau_c, depth)
    # substitute tau = tau_c e^{-s}: integrable singularities at tau -> 0 become exponential tails
    # with ell = log(1/(4 pi tau)): R^2 = 2(n-4) tau ell, so both integrands are tau powers times ell powers
    log_tc = math.log(tau_c)
    ell = lambda s: -math.log(4 * math.pi) - log_tc + s

    def fa(s):  # R^{n-4} / tau * (d tau / d s)
        return (2 * (n - 4) * ell(s)) ** ((n - 4) / 2) * math.exp(((n - 4) / 2) * (log_tc - s))

    def fb(s):  # R^{n-2} / tau^2 * (d tau / d s)
        return (2 * (n - 4) * ell(s)) ** ((n - 2) / 2) * math.exp(((n - 4) / 2) * (log_tc - s))
    I_a = sp_integrate.quad(fa, 0, math.inf, limit=400, epsabs=0, epsrel=1e-11)[0]
    I_b = sp_integrate.quad(fb, 0, math.inf, limit=400, epsabs=0, epsrel=1e-11)[0]
    I_late = 0.5 * (n - 4) * I_a + 0.5 * I_b
    gamma = max(K_early + c_tilde * (1 + ratio_weight * I_late), 1 + ratio_weight * I_late)
    return Constants(n, cn, eta_sup, const_n, c_tilde, c_tilde_printed, ratio_weight, K_early, I_a, I_b, I_late, gamma)


# --- cutoff estimates and summability ------------------------------------------

def _energy_at(source, points, t):
    fn = getattr(source, "energy", None)
    return fn(points, t) if fn is not None else source.evaluate(points, t).e


def ball_energy(source, X, t, radius, spec: QuadratureSpec = QuadratureSpec()) -> float:
    """``int_{B_radius(X)} e(x, t) dx`` by quasi-Monte Carlo."""
    X = np.asarray(X, dtype=float)
    n = X.size
    if radius <= 0:
        return 0.0
    check = getattr(source, "check_energy_ball", None)
    if check is not None:
        check(X, radius)
    pts = X + radius * ball_points(n, 2 * spec.M_ball, spec.seed)
    return float(np.mean(_energy_at(source, pts, t))) * unit_ball_volume(n) * radius ** n


def energy_integrals(source, X, T: float, r: float, spec: QuadratureSpec = QuadratureSpec(),
                     panels: int = 8, order: int = 8):
    """``I_st = int_{T-r^2/4pi}^T int_{B_{2 c_n r}} e`` and ``I_0 = int_{B_{2 c_n r}} e(T - r^2/4pi)``.

    The time integral uses composite Gauss-Legendre in ``s`` with ``T - t = (r^2/4pi) s^2``.
    """
    X = np.asarray(X, dtype=float)
    n = X.size
    depth = r * r / (4 * math.pi)
    rad = 2 * c_n(n) * r
    gx, gw = np.polynomial.legendre.leggauss(order)
    total = 0.0
    edges = np.linspace(0.0, 1.0, panels + 1)
    for a, b in zip(edges[:-1], edges[1:]):
        for xk, wk in zip(gx, gw):
            s = 0.5 * (b - a) * xk + 0.5 * (a + b)
            t = T - depth * s * s
            total += 0.5 * (b - a) * wk * 2 * depth * s * ball_energy(source, X, t, rad, spec)
    I0 = ball_energy(source, X, T - depth, rad, spec)
    return total, I0


@dataclass
class CutoffEstimates:
    r: float
    dissipation: float
    dissipation_bound: float
    ratio_times: list
    ratios: list
    ratio_bound: float
    constants: Constants

    @property
    def holds(self) -> bool:
        return self.dissipation <= self.dissipation_bound and all(v <= self.ratio_bound for v in self.ratios)


def energy_ratio(source, X, T, r, t, spec: QuadratureSpec = QuadratureSpec()) -> float:
    """``R_r(t-T)^{-(n-4)} int_{B_{R_r(t-T)}} e(t)``; only for ``T - e^{-1/(2(n-4))} r^2/4pi < t < T``."""
    X = np.asarray(X, dtype=float)
    n = X.size
    lo = T - math.exp(-1.0 / (2 * (n - 4))) * r * r / (4 * math.pi)
    if not lo < t < T:
        raise ValueError(f"t={t:.6g} outside the energy-ratio interval ]{lo:.6g}, {T:.6g}[")
    R = float(HeatBall(tuple(X), T, r).radius(t - T))
    if R == 0.0:
        return 0.0
    return ball_energy(source, X, t, R, spec) / R ** (n - 4)


def cutoff_estimates(source, X, T: float, r: float, cutoff: Cutoff = Cutoff(),
                   spec: QuadratureSpec = QuadratureSpec(), constants: Constants | None = None) -> CutoffEstimates:
    """Both sides of the two cutoff estimates (the second at five times)."""
    X = np.asarray(X, dtype=float)
    n = X.size
    k = constants or derive_constants(n, cutoff)
    ball = _ball_for(source, X, T, r)
    res = integrate(ball, lambda p, t: local_integrands(source, X, T, p, t)[2], spec)
    I_st, I0 = energy_integrals(source, X, T, r, spec)
    dissipation_bound = 2 * k.c_tilde * I_st / r ** 2 + 2 * I0
    tau_c = math.exp(-1.0 / (2 * (n - 4))) * r * r / (4 * math.pi)
    times = [T - f * tau_c for f in (0.9, 0.7, 0.5, 0.3, 0.1)]
    ratios = [energy_ratio(source, X, T, r, t, spec) for t in times]
    ratio_bound = k.ratio_weight * (k.c_tilde * I_st / r ** (n - 2) + I0 / r ** (n - 4))
    return CutoffEstimates(r, float(res.value), dissipation_bound, times, ratios, ratio_bound, k)


def summability_bound(source, X, T: float, r: float, cutoff: Cutoff = Cutoff(),
                      spec: QuadratureSpec = QuadratureSpec(), constants: Constants | None = None):
    """``(M(r), gamma (r^{-(n-2)} I_st + r^{-(n-4)} I_0))``; the first should not exceed the second."""
    X = np.asarray(X, dtype=float)
    n = X.size
    k = constants or derive_constants(n, cutoff)
    M, _ = local_quantity(source, X, T, r, spec)
    I_st, I0 = energy_integrals(source, X, T, r, spec)
    return M, k.gamma * (I_st / r ** (n - 2) + I0 / r ** (n - 4))


# --- static formula ---------------------------------------------------------

@dataclass
class StaticReport:
    r: list
    lhs: list
    rhs: list
    residual: tuple

    def csv(self) -> str:
        lines = ["# static ball-energy formula v1", "r,lhs,rhs"]
        lines += [f"{a!r},{b!r},{c!r}" for a, b, c in zip(self.r, self.lhs, self.rhs)]
        return "\n".join(lines) + "\n"


def static_monotonicity(A: GaugeField, u: ScalarFieldV, W: Potential, X, r_list,
                        tol: float = 1e-2, spec: QuadratureSpec = QuadratureSpec(),
                        rel_step: float = 1e-3) -> StaticReport:
    """Both sides of the static formula for a stationary pair on the lattice.

    ``lhs = d/dr (r^{4-n} int_{B_r} e)`` by a central difference; ``rhs =
    r^{3-n} int_{B_r} (sum |Du_i|^2 + 4W) + r^{4-n} int_{dB_r} (sum_j |nu^i F_ij|^2
    + |nu^i Du_i|^2)``.  Fields are interpolated multilinearly from the
    lattice.  Pairs whose stationary-equation residual exceeds ``tol`` are refused.
    """
    res = ymhe_residual(A, u, W)
    if max(res) > tol:
        raise NotAPairError(f"stationary residual {max(res):.3g} exceeds {tol:.3g}")
    g = A.geometry
    n = g.n
    X = np.asarray(X, dtype=float)
    r_list = [float(r) for r in r_list]
    F = full_curvature(curvature(A))
    Du = covariant_gradient(A, u)
    e = energy_density(A, u, W)
    uu = u.rep.norm2(u.data)
    dg, dV = A.structure.dim, u.rep.dim
    S = g.N ** n
    stack = np.concatenate([F.reshape(n * n * dg, S), Du.reshape(n * dV, S), e.reshape(1, S),
                            W.W(uu).reshape(1, S)])
    k = _half_width(g, X, max(r_list) * (1 + 2 * rel_step))
    idx, org = _box_indices(g, X, k)
    box = stack.reshape((stack.shape[0],) + g.shape)[np.ix_(np.arange(stack.shape[0]), *idx)]
    series = _BoxSeries(np.array([0.0]), box.reshape(1, stack.shape[0], -1), org, g.h, 2 * k + 1)
    K, Mv = A.structure.killing_metric, u.rep.inner_product
    unit = ball_points(n, 2 * spec.M_ball, spec.seed)
    dirs = sphere_points(n, 2 * spec.M_ball, spec.seed)

    def parts(pts):
        v = series(pts, 0.0)
        P = pts.shape[0]
        o = n * n * dg
        return (v[:o].reshape(n, n, dg, P), v[o:o + n * dV].reshape(n, dV, P), v[o + n * dV],
                v[o + n * dV + 1])

    def ball_e(r):
        _, _, ee, _ = parts(X + r * unit)
        return ee.mean() * unit_ball_volume(n) * r ** n

    lhs, rhs = [], []
    for r in r_list:
        dr = rel_step * r
        up = (r + dr) ** (4 - n) * ball_e(r + dr)
        dn = (r - dr) ** (4 - n) * ball_e(r - dr)
        lhs.append((up - dn) / (2 * dr))
        _, Dub, _, Wb = parts(X + r * unit)
        interior = (np.einsum("vw,ivP,iwP->P", Mv, Dub, Dub) + 4 * Wb).mean() * unit_ball_volume(n) * r ** n
        Fs, Dus, _, _ = parts(X + r * dirs)
        nuF = np.einsum("iP,ijaP->jaP", dirs.T, Fs)
        nuD = np.einsum("iP,ivP->vP", dirs.T, Dus)
        bnd = (np.einsum("ab,jaP,jbP->P", K, nuF, nuF) + np.einsum("vw,vP,wP->P", Mv, nuD, nuD)).mean()
        bnd *= unit_sphere_area(n) * r ** (n - 1)
        rhs.append(r ** (3 - n) * interior + r ** (4 - n) * bnd)
    return StaticReport(r_list, lhs, rhs, res)
