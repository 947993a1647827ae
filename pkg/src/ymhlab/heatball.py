"""Backward heat kernels, weighted heat balls and quadrature over them.

A weighted heat ball of radius ``r`` about ``(X, T)`` is the superlevel set
``{Phi > r^-(n-4)}``; at time ``t = T + tau`` it is the ball of radius

    R_r(tau)^2 = 2 (n-4) |tau| log(r^2 / (4 pi |tau|)),   -r^2/(4 pi) < tau < 0,

which peaks at ``c_n r`` with ``c_n = sqrt((n-4)/(2 pi e))``.

Quadrature: time slices ``T - (r^2/4pi) q^j`` graded geometrically toward
``T`` and combined by the trapezoid rule in ``log(T-t)``; each slice is a
quasi-Monte Carlo average over a fixed scrambled Sobol point set in the unit
ball, scaled by the exact ball volume.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate as sp_integrate
from scipy.stats import qmc


class KernelDomainError(ValueError):
    """Kernel evaluated at or after its singular time."""


class HomogeneityError(ValueError):
    """A function handed to the scaling check is not parabolically homogeneous of degree -4."""


def c_n(n: int) -> float:
    return math.sqrt((n - 4) / (2 * math.pi * math.e))


def _check_n(n):
    if int(n) != n or n < 5:
        raise ValueError(f"heat balls need n > 4, got {n}")


def _kernel(X, T, x, t, power):
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t >= T):
        raise KernelDomainError("kernel is only defined for t < T")
    X = np.asarray(X, dtype=float)
    r2 = ((x - X) ** 2).sum(axis=-1)
    tau = T - t
    return (4 * math.pi * tau) ** (-power) * np.exp(-r2 / (4 * tau))


def gamma_kernel(X, T, x, t):
    """Backward heat kernel ``(4 pi (T-t))^{-n/2} exp(|x-X|^2 / (4(t-T)))``; ``x`` is ``(..., n)``."""
    n = np.asarray(X).size
    return _kernel(X, T, x, t, n / 2)


def phi_kernel(X, T, x, t):
    """Weighted kernel with exponent ``(n-4)/2``."""
    n = np.asarray(X).size
    return _kernel(X, T, x, t, (n - 4) / 2)


@dataclass(frozen=True)
class Kernel:
    X: tuple
    T: float
    weighted: bool = True

    def __call__(self, x, t):
        return phi_kernel(self.X, self.T, x, t) if self.weighted else gamma_kernel(self.X, self.T, x, t)


@dataclass(frozen=True)
class HeatBall:
    X: tuple
    T: float
    r: float

    def __post_init__(self):
        object.__setattr__(self, "X", tuple(float(v) for v in np.atleast_1d(self.X)))
        _check_n(len(self.X))
        if not self.r > 0:
            raise ValueError(f"heat-ball radius must be positive, got {self.r}")

    @property
    def n(self) -> int:
        return len(self.X)

    @property
    def depth(self) -> float:
        """Length ``r^2/(4 pi)`` of the time extent."""
        return self.r ** 2 / (4 * math.pi)

    @property
    def t_start(self) -> float:
        return self.T - self.depth

    @property
    def max_radius(self) -> float:
        return c_n(self.n) * self.r

    def radius(self, tau):
        """``R_r(tau)`` for ``tau = t - T`` in ``]-r^2/(4 pi), 0[``."""
        tau = np.asarray(tau, dtype=float)
        if np.any(tau <= -self.depth) or np.any(tau >= 0):
            raise ValueError("tau outside the open time extent of the heat ball")
        a = -tau
        val = 2 * (self.n - 4) * a * np.log(self.r ** 2 / (4 * math.pi * a))
        return np.sqrt(np.maximum(val, 0.0))

    def radius_at(self, t):
        return self.radius(np.asarray(t, dtype=float) - self.T)

    def contains(self, x, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        out = np.zeros(np.broadcast_shapes(x.shape[:-1], t.shape), dtype=bool)
        ok = np.broadcast_to(t < self.T, out.shape)
        if ok.any():
            tt = np.where(ok, t, self.T - 1.0)
            val = phi_kernel(self.X, self.T, x, tt)
            out = ok & (val > self.r ** (-(self.n - 4)))
        return out


POINT_SETS = 16  # independent spatial rules cycled over the time slices


@dataclass(frozen=True)
class QuadratureSpec:
    J_time: int = 60
    q: float = 0.85
    M_ball: int = 1024
    seed: int = 0
    J_max: int = 600
    tail_tol: float = 1e-10
    radial_grading: float = 1.0  # p > 1 maps y -> |y|^(p-1) y, clustering points toward the centre

    def __post_init__(self):
        if not 0 < self.q < 1:
            raise ValueError("grading ratio q must lie in ]0, 1[")
        if self.J_time < 20:
            raise ValueError("J_time must be at least 20")
        if self.M_ball < 1024:
            raise ValueError("M_ball must be at least 1024")
        if self.J_max < self.J_time:
            raise ValueError("J_max must be >= J_time")
        if self.radial_grading < 1:
            raise ValueError("radial_grading must be >= 1")


@lru_cache(maxsize=64)
def ball_points(n: int, M: int, seed: int = 0) -> np.ndarray:
    """``M`` unit-ball points: scrambled Sobol points of ``[-1,1]^n`` kept if inside the ball.

    Points come interleaved with their reflections ``y, -y`` so every even-length
    prefix integrates odd functions to zero exactly.
    """
    half = (M + 1) // 2
    sob = qmc.Sobol(d=n, scramble=True, seed=seed)
    pts = np.empty((0, n))
    while pts.shape[0] < half:
        m = max(1024, 2 ** int(math.ceil(math.log2(4 * half * 2 ** n / unit_ball_volume(n)))))
        cube = 2.0 * sob.random(m) - 1.0
        pts = np.concatenate([pts, cube[(cube ** 2).sum(axis=1) < 1.0]])
    pts = pts[:half]
    out = np.ascontiguousarray(np.stack([pts, -pts], axis=1).reshape(-1, n)[:M])
    out.setflags(write=False)
    return out


@lru_cache(maxsize=64)
def graded_ball_points(n: int, M: int, seed: int = 0, p: float = 1.0):
    """Ball points warped by ``y -> |y|^(p-1) y`` and the Jacobian weights ``p |y|^(n(p-1))``.

    ``mean(f(points) * weights) * vol(B)`` is the integral of ``f`` over the unit ball.
    """
    y = ball_points(n, M, seed)
    if p == 1.0:
        w = np.ones(M)
        w.setflags(write=False)
        return y, w
    rad = np.linalg.norm(y, axis=1)
    pts = y * rad[:, None] ** (p - 1)
    w = p * rad ** (n * (p - 1))
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


@lru_cache(maxsize=32)
def sphere_points(n: int, M: int, seed: int = 0) -> np.ndarray:
    """``M`` quasi-random directions in antipodal pairs (odd moments cancel exactly).

    Sobol points pushed through the normal quantile and normalised.
    """
    from scipy.special import ndtri

    sob = qmc.Sobol(d=n, scramble=True, seed=seed + 7919)
    z = ndtri(np.clip(sob.random(max(M // 2, 1)), 1e-12, 1 - 1e-12))
    z = z / np.linalg.norm(z, axis=1, keepdims=True)
    out = np.ascontiguousarray(np.concatenate([z, -z]))
    out.setflags(write=False)
    return out


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def unit_sphere_area(n: int) -> float:
    return n * unit_ball_volume(n)


@dataclass
class QuadResult:
    value: np.ndarray | float
    error: np.ndarray | float
    slices: int
    rows: list = field(default_factory=list, repr=False)


def _as_components(vals, P):
    vals = np.asarray(vals, dtype=float)
    if vals.ndim == 1:
        return vals[None, :]
    if vals.shape[-1] != P:
        raise ValueError("integrand must return (P,) or (m, P)")
    return vals.reshape(-1, P)


def integrate(ball: HeatBall, integrand: Callable, spec: QuadratureSpec = QuadratureSpec(),
              slices: int | None = None, diagnostics: bool = False) -> QuadResult:
    """``iint_{E_r} integrand dx dt`` with a two-level error estimate.

    ``integrand(points (P, n), t)`` returns ``(P,)`` or ``(m, P)``.  The
    evaluation uses the refined level (ratio ``sqrt(q)``, ``2 M_ball`` points);
    the error estimate adds the difference to the level with half the slices
    and the per-slice differences (in absolute value) to the level with half
    the points.  Slices cycle through independently scrambled point sets so the
    spatial errors of neighbouring slices do not line up.  The slice count grows past
    ``2 J_time`` until four consecutive slices contribute less than
    ``tail_tol`` of the running total (at most ``2 J_max``), unless ``slices``
    fixes it (useful when differencing in ``r``).
    """
    n = ball.n
    X = np.asarray(ball.X)
    M = spec.M_ball
    qf = math.sqrt(spec.q)
    ds = -math.log(qf)
    tau0 = ball.depth
    vol_n = unit_ball_volume(n)
    fine = coarse_pts = None
    contrib_f, contrib_h = [], []
    rows = []
    quiet = 0
    j = 0
    jmax = 2 * spec.J_max if slices is None else slices
    while j < jmax:
        j += 1
        tau = tau0 * qf ** j
        t = ball.T - tau
        R = float(ball.radius(-tau))
        if R > 0:
            pts_unit, jac = graded_ball_points(n, 2 * M, spec.seed * POINT_SETS + j % POINT_SETS,
                                               spec.radial_grading)
            vals = _as_components(integrand(X + R * pts_unit, t), pts_unit.shape[0])
            if not np.all(np.isfinite(vals)):
                raise FloatingPointError(f"non-finite integrand on slice {j} (t={t:.6g})")
            vals = vals * jac
            vol = vol_n * R ** n
            g2 = vol * vals.mean(axis=1)
            g1 = vol * vals[:, :M].mean(axis=1)
        else:
            g2 = g1 = None
        w = ds * tau
        c2 = np.zeros(1) if g2 is None else w * g2
        c1 = np.zeros(1) if g1 is None else w * g1
        contrib_f.append(c2)
        contrib_h.append(c1)
        if diagnostics:
            rows.append((j, t, R, float(np.max(np.abs(c2))), float(np.max(np.abs(c2 - c1)))))
        if slices is None and j >= 2 * spec.J_time:
            total = np.abs(sum(_pad(contrib_f))).max()
            if np.abs(c2).max() <= spec.tail_tol * max(total, 1e-300):
                quiet += 1
                if quiet >= 4:
                    break
            else:
                quiet = 0
    cf = _pad(contrib_f)
    ch = _pad(contrib_h)
    I_ff = sum(cf)
    I_cf = 2.0 * sum(cf[1::2])  # every other slice: ratio q, step 2 ds
    err = np.abs(I_ff - I_cf) + sum(np.abs(a - b) for a, b in zip(cf, ch))
    scalar = I_ff.size == 1
    return QuadResult(float(I_ff[0]) if scalar else I_ff, float(err[0]) if scalar else err, j, rows)


def _pad(contribs):
    m = max(c.size for c in contribs) if contribs else 1
    return [np.broadcast_to(c, (m,)) if c.size != m else c for c in contribs]


def spacetime_volume(ball: HeatBall) -> float:
    """``|E_r|`` by adaptive 1-d quadrature of the slice volumes (independent route)."""
    n = ball.n
    f = lambda a: unit_ball_volume(n) * float(ball.radius(-a)) ** n
    val, _ = sp_integrate.quad(f, 0.0, ball.depth, limit=200, epsabs=0, epsrel=1e-12)
    return val


def diagnostics_csv(result: QuadResult) -> str:
    lines = ["# heatball quadrature diagnostics v1", "slice,t,R,partial,error_estimate"]
    lines += [f"{j},{t!r},{R!r},{p!r},{e!r}" for j, t, R, p, e in result.rows]
    return "\n".join(lines) + "\n"


# --- whole-space integrals against Phi ---------------------------------------

def gaussian_weighted_integral(f: Callable, X, T: float, t: float, M_dirs: int = 1024, seed: int = 0,
                               rtol: float = 1e-10) -> float:
    """``int_{R^n} f(x, t) Phi(x, t) dx`` in polar coordinates about ``X``.

    Radial Gauss-Legendre panels on ``[0, rho_max]`` (``rho_max`` where the
    Gaussian factor drops below ``1e-16``), doubled until two levels agree to
    ``rtol``; directions from a quasi-random sphere set.
    """
    X = np.asarray(X, dtype=float)
    n = X.size
    tau = T - t
    if not tau > 0:
        raise KernelDomainError("need t < T")
    rho_max = math.sqrt(4 * tau * 16 * math.log(10))
    dirs = sphere_points(n, M_dirs, seed)
    area = unit_sphere_area(n)
    gl_x, gl_w = np.polynomial.legendre.leggauss(16)
    # probe radially and stop where |f| Phi rho^(n-1) is negligible (compactly supported f)
    probe = np.linspace(0.0, rho_max, 129)[1:]
    pv = np.abs(np.asarray(f((X[None, None, :] + probe[:, None, None] * dirs[None, :, :]).reshape(-1, n), t),
                           dtype=float)).reshape(probe.size, -1).max(axis=1)
    pv *= np.exp(-probe ** 2 / (4 * tau)) * probe ** (n - 1)
    if pv.max() > 0:
        live = np.nonzero(pv > 1e-16 * pv.max())[0]
        rho_max = float(probe[min(live[-1] + 1, probe.size - 1)])

    def level(panels):
        edges = np.linspace(0.0, rho_max, panels + 1)
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            rho = 0.5 * (b - a) * gl_x + 0.5 * (b + a)
            wts = 0.5 * (b - a) * gl_w
            pts = (X[None, None, :] + rho[:, None, None] * dirs[None, :, :]).reshape(-1, n)
            vals = np.asarray(f(pts, t), dtype=float).reshape(rho.size, -1).mean(axis=1)
            radial = (4 * math.pi * tau) ** (-(n - 4) / 2) * np.exp(-rho ** 2 / (4 * tau)) * rho ** (n - 1)
            total += float((wts * radial * vals).sum())
        return area * total

    panels = 4
    prev = level(panels)
    while panels < 256:
        panels *= 2
        cur = level(panels)
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300):
            return cur
        prev = cur
    return prev


def check_homogeneity(f: Callable, X, T: float, n: int, seed: int = 0, count: int = 10,
                      rtol: float = 1e-6) -> float:
    """Spot-check ``f(X + s(x-X), T + s^2(t-T)) = s^-4 f(x, t)``; returns the worst relative defect."""
    rng = np.random.default_rng(seed)
    X = np.asarray(X, dtype=float)
    worst = 0.0
    for _ in range(count):
        x = X + rng.normal(size=n) * 0.5
        t = T - rng.uniform(0.05, 1.0)
        s = math.exp(rng.uniform(-1.0, 1.0))
        lhs = float(np.asarray(f((X + s * (x - X))[None, :], T + s * s * (t - T))).ravel()[0])
        rhs = float(np.asarray(f(x[None, :], t)).ravel()[0]) * s ** -4
        scale = max(abs(lhs), abs(rhs), 1e-300)
        worst = max(worst, abs(lhs - rhs) / scale if scale > 1e-300 else 0.0)
    if worst > rtol:
        raise HomogeneityError(f"function is not parabolically homogeneous of degree -4 (defect {worst:.3g})")
    return worst


def scaling_check(f: Callable, X, T: float, t: float, r: float, spec: QuadratureSpec = QuadratureSpec(),
                  check: bool = True):
    """Both sides of the heat-ball scaling identity for a degree ``-4`` homogeneous ``f``.

    ``lhs = int f Phi dx`` at time ``t``; ``rhs = r^-(n-4) iint_{E_r} f (n-4)/(2(T-s))``.
    Returns ``(lhs, rhs, rhs_error)``.
    """
    X = np.asarray(X, dtype=float)
    n = X.size
    _check_n(n)
    if check:
        check_homogeneity(f, X, T, n, seed=spec.seed)
    lhs = gaussian_weighted_integral(f, X, T, t, M_dirs=spec.M_ball, seed=spec.seed)
    ball = HeatBall(tuple(X), T, r)
    res = integrate(ball, lambda p, s: np.asarray(f(p, s), dtype=float) * (n - 4) / (2 * (T - s)), spec)
    scale = r ** (-(n - 4))
    return lhs, res.value * scale, res.error * scale


def _divergence(xi, pts, t, step):
    n = pts.shape[1]
    out = np.zeros(pts.shape[0])
    w = np.array([-1.0, 9.0, -45.0, 45.0, -9.0, 1.0]) / (60.0 * step)
    offs = (-3, -2, -1, 1, 2, 3)
    for k in range(n):
        e = np.zeros(n)
        e[k] = step
        for wi, o in zip(w, offs):
            out += wi * np.asarray(xi(pts + o * e, t))[k]
    return out


def ibp_check(xi: Callable, X, T: float, r: float, spec: QuadratureSpec = QuadratureSpec(),
              div: Callable | None = None):
    """Both sides of the heat-ball integration-by-parts identity.

    ``xi(points, t)`` returns ``(n, P)``.  ``lhs = iint_{E_r} div xi`` (divergence
    by sixth-order differences unless ``div`` is given); ``rhs = -(r/(n-4))
    d/dr iint_{E_r} xi.(x-X)/(2(t-T))`` with a central difference of step
    ``1e-3 r`` and a fixed slice count.  Returns ``(lhs, rhs, lhs_error)``.
    """
    X = np.asarray(X, dtype=float)
    n = X.size
    _check_n(n)
    ball = HeatBall(tuple(X), T, r)
    dfun = div or (lambda p, t: _divergence(xi, p, t, 1e-3 * max(r, 1e-12)))
    left = integrate(ball, dfun, spec)

    def moment(p, t):
        return np.einsum("kP,Pk->P", np.asarray(xi(p, t)), p - X) / (2.0 * (t - T))

    delta = 1e-3 * r
    J = left.slices
    up = integrate(HeatBall(tuple(X), T, r + delta), moment, spec, slices=J).value
    dn = integrate(HeatBall(tuple(X), T, r - delta), moment, spec, slices=J).value
    rhs = -(r / (n - 4)) * (up - dn) / (2 * delta)
    return left.value, rhs, left.error
