"""Grid-free pairs ``(A, u)`` given by closures, for identity and self-similarity tests.

Closures take ``points`` of shape ``(P, n)`` and a time ``t`` and return arrays
with component axes first and the point axis last, mirroring the lattice layout:

* ``A(x, t)`` -> ``(n, dim_g, P)``; ``dA(x, t)[k, i]`` = ``d_k A_i``
* ``u(x, t)`` -> ``(dim_V, P)``; ``du(x, t)[k]`` = ``d_k u``
* ``dA_dt`` -> ``(n, dim_g, P)``; ``dA_dt_dx[l, i]`` = ``d_l d_t A_i``

Missing derivative closures fall back to sixth-order central differences with
step ``1e-3 * scale`` in space and ``1e-3 * scale**2`` in time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .algebra import Representation, StructureData, dexp, batched_group_exp
from .fields import (GaugeField, LatticeGeometry, Potential, ScalarFieldV, ZERO_POTENTIAL,
                     bianchi_field, commutator_field, compat_g_field, compat_v_field, curvature)

_FD6 = np.array([-1.0, 9.0, -45.0, 45.0, -9.0, 1.0]) / 60.0
_FD6_OFFSETS = np.array([-3, -2, -1, 1, 2, 3], dtype=float)


class ODEStepUnderflow(RuntimeError):
    """The ray integrator could not reach the requested tolerance."""


@dataclass
class PointFields:
    """Pair data at ``P`` points; ``F`` is stored for all ordered pairs ``(i, j)``."""

    A: np.ndarray
    u: np.ndarray
    F: np.ndarray
    Du: np.ndarray
    dA_dt: np.ndarray
    du_dt: np.ndarray
    e: np.ndarray
    W: np.ndarray


def _fd_spatial(fn, x, t, step):
    """Sixth-order gradient of ``fn`` -> ``(n, *fn_shape)``."""
    P, n = x.shape
    shifts = np.concatenate([x + (o * step) * np.eye(n)[k] for k in range(n) for o in _FD6_OFFSETS])
    vals = fn(shifts, t)
    vals = vals.reshape(vals.shape[:-1] + (n, 6, P))
    return np.moveaxis(np.einsum("...kmp,m->...kp", vals, _FD6 / step), -2, 0)


def _fd_time(fn, x, t, step):
    vals = [fn(x, t + o * step) for o in _FD6_OFFSETS]
    return sum(w * v for w, v in zip(_FD6 / step, vals))


@dataclass
class AnalyticPair:
    structure: StructureData
    rep: Representation
    n: int
    A: Callable
    u: Optional[Callable] = None
    dA: Optional[Callable] = None
    dA_dt: Optional[Callable] = None
    du: Optional[Callable] = None
    du_dt: Optional[Callable] = None
    dA_dt_dx: Optional[Callable] = None
    scale: float = 1.0
    potential: Potential = ZERO_POTENTIAL
    selfsimilar: Optional[tuple] = None  # (X, T) when self-similar by construction
    profile: object = None

    def _pts(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.n:
            raise ValueError(f"points must have shape (P, {self.n})")
        return x

    def eval_A(self, x, t):
        return np.asarray(self.A(self._pts(x), t), dtype=float)

    def eval_u(self, x, t):
        x = self._pts(x)
        if self.u is None:
            return np.zeros((self.rep.dim, x.shape[0]))
        return np.asarray(self.u(x, t), dtype=float)

    def grad_A(self, x, t):
        x = self._pts(x)
        if self.dA is not None:
            return np.asarray(self.dA(x, t), dtype=float)
        return _fd_spatial(self.eval_A, x, t, 1e-3 * self.scale)

    def dt_A(self, x, t):
        x = self._pts(x)
        if self.dA_dt is not None:
            return np.asarray(self.dA_dt(x, t), dtype=float)
        return _fd_time(self.eval_A, x, t, 1e-3 * self.scale ** 2)

    def grad_dt_A(self, x, t):
        x = self._pts(x)
        if self.dA_dt_dx is not None:
            return np.asarray(self.dA_dt_dx(x, t), dtype=float)
        return _fd_spatial(self.dt_A, x, t, 1e-3 * self.scale)

    def grad_u(self, x, t):
        x = self._pts(x)
        if self.u is None:
            return np.zeros((self.n, self.rep.dim, x.shape[0]))
        if self.du is not None:
            return np.asarray(self.du(x, t), dtype=float)
        return _fd_spatial(self.eval_u, x, t, 1e-3 * self.scale)

    def dt_u(self, x, t):
        x = self._pts(x)
        if self.u is None:
            return np.zeros((self.rep.dim, x.shape[0]))
        if self.du_dt is not None:
            return np.asarray(self.du_dt(x, t), dtype=float)
        return _fd_time(self.eval_u, x, t, 1e-3 * self.scale ** 2)

    def evaluate(self, points, t) -> PointFields:
        x = self._pts(points)
        A = self.eval_A(x, t)
        dA = self.grad_A(x, t)
        u = self.eval_u(x, t)
        du = self.grad_u(x, t)
        c = self.structure.structure_constants
        comm = np.einsum("abk,iaP,jbP->ijkP", c, A, A)
        F = dA - np.swapaxes(dA, 0, 1) + comm  # F[i, j] = d_i A_j - d_j A_i + [A_i, A_j]
        Du = du + np.einsum("avw,iaP,wP->ivP", self.rep.generators, A, u)
        return PointFields(A, u, F, Du, self.dt_A(x, t), self.dt_u(x, t),
                           pointwise_energy(self.structure, self.rep, self.potential, F, Du, u),
                           self.potential.W(np.einsum("vw,vP,wP->P", self.rep.inner_product, u, u)))


def pointwise_energy(structure, rep, W: Potential, F, Du, u):
    """``e`` from full-antisymmetric ``F`` (``(n, n, dg, P)``), ``Du`` and ``u``."""
    fsq = 0.25 * np.einsum("ab,ijaP,ijbP->P", structure.killing_metric, F, F)  # each pair counted twice
    dsq = 0.5 * np.einsum("vw,ivP,iwP->P", rep.inner_product, Du, Du)
    return fsq + dsq + W.W(np.einsum("vw,vP,wP->P", rep.inner_product, u, u))


def sample(pair: AnalyticPair, geometry: LatticeGeometry, t: float = 0.0):
    """Evaluate the closures at every lattice site."""
    if geometry.n != pair.n:
        raise ValueError("dimension mismatch between pair and lattice")
    pts = geometry.coords().reshape(geometry.n, -1).T
    A = pair.eval_A(pts, t).reshape((pair.n, pair.structure.dim) + geometry.shape)
    u = pair.eval_u(pts, t).reshape((pair.rep.dim,) + geometry.shape)
    return GaugeField(geometry, pair.structure, A), ScalarFieldV(geometry, pair.rep, u)


# --- parabolic rescaling and self-similar pairs ----------------------------

def rescale_pair(pair: AnalyticPair, r: float, X, T: float) -> AnalyticPair:
    """``A^r_i(x,t) = r A_i(X + r(x-X), T + r^2(t-T))``, ``u^r(x,t) = u(X + r(x-X), T + r^2(t-T))``."""
    if not r > 0:
        raise ValueError(f"rescaling factor must be positive, got {r}")
    X = np.asarray(X, dtype=float)

    def m(x):
        return X + r * (x - X)

    def mt(t):
        return T + r * r * (t - T)

    def wrap(fn, power):
        if fn is None:
            return None
        return lambda x, t: r ** power * fn(m(x), mt(t))

    return replace(pair, A=wrap(pair.A, 1), u=wrap(pair.u, 0), dA=wrap(pair.dA, 2),
                   dA_dt=wrap(pair.dA_dt, 3), du=wrap(pair.du, 1), du_dt=wrap(pair.du_dt, 2),
                   dA_dt_dx=wrap(pair.dA_dt_dx, 4), scale=pair.scale / r)


def _beta(s):
    """Normalised exponential bump ``exp(1 - 1/(1-s))`` on ``s < 1`` and its first two derivatives."""
    inside = s < 1.0
    si = np.where(inside, s, 0.0)
    d = 1.0 - si
    b = np.where(inside, np.exp(1.0 - 1.0 / d), 0.0)
    b1 = -b / d ** 2
    b2 = b * (1.0 / d ** 4 - 2.0 / d ** 3)
    return b, np.where(inside, b1, 0.0), np.where(inside, b2, 0.0)


@dataclass(frozen=True)
class BumpProfile:
    """``B_i(y) = beta(|y|^2/rho^2) (c_i + sum_k E_ik y_k)`` with algebra-valued coefficients.

    Smooth, supported in the ball of radius ``rho``; value, gradient and Hessian
    are exact.
    """

    const: np.ndarray   # (n, dg)
    linear: np.ndarray  # (n, n, dg): linear[i, k] multiplies y_k
    rho: float = 1.0

    @classmethod
    def random(cls, n: int, dg: int, seed: int = 0, rho: float = 1.0, amplitude: float = 1.0):
        rng = np.random.default_rng(seed)
        return cls(amplitude * rng.normal(size=(n, dg)), amplitude / rho * rng.normal(size=(n, n, dg)), rho)

    def _parts(self, y):
        s = (y * y).sum(axis=1) / self.rho ** 2
        b, b1, b2 = _beta(s)
        lin = self.const[:, :, None] + np.einsum("ika,Pk->iaP", self.linear, y)
        return s, b, b1, b2, lin

    def value(self, y):
        _, b, _, _, lin = self._parts(y)
        return lin * b

    def grad(self, y):
        """``(n_k, n_i, dg, P)`` with entry ``d_k B_i``."""
        _, b, b1, _, lin = self._parts(y)
        ds = 2.0 * y.T / self.rho ** 2  # (n, P)
        return (np.einsum("kP,iaP->kiaP", b1 * ds, lin)
                + np.einsum("ika,P->kiaP", self.linear, b))

    def hess(self, y):
        """``(n_l, n_k, n_i, dg, P)`` with entry ``d_l d_k B_i``."""
        _, b, b1, b2, lin = self._parts(y)
        n = y.shape[1]
        ds = 2.0 * y.T / self.rho ** 2
        d2s = 2.0 * np.eye(n) / self.rho ** 2
        second = np.einsum("lP,kP,P->lkP", ds, ds, b2) + np.einsum("lk,P->lkP", d2s, b1)
        out = np.einsum("lkP,iaP->lkiaP", second, lin)
        out += np.einsum("lP,ika->lkiaP", b1 * ds, self.linear)
        out += np.einsum("kP,ila->lkiaP", b1 * ds, self.linear)
        return out


def make_self_similar(profile: BumpProfile, X, T: float, structure: StructureData,
                      rep: Representation) -> AnalyticPair:
    """``A_i(x,t) = (T-t)^{-1/2} B_i((x-X)/(T-t)^{1/2})`` and ``u = 0``; exact derivatives."""
    X = np.asarray(X, dtype=float)
    n = X.size

    def tau_of(t):
        tau = T - t
        if not tau > 0:
            raise ValueError(f"self-similar pair is only defined for t < T (t={t}, T={T})")
        return tau

    def A(x, t):
        tau = tau_of(t)
        return profile.value((x - X) / math.sqrt(tau)) / math.sqrt(tau)

    def dA(x, t):
        tau = tau_of(t)
        return profile.grad((x - X) / math.sqrt(tau)) / tau

    def dA_dt(x, t):
        tau = tau_of(t)
        y = (x - X) / math.sqrt(tau)
        radial = profile.value(y) + np.einsum("kP,kiaP->iaP", y.T, profile.grad(y))
        return 0.5 * radial / tau ** 1.5

    def dA_dt_dx(x, t):
        tau = tau_of(t)
        y = (x - X) / math.sqrt(tau)
        out = 2.0 * profile.grad(y) + np.einsum("kP,lkiaP->liaP", y.T, profile.hess(y))
        return 0.5 * out / tau ** 2

    return AnalyticPair(structure, rep, n, A, None, dA, dA_dt, None, None, dA_dt_dx,
                        scale=profile.rho * math.sqrt(max(abs(T), 1.0)), selfsimilar=(X, float(T)),
                        profile=profile)


def selfsimilar_residual(pair: AnalyticPair, points, t, X, T):
    """Left sides of the self-similarity characterisation; ``(rA (n,dg,P), ru (dV,P))``."""
    x = pair._pts(points)
    w = (x - np.asarray(X, dtype=float)).T / (2.0 * (t - T))
    rA = pair.dt_A(x, t) + pair.eval_A(x, t) / (2.0 * (t - T)) + np.einsum("kP,kiaP->iaP", w, pair.grad_A(x, t))
    ru = pair.dt_u(x, t) + np.einsum("kP,kvP->vP", w, pair.grad_u(x, t))
    return rA, ru


# --- gauge transformations of analytic pairs --------------------------------

def gauge_transform_analytic(xi: Callable, dxi: Callable, pair: AnalyticPair) -> AnalyticPair:
    """Transform by the time-independent ``g(x) = exp(xi(x))``.

    ``xi(x)`` -> ``(dg, P)`` and ``dxi(x)`` -> ``(n, dg, P)`` are exact; the right
    Maurer-Cartan form ``(d_i g) g^-1`` comes from the ``dexp`` series.
    """
    s, rep = pair.structure, pair.rep

    def A(x, t):
        X = xi(x)
        rho_g, Ad_g = batched_group_exp(X, rep)
        base = pair.eval_A(x, t)
        dX = dxi(x)
        out = np.einsum("Pkb,ibP->ikP", Ad_g, base)
        for i in range(pair.n):
            out[i] -= dexp(s, X, dX[i], side="right")
        return out

    def u(x, t):
        rho_g, _ = batched_group_exp(xi(x), rep)
        return np.einsum("Pvw,wP->vP", rho_g, pair.eval_u(x, t))

    return AnalyticPair(s, rep, pair.n, A, u, scale=pair.scale, potential=pair.potential)


def pure_gauge(xi: Callable, dxi: Callable, n: int, structure: StructureData, rep: Representation,
               scale: float = 1.0) -> AnalyticPair:
    """``A_i = -(d_i g) g^-1`` and ``u = 0`` for ``g = exp(xi)``."""
    zero = AnalyticPair(structure, rep, n, lambda x, t: np.zeros((n, structure.dim, x.shape[0])),
                        scale=scale)
    return gauge_transform_analytic(xi, dxi, zero)


class RadialGaugePair(AnalyticPair):
    pass


@dataclass
class _RaySolution:
    H: np.ndarray      # (P, dg, dg)  Ad_g
    R: np.ndarray      # (P, dV, dV)  rho(g)
    xi: np.ndarray     # (P, n, dg)   (d_j g) g^-1
    zeta: np.ndarray   # (P, dg)      (d_t g) g^-1
    dzeta: np.ndarray  # (P, n, dg)   d_j zeta
    steps: int


def _ray_rhs(structure, rep, H, R, xi, node):
    """Derivatives along the ray for the augmented state, given node data."""
    alpha, dalpha, talpha, dtalpha = node
    adm = np.einsum("Pa,akb->Pkb", alpha, structure.ad_matrices)
    rhm = np.einsum("Pa,avw->Pvw", alpha, rep.generators)
    dH = H @ adm
    dR = R @ rhm
    Ad_t = np.einsum("Pkb,Pb->Pk", H, talpha)
    dxi = np.einsum("Pkb,Pjb->Pjk", H, dalpha)
    dzeta = Ad_t
    ddz = (np.einsum("abk,Pja,Pb->Pjk", structure.structure_constants, xi, Ad_t)
           + np.einsum("Pkb,Pjb->Pjk", H, dtalpha))
    return dH, dR, dxi, dzeta, ddz


def _ray_node(pair, x, t, X, lam):
    """``alpha = (x-X).A`` at ``X + lam (x-X)`` with its x- and t-derivatives."""
    d = x - X
    pts = X + lam * d
    A = pair.eval_A(pts, t)
    dA = pair.grad_A(pts, t)
    At = pair.dt_A(pts, t)
    dAt = pair.grad_dt_A(pts, t)
    alpha = np.einsum("Pk,kaP->Pa", d, A)
    dalpha = np.moveaxis(A, -1, 0) + lam * np.einsum("Pk,jkaP->Pja", d, dA)
    talpha = np.einsum("Pk,kaP->Pa", d, At)
    dtalpha = np.moveaxis(At, -1, 0) + lam * np.einsum("Pk,jkaP->Pja", d, dAt)
    return alpha, dalpha, talpha, dtalpha


def _rk4_ray(pair, x, t, X, steps):
    """Classical RK4 over ``steps`` uniform steps in the ray parameter."""
    s, rep = pair.structure, pair.rep
    P = x.shape[0]
    dg, dV, n = s.dim, rep.dim, pair.n
    state = [np.broadcast_to(np.eye(dg), (P, dg, dg)).copy(), np.broadcast_to(np.eye(dV), (P, dV, dV)).copy(),
             np.zeros((P, n, dg)), np.zeros((P, dg)), np.zeros((P, n, dg))]
    hstep = 1.0 / steps

    def f(st, node):
        return _ray_rhs(s, rep, st[0], st[1], st[2], node)

    n0 = _ray_node(pair, x, t, X, 0.0)
    for k in range(steps):
        nm = _ray_node(pair, x, t, X, (k + 0.5) * hstep)
        n1 = _ray_node(pair, x, t, X, (k + 1.0) * hstep)
        k1 = f(state, n0)
        k2 = f([a + 0.5 * hstep * b for a, b in zip(state, k1)], nm)
        k3 = f([a + 0.5 * hstep * b for a, b in zip(state, k2)], nm)
        k4 = f([a + hstep * b for a, b in zip(state, k3)], n1)
        state = [a + hstep / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
                 for a, b1, b2, b3, b4 in zip(state, k1, k2, k3, k4)]
        n0 = n1
    return state


def solve_rays(pair: AnalyticPair, x, t, X, tol: float = 1e-8, start: int = 8, max_steps: int = 8192):
    """Integrate ``d_s g = g A_radial`` from ``X`` to each point with RK4 step doubling.

    Alongside ``g`` the variational equations give ``(d_j g) g^-1`` and
    ``(d_t g) g^-1`` with its spatial derivatives, so the transformed pair has
    derivatives limited only by the ODE tolerance.  The accepted value is the
    Richardson combination of the last two levels; their scaled difference
    must be below ``tol``.
    """
    X = np.asarray(X, dtype=float)
    steps = start
    coarse = _rk4_ray(pair, x, t, X, steps)
    while True:
        fine = _rk4_ray(pair, x, t, X, 2 * steps)
        err = max(float((np.abs(a - b) / np.maximum(1.0, np.abs(b))).max(initial=0.0))
                  for a, b in zip(coarse, fine))
        if err <= tol:
            best = [b + (b - a) / 15.0 for a, b in zip(coarse, fine)]
            return _RaySolution(*best, steps=2 * steps)
        steps *= 2
        if 2 * steps > max_steps:
            raise ODEStepUnderflow(f"ray integration did not reach tol={tol} with {max_steps} steps (err={err:.3g})")
        coarse = fine


def radial_gauge(pair: AnalyticPair, X, tol: float = 1e-8) -> AnalyticPair:
    """Gauge-transform so that ``sum_i (x-X)^i A_i = 0``.

    The transformed closures come from the ray solution: ``A' = Ad_g A - (dg) g^-1``,
    ``F' = Ad_g F``, ``du'`` from ``rho(g)``, and
    ``d_t A'_j = Ad_g d_t A_j - d_j zeta - [A'_j, zeta]`` with ``zeta = (d_t g) g^-1``.
    """
    X = np.asarray(X, dtype=float)
    s, rep = pair.structure, pair.rep
    c = s.structure_constants

    def solved(x, t):
        return solve_rays(pair, x, t, X, tol)

    def A_of(x, t, sol=None):
        sol = sol or solved(x, t)
        return np.einsum("Pkb,ibP->ikP", sol.H, pair.eval_A(x, t)) - np.moveaxis(sol.xi, 0, -1)

    class _Radial(RadialGaugePair):
        def evaluate(self, points, t):
            x = self._pts(points)
            sol = solved(x, t)
            base = pair.evaluate(x, t)
            Anew = A_of(x, t, sol)
            F = np.einsum("Pkb,ijbP->ijkP", sol.H, base.F)
            u = np.einsum("Pvw,wP->vP", sol.R, base.u)
            Du = np.einsum("Pvw,iwP->ivP", sol.R, base.Du)
            zeta = sol.zeta.T
            dAt = (np.einsum("Pkb,ibP->ikP", sol.H, base.dA_dt) - np.moveaxis(sol.dzeta, 0, -1)
                   - np.einsum("abk,iaP,bP->ikP", c, Anew, zeta))
            dut = (np.einsum("avw,aP,wP->vP", rep.generators, zeta, u)
                   + np.einsum("Pvw,wP->vP", sol.R, base.du_dt))
            return PointFields(Anew, u, F, Du, dAt, dut, base.e, base.W)

        def evaluate_invariant(self, points, t):
            """Fields pulled back by ``g^-1`` pointwise (so only gauge-invariant
            combinations are meaningful): ``F``, ``Du``, ``u`` as in the original
            gauge and ``d_t A_j - nabla_j Z``, ``d_t u + Z.u`` with ``Z = g^-1 d_t g``.

            For a pair self-similar about ``(X, T)`` the ray solution is
            ``g(x,t) = G((x-X)/(T-t)^{1/2})``, which gives the closed form
            ``Z = sum_k (x-X)^k A_k / (2(T-t))``; no ODE is solved.  Otherwise the
            full transformed fields are returned.
            """
            ssim = pair.selfsimilar
            if ssim is None or not np.allclose(ssim[0], X):
                return self.evaluate(points, t)
            T = ssim[1]
            x = self._pts(points)
            base = pair.evaluate(x, t)
            d = (x - X).T
            A = base.A
            dA = pair.grad_A(x, t)
            Z = np.einsum("kP,kaP->aP", d, A) / (2.0 * (T - t))
            # d_j Z = (A_j + sum_k (x-X)^k d_j A_k) / (2(T-t))
            dZ = (A + np.einsum("kP,jkaP->jaP", d, dA)) / (2.0 * (T - t))
            covZ = dZ + np.einsum("abk,jaP,bP->jkP", c, A, Z)
            dAt = base.dA_dt - covZ
            dut = base.du_dt + np.einsum("avw,aP,wP->vP", rep.generators, Z, base.u)
            return PointFields(A, base.u, base.F, base.Du, dAt, dut, base.e, base.W)

    out = _Radial(s, rep, pair.n, lambda x, t: A_of(x, t),
                  (lambda x, t: np.einsum("Pvw,wP->vP", solved(x, t).R, pair.eval_u(x, t)))
                  if pair.u is not None else None,
                  scale=pair.scale, potential=pair.potential, selfsimilar=pair.selfsimilar,
                  profile=pair.profile)
    return out


def radial_component(pair: AnalyticPair, points, t, X):
    x = pair._pts(points)
    return np.einsum("Pk,kaP->aP", x - np.asarray(X, dtype=float), pair.eval_A(x, t))


# --- seeded band-limited test fields ----------------------------------------

def band_limited_pair(n: int, structure: StructureData, rep: Representation, L: float, seed: int = 0,
                      modes: int = 3, kmax: int = 3, amplitude: float = 1.0, center=None,
                      with_scalar: bool = True) -> AnalyticPair:
    """Few random Fourier modes (``|k| <= kmax``, Gaussian amplitudes) times a bump of radius ``L/4``.

    Every closure, including first derivatives, is exact.
    """
    rng = np.random.default_rng(seed)
    dg, dV = structure.dim, rep.dim
    center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    rho = L / 4.0

    def draw(comp):
        ks = []
        while len(ks) < modes:
            k = rng.integers(-kmax, kmax + 1, size=n)
            if 0 < np.linalg.norm(k) <= kmax:
                ks.append(k)
        return (2 * np.pi / L * np.array(ks, dtype=float), rng.uniform(0, 2 * np.pi, size=modes),
                amplitude * rng.normal(size=(modes,) + comp) / math.sqrt(modes))

    def make(spec):
        kv, ph, amp = spec

        def val(x):
            s = ((x - center) ** 2).sum(axis=1) / rho ** 2
            b = _beta(s)[0]
            ph_x = x @ kv.T + ph  # (P, modes)
            wave = np.einsum("Pm,m...->...P", np.cos(ph_x), amp)
            return wave * b

        def grad(x):
            s = ((x - center) ** 2).sum(axis=1) / rho ** 2
            b, b1, _ = _beta(s)
            ph_x = x @ kv.T + ph
            wave = np.einsum("Pm,m...->...P", np.cos(ph_x), amp)
            dwave = -np.einsum("Pm,mk,m...->k...P", np.sin(ph_x), kv, amp)
            ds = (2.0 * (x - center) / rho ** 2).T  # (n, P)
            return dwave * b + np.einsum("kP,...P->k...P", ds * b1, wave)

        return val, grad

    Aval, Agrad = make(draw((n, dg)))
    if with_scalar:
        uval, ugrad = make(draw((dV,)))
        u, du = (lambda x, t: uval(x)), (lambda x, t: ugrad(x))
        zero_v = lambda x, t: np.zeros((dV, x.shape[0]))
    else:
        u = du = zero_v = None
    zero_A = lambda x, t: np.zeros((n, dg, x.shape[0]))
    zero_dA = lambda x, t: np.zeros((n, n, dg, x.shape[0]))
    return AnalyticPair(structure, rep, n, lambda x, t: Aval(x), u, lambda x, t: Agrad(x), zero_A, du, zero_v,
                        zero_dA, scale=rho)


def band_limited_algebra_field(n: int, structure: StructureData, L: float, seed: int = 0, modes: int = 3,
                               amplitude: float = 1.0, center=None, kmax: int = 3):
    """Closures ``(xi, dxi)`` for a g-valued band-limited function (used for gauge tests)."""
    from .algebra import adjoint_representation  # local: only the algebra dimension matters

    rep = adjoint_representation(structure)
    p = band_limited_pair(n, structure, rep, L, seed, modes, kmax=kmax, amplitude=amplitude, center=center)
    return (lambda x: p.u(x, 0.0)), (lambda x: p.du(x, 0.0))


def periodic_algebra_field(n: int, structure: StructureData, L: float, seed: int = 0, modes: int = 3,
                           kmax: int = 1, amplitude: float = 1.0):
    """Closures ``(xi, dxi)`` for a sum of plane waves with wave vectors in ``(2 pi / L) Z^n``.

    No bump: the field is exactly periodic on a box of side ``L`` and every
    derivative is bounded by ``amplitude (2 pi kmax / L)^k``, so lattice
    samples of it converge cleanly.
    """
    rng = np.random.default_rng(seed)
    ks = []
    while len(ks) < modes:
        k = rng.integers(-kmax, kmax + 1, size=n)
        if 0 < np.linalg.norm(k) <= kmax:
            ks.append(k)
    kv = 2 * np.pi / L * np.array(ks, dtype=float)
    ph = rng.uniform(0, 2 * np.pi, size=modes)
    amp = amplitude * rng.normal(size=(modes, structure.dim)) / math.sqrt(modes)

    def xi(x):
        return np.einsum("Pm,ma->aP", np.cos(x @ kv.T + ph), amp)

    def dxi(x):
        return -np.einsum("Pm,mk,ma->kaP", np.sin(x @ kv.T + ph), kv, amp)

    return xi, dxi


# --- convergence suite for the pointwise identities --------------------------

IDENTITY_NAMES = ("bianchi", "metric_g", "curvature_commutator", "metric_v")


def identity_block_residuals(pair: AnalyticPair, other: AnalyticPair, center, h: float, core: int = 2,
                             stride: int = 1, halo: int = 2) -> dict:
    """Max residual of the four pointwise identities over a block of sites.

    The pair is sampled on a small block lattice of spacing ``h`` around
    ``center``; sites within ``halo`` of the block edge (where the periodic
    wrap of the block pollutes the stencils) are excluded.  The residual is
    maximised over every ``stride``-th site of a ``core * stride`` core, i.e.
    over ``center + (k - core/2) h stride`` for ``k < core``, so blocks at
    ``h`` (stride 1) and ``h/2`` (stride 2) compare the same points.
    ``other`` supplies the second g- and V-valued functions.
    """
    n = pair.n
    width = core * stride
    N = max(8, width + 2 * halo)
    pad = (N - width) // 2
    origin = np.asarray(center, dtype=float) - (width // 2 + pad) * h
    geom = LatticeGeometry(n, N, h, tuple(origin))
    A, u = sample(pair, geom)
    B, v = sample(other, geom)
    sl = (slice(pad, pad + width, stride),) * n
    F = curvature(A)
    return {
        "bianchi": float(bianchi_field(A, F)[sl].max()),
        "metric_g": max(float(np.abs(compat_g_field(A, B.data[0], B.data[1], i)[sl]).max()) for i in range(n)),
        "curvature_commutator": float(commutator_field(A, u, F)[sl].max()),
        "metric_v": max(float(np.abs(compat_v_field(A, u, v, i)[sl]).max()) for i in range(n)),
    }


def identity_convergence(pair, other, center, h: float, core: int = 2) -> dict:
    """Residuals at ``h`` and ``h/2`` on common sites and the observed convergence orders."""
    coarse = identity_block_residuals(pair, other, center, h, core, 1)
    fine = identity_block_residuals(pair, other, center, h / 2, core, 2)
    out = {}
    for name in IDENTITY_NAMES:
        rc, rf = coarse[name], fine[name]
        order = math.log2(rc / rf) if rc > 0 and rf > 0 else float("nan")
        out[name] = {"coarse": rc, "fine": rf, "order": order}
    return out
