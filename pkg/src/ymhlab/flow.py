"""Explicit time integration of the Yang-Mills-Higgs flow on the periodic lattice.

The semi-discrete right-hand side uses the same central differences as
:mod:`ymhlab.fields`; with that choice it is exactly minus the gradient of the
discrete energy ``sum_sites e h^n``, so a stable RK4 step decreases the
discrete energy.  The hot loop runs in compiled kernels; ``backend="reference"``
evaluates the identical formulas with the numpy field operators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .algebra import Representation
from .fields import (GaugeField, LatticeGeometry, Potential, ScalarFieldV, ZERO_POTENTIAL,
                     covariant_gradient, curvature, load_fields, save_fields, ymhe_fields)


class CFLViolation(ValueError):
    """Raised when a requested step exceeds the parabolic stability bound."""


class FlowAbort(RuntimeError):
    """Raised when the state stops being finite; carries the last good snapshot."""

    def __init__(self, message, last_good=None, step=None):
        super().__init__(message)
        self.last_good = last_good
        self.step = step


def max_stable_dt(geometry: LatticeGeometry, c_cfl: float = 0.5) -> float:
    return c_cfl * geometry.h ** 2 / (2 * geometry.n)


@dataclass
class FlowState:
    A: GaugeField
    u: ScalarFieldV
    t: float = 0.0

    def __post_init__(self):
        if self.A.geometry != self.u.geometry:
            raise ValueError("gauge and scalar field live on different lattices")
        if self.A.structure is not self.u.rep.structure and not np.array_equal(
                self.A.structure.structure_constants, self.u.rep.structure.structure_constants):
            raise ValueError("gauge field and representation use different structure data")

    @property
    def geometry(self) -> LatticeGeometry:
        return self.A.geometry

    @property
    def rep(self) -> Representation:
        return self.u.rep

    def copy(self) -> "FlowState":
        return FlowState(GaugeField(self.geometry, self.A.structure, self.A.data.copy()),
                         ScalarFieldV(self.geometry, self.rep, self.u.data.copy()), float(self.t))

    @classmethod
    def zero(cls, geometry, rep, t=0.0):
        return cls(GaugeField.zeros(geometry, rep.structure), ScalarFieldV.zeros(geometry, rep), t)

    @classmethod
    def vacuum(cls, geometry, rep, W: Potential, direction=None, t=0.0):
        """``A = 0`` and a constant ``u`` of length ``v`` (a Higgs equilibrium for quartic ``W``)."""
        d = np.zeros(rep.dim)
        d[0] = 1.0
        if direction is not None:
            d = np.asarray(direction, dtype=float)
        d = d / math.sqrt(float(rep.norm2(d)))
        v = W.zero_set()[0]
        return cls(GaugeField.zeros(geometry, rep.structure), ScalarFieldV.constant(geometry, rep, v * d), t)


def _sparse(T, tol=0.0):
    idx = np.argwhere(np.abs(T) > tol)
    cols = tuple(np.ascontiguousarray(idx[:, c], dtype=np.int64) for c in range(idx.shape[1]))
    return cols + (np.ascontiguousarray(T[tuple(idx.T)], dtype=float),)


class LatticeFlow:
    """Compiled evaluator of the flow right-hand side for one lattice/algebra/potential.

    Buffers for ``F``, ``Du``, ``e`` and the RK4 stages are allocated once and
    reused, so arrays handed to observers are only valid during the callback.
    """

    def __init__(self, geometry: LatticeGeometry, rep: Representation, potential: Potential = ZERO_POTENTIAL):
        self.geometry = geometry
        self.rep = rep
        self.structure = rep.structure
        self.potential = potential
        n, N = geometry.n, geometry.N
        self.dg, self.dV = self.structure.dim, rep.dim
        self.S = N ** n
        self.pairs = np.array(list(combinations(range(n), 2)), dtype=np.int64)
        self.pair_of = np.zeros((n, n), dtype=np.int64)
        for p, (i, j) in enumerate(self.pairs):
            self.pair_of[i, j] = self.pair_of[j, i] = p
        self.br = _sparse(self.structure.structure_constants)
        self.rp = _sparse(rep.generators)
        Kinv = np.linalg.inv(self.structure.killing_metric)
        odot = np.einsum("ka,jl,aji->kil", Kinv, rep.inner_product, rep.generators)
        self.od = _sparse(odot, tol=1e-15 * max(1.0, np.abs(odot).max()))
        self.K = np.ascontiguousarray(self.structure.killing_metric)
        self.M = np.ascontiguousarray(rep.inner_product)
        self.wkind = 1 if potential.kind == "quartic" else 0
        self.ptab = _kernels.plane_table(n, N)
        self.F = np.empty((len(self.pairs) * self.dg, self.S))
        self.Du = np.empty((n * self.dV, self.S))
        self.e = np.empty(self.S)
        self._stage = None

    # flat views ---------------------------------------------------------
    def flat_A(self, A: GaugeField) -> np.ndarray:
        return np.ascontiguousarray(A.data).reshape(self.geometry.n * self.dg, self.S)

    def flat_u(self, u: ScalarFieldV) -> np.ndarray:
        return np.ascontiguousarray(u.data).reshape(self.dV, self.S)

    def derived(self, A2, u2, want_e=True) -> float:
        """Fill ``self.F``, ``self.Du`` (and ``self.e``); return ``sum e``."""
        W = self.potential
        return _kernels.pass_curvature(A2, u2, self.F, self.Du, self.e, want_e, self.geometry.N,
                                       self.geometry.n, self.geometry.h, self.pairs, *self.br, *self.rp,
                                       self.K, self.M, self.wkind, float(W.lam), float(W.v), self.ptab)

    def velocity(self, A2, u2, out_dA, out_du) -> None:
        """``(dA, du)`` from the current ``self.F`` / ``self.Du``."""
        W = self.potential
        _kernels.pass_flow(A2, u2, self.F, self.Du, out_dA, out_du, self.geometry.N, self.geometry.n,
                           self.geometry.h, self.pair_of, *self.br, *self.rp, *self.od, self.M,
                           self.wkind, float(W.lam), float(W.v), self.ptab)

    def rhs(self, A2, u2, want_e=False):
        dA = np.empty_like(A2)
        du = np.empty_like(u2)
        total = self.derived(A2, u2, want_e)
        self.velocity(A2, u2, dA, du)
        return dA, du, total

    def unflatten(self, A2=None, u2=None):
        g = self.geometry
        out = []
        if A2 is not None:
            out.append(A2.reshape((g.n, self.dg) + g.shape))
        if u2 is not None:
            out.append(u2.reshape((self.dV,) + g.shape))
        return tuple(out)

    # time stepping --------------------------------------------------------
    def _buffers(self):
        if self._stage is None:
            shapeA = (self.geometry.n * self.dg, self.S)
            shapeu = (self.dV, self.S)
            self._stage = {k: (np.empty(shapeA), np.empty(shapeu)) for k in ("acc", "tmp", "k")}
        return self._stage

    def rk4_inplace(self, A2, u2, dt, k1=None):
        """Advance ``(A2, u2)`` in place by one classical RK4 step.

        ``k1`` may carry the already-evaluated first stage (as produced for the
        observers); otherwise it is computed here.
        """
        buf = self._buffers()
        accA, accu = buf["acc"]
        tmpA, tmpu = buf["tmp"]
        kA, ku = buf["k"]
        if k1 is None:
            self.derived(A2, u2, want_e=False)
            self.velocity(A2, u2, kA, ku)
            k1 = (kA, ku)
        _kernels.axpy_into(accA, A2, dt / 6.0, k1[0])
        _kernels.axpy_into(accu, u2, dt / 6.0, k1[1])
        _kernels.axpy_into(tmpA, A2, dt / 2.0, k1[0])
        _kernels.axpy_into(tmpu, u2, dt / 2.0, k1[1])
        for frac, weight in ((0.5, 1.0 / 3.0), (1.0, 1.0 / 3.0), (None, 1.0 / 6.0)):
            self.derived(tmpA, tmpu, want_e=False)
            self.velocity(tmpA, tmpu, kA, ku)
            _kernels.axpy_into(accA, accA, dt * weight, kA)
            _kernels.axpy_into(accu, accu, dt * weight, ku)
            if frac is not None:
                _kernels.axpy_into(tmpA, A2, dt * frac, kA)
                _kernels.axpy_into(tmpu, u2, dt * frac, ku)
        A2[...] = accA
        u2[...] = accu


_ENGINES: dict = {}


def engine_for(geometry: LatticeGeometry, rep: Representation, W: Potential) -> LatticeFlow:
    key = (geometry, id(rep), W)
    eng = _ENGINES.get(key)
    if eng is None or eng.rep is not rep:
        _ENGINES.clear()  # one lattice at a time keeps the buffers bounded
        eng = LatticeFlow(geometry, rep, W)
        _ENGINES[key] = eng
    return eng


def rhs(state: FlowState, W: Potential = ZERO_POTENTIAL, backend: str = "compiled"):
    """``(dA, du)`` of the flow, shaped like ``state.A.data`` and ``state.u.data``."""
    if backend == "reference":
        RA, Ru = ymhe_fields(state.A, state.u, W)
        return -RA, -Ru
    if backend != "compiled":
        raise ValueError(f"unknown backend {backend!r}")
    eng = engine_for(state.geometry, state.rep, W)
    dA, du, _ = eng.rhs(eng.flat_A(state.A), eng.flat_u(state.u))
    return eng.unflatten(dA, du)


def step(state: FlowState, W: Potential, dt: float, c_cfl: float = 0.5) -> FlowState:
    """One RK4 step; refuses ``dt`` above ``c_cfl h^2 / (2n)``."""
    limit = max_stable_dt(state.geometry, c_cfl)
    if not dt > 0:
        raise CFLViolation(f"dt must be positive, got {dt}")
    if dt > limit * (1 + 1e-12):
        raise CFLViolation(f"dt={dt:.6g} exceeds the stability bound {limit:.6g} (c_cfl={c_cfl})")
    eng = engine_for(state.geometry, state.rep, W)
    A2 = eng.flat_A(state.A).copy()
    u2 = eng.flat_u(state.u).copy()
    eng.rk4_inplace(A2, u2, dt)
    A, u = eng.unflatten(A2, u2)
    return FlowState(GaugeField(state.geometry, state.A.structure, A),
                     ScalarFieldV(state.geometry, state.rep, u), state.t + dt)


@dataclass(frozen=True)
class FlowConfig:
    potential: Potential = ZERO_POTENTIAL
    c_cfl: float = 0.5
    t_end: float = 0.0
    k_snap: int = 1
    seed: int = 0


@dataclass
class StepView:
    """Everything known at one time level; arrays are reused buffers (copy to keep)."""

    step: int
    t: float
    A: np.ndarray
    u: np.ndarray
    F: np.ndarray
    Du: np.ndarray
    e: np.ndarray
    dA: np.ndarray
    du: np.ndarray
    energy: float
    engine: LatticeFlow


@dataclass
class FlowRun:
    snapshots: list
    config: FlowConfig
    dt: float
    energy_trace: np.ndarray  # rows (step, t, E_total, max_e), one per time level
    snapshot_steps: list = field(default_factory=list)

    def __post_init__(self):
        times = [s.t for s in self.snapshots]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("snapshot times must increase strictly")

    @property
    def t_start(self) -> float:
        return self.snapshots[0].t

    @property
    def t_end(self) -> float:
        return self.snapshots[-1].t

    def energy_nonincreasing(self, rel_tol: float = 1e-10) -> tuple[bool, float]:
        """Worst relative increase ``(E(t+dt) - E(t)) / E(t)`` over all steps."""
        E = self.energy_trace[:, 2]
        if len(E) < 2:
            return True, 0.0
        scale = np.maximum(np.abs(E[:-1]), np.finfo(float).tiny)
        worst = float(np.max((E[1:] - E[:-1]) / scale))
        return worst <= rel_tol, worst

    def save(self, directory) -> None:
        """One binary file per snapshot plus ``manifest.txt``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        W = self.config.potential
        lines = ["# ymhlab flow run manifest v1",
                 f"potential_kind={W.kind}", f"potential_lambda={W.lam!r}", f"potential_v={W.v!r}",
                 f"c_cfl={float(self.config.c_cfl)!r}", f"t_end={float(self.config.t_end)!r}",
                 f"k_snap={self.config.k_snap}", f"seed={self.config.seed}", f"dt={float(self.dt)!r}",
                 f"snapshots={len(self.snapshots)}", "step,t,E_total,max_e"]
        by_step = {int(r[0]): r for r in self.energy_trace}
        for k, (st, snap) in enumerate(zip(self.snapshot_steps, self.snapshots)):
            save_fields(d / f"snapshot_{k:05d}.bin", [snap.A, snap.u], snap.t)
            r = by_step.get(int(st))
            E, me = (float(r[2]), float(r[3])) if r is not None else (float("nan"), float("nan"))
            lines.append(f"{int(st)},{float(snap.t)!r},{E!r},{me!r}")
        (d / "manifest.txt").write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, directory, rep: Representation) -> "FlowRun":
        d = Path(directory)
        text = (d / "manifest.txt").read_text().splitlines()
        kv = {}
        rows = []
        header_seen = False
        for line in text:
            if line.startswith("#") or not line.strip():
                continue
            if line.strip() == "step,t,E_total,max_e":
                header_seen = True
                continue
            if header_seen:
                rows.append([float(x) for x in line.split(",")])
            else:
                k, v = line.split("=", 1)
                kv[k] = v
        W = Potential(kv["potential_kind"], float(kv["potential_lambda"]), float(kv["potential_v"]))
        cfg = FlowConfig(W, float(kv["c_cfl"]), float(kv["t_end"]), int(kv["k_snap"]), int(kv["seed"]))
        snaps = []
        for k in range(int(kv["snapshots"])):
            (A, t), (u, _) = load_fields(d / f"snapshot_{k:05d}.bin", rep.structure, rep)
            snaps.append(FlowState(A, ScalarFieldV(A.geometry, rep, u.data), t))
        trace = np.array(rows) if rows else np.zeros((0, 4))
        return cls(snaps, cfg, float(kv["dt"]), trace, [int(r[0]) for r in rows])


Observer = Callable[[StepView], None]


def evolve(initial: FlowState, W: Potential, t_end: float, k_snap: int = 1, dt: float | None = None,
           c_cfl: float = 0.5, observers: Sequence[Observer] = (), seed: int = 0,
           abort_dir=None) -> FlowRun:
    """Integrate from ``initial.t`` to ``t_end`` with a uniform RK4 step.

    The step is the largest ``dt' <= dt`` (default: the CFL bound) that divides
    the interval evenly.  Snapshots are kept every ``k_snap`` steps plus the
    first and last; observers are called at every time level, final one
    included.  A non-finite energy aborts with :class:`FlowAbort`, persisting
    the last good snapshot to ``abort_dir`` when given.
    """
    if t_end < initial.t:
        raise ValueError("t_end precedes the initial time")
    if k_snap < 1:
        raise ValueError("k_snap must be >= 1")
    geom = initial.geometry
    limit = max_stable_dt(geom, c_cfl)
    dt_req = limit if dt is None else float(dt)
    if dt_req > limit * (1 + 1e-12):
        raise CFLViolation(f"dt={dt_req:.6g} exceeds the stability bound {limit:.6g} (c_cfl={c_cfl})")
    span = t_end - initial.t
    nsteps = 0 if span <= 0 else int(math.ceil(span / dt_req - 1e-9))
    dt_eff = span / nsteps if nsteps else 0.0
    config = FlowConfig(W, c_cfl, float(t_end), int(k_snap), int(seed))

    eng = engine_for(geom, initial.rep, W)
    A2 = eng.flat_A(initial.A).copy()
    u2 = eng.flat_u(initial.u).copy()
    kA = np.empty_like(A2)
    ku = np.empty_like(u2)
    snaps, snap_steps, trace = [], [], []

    def make_state(t):
        A, u = eng.unflatten(A2.copy(), u2.copy())
        return FlowState(GaugeField(geom, initial.A.structure, A), ScalarFieldV(geom, initial.rep, u), t)

    last_good = None
    for k in range(nsteps + 1):
        t = initial.t + k * dt_eff if k < nsteps else float(t_end)
        total = eng.derived(A2, u2, want_e=True)
        E = total * geom.cell_volume
        if not math.isfinite(E):
            if abort_dir is not None and last_good is not None:
                FlowRun([last_good], config, dt_eff, np.array(trace), [snap_steps[-1]]).save(abort_dir)
            raise FlowAbort(f"non-finite energy at step {k} (t={t:.6g})", last_good, k)
        eng.velocity(A2, u2, kA, ku)
        trace.append((k, t, E, float(eng.e.max())))
        if observers:
            view = StepView(k, t, A2, u2, eng.F, eng.Du, eng.e, kA, ku, E, eng)
            for obs in observers:
                obs(view)
        if k % k_snap == 0 or k == nsteps:
            snaps.append(make_state(t))
            snap_steps.append(k)
            last_good = snaps[-1]
        if k < nsteps:
            eng.rk4_inplace(A2, u2, dt_eff, k1=(kA, ku))
    return FlowRun(snaps, config, dt_eff, np.array(trace, dtype=float), snap_steps)


# --- self-similarity residuals and equilibria --------------------------------

def selfsim_from_fields(x_minus_X, t, T, F_full, dA, Du, du):
    """``S_j = dA_j + sum_k (x-X)^k F_kj / (2(t-T))`` and ``J = du + sum_k (x-X)^k Du_k / (2(t-T))``.

    ``x_minus_X`` is ``(n, ...)``; ``F_full`` is ``(n, n, dg, ...)`` (both
    orders filled); ``dA``/``Du`` are ``(n, dim, ...)``; ``du`` is ``(dV, ...)``.
    """
    if not t < T:
        raise ValueError("self-similarity residuals need t < T")
    w = np.asarray(x_minus_X) / (2.0 * (t - T))
    S = dA + np.einsum("k...,kja...->ja...", w, F_full)
    J = du + np.einsum("k...,ka...->a...", w, Du)
    return S, J


def full_curvature(F) -> np.ndarray:
    """Expand a :class:`CurvatureField` to ``(n, n, dg, ...)`` with both orders."""
    n = F.geometry.n
    out = np.zeros((n, n) + F.data.shape[1:])
    for i, j in combinations(range(n), 2):
        out[i, j] = F.get(i, j)
        out[j, i] = -out[i, j]
    return out


def selfsim_residuals(source, X, T, W: Potential = ZERO_POTENTIAL, t=None, points=None):
    """Self-similarity residuals ``(S, J)``.

    ``source`` is a :class:`FlowState` (``dA``/``du`` from the flow rhs, all
    lattice sites) or an analytic pair exposing ``evaluate(points, t)``
    (``points`` of shape ``(P, n)`` required).
    """
    X = np.asarray(X, dtype=float)
    if isinstance(source, FlowState):
        g = source.geometry
        if not source.t < T:
            raise ValueError("self-similarity residuals need t < T")
        F = full_curvature(curvature(source.A))
        Du = covariant_gradient(source.A, source.u)
        dA, du = rhs(source, W)
        xm = g.coords() - X.reshape((g.n,) + (1,) * g.n)
        return selfsim_from_fields(xm, source.t, T, F, dA, Du, du)
    if t is None or points is None:
        raise ValueError("analytic sources need t and points")
    ev = source.evaluate(np.asarray(points, dtype=float), t)
    xm = (np.asarray(points, dtype=float) - X).T
    return selfsim_from_fields(xm, t, T, ev.F, ev.dA_dt, ev.Du, ev.du_dt)


def higgs_equilibrium_check(state: FlowState, W: Potential, tol: float = 1e-8):
    """Parallel section with ``|u|`` in the zero set of a Higgs-like ``W``.

    The tolerance is scaled by ``max(1, max |u|^2)``.
    """
    u = state.u
    uu = u.rep.norm2(u.data)
    scale = max(1.0, float(uu.max()))
    Du = covariant_gradient(state.A, u)
    grad = float(np.sqrt(np.maximum(np.einsum("ij,ki...,kj...->k...", u.rep.inner_product, Du, Du), 0)).max())
    Wmax = float(np.abs(W.W(uu)).max())
    dWmax = float(np.abs(W.dW(uu)).max())
    diag = {"max_grad": grad, "max_W": Wmax, "max_dW": dWmax, "higgs_like": W.higgs_like,
            "tol": tol * scale}
    ok = W.higgs_like and grad <= tol * scale and Wmax <= tol * scale and dWmax <= tol * scale
    return bool(ok), diag


# --- seeded initial data ----------------------------------------------------

def gaussian_packets(geometry: LatticeGeometry, rep: Representation, seed: int = 0, amplitude: float = 0.2,
                     sigma: float | None = None, packets: int = 3, spread: float | None = None,
                     center=None, W: Potential = ZERO_POTENTIAL, higgs_amplitude: float = 0.0) -> FlowState:
    """Smooth seeded data: a few Gaussian packets in every ``A_i`` component.

    Packets have width ``sigma`` (default ``3h``) and centres within ``spread``
    (default ``h``) of ``center``.  ``amplitude`` is the typical size of
    ``sigma * |A|``.  With ``higgs_amplitude > 0`` and a quartic potential the
    scalar field is the vacuum ``v e_1 / |e_1|`` plus packets of that relative size.
    """
    rng = np.random.default_rng(seed)
    g = geometry
    sigma = 3 * g.h if sigma is None else sigma
    spread = g.h if spread is None else spread
    center = np.zeros(g.n) if center is None else np.asarray(center, dtype=float)
    x = g.coords()
    dg, dV = rep.structure.dim, rep.dim
    A = np.zeros((g.n, dg) + g.shape)
    u = np.zeros((dV,) + g.shape)
    for _ in range(packets):
        c = center + rng.uniform(-spread, spread, size=g.n)
        r2 = sum((x[i] - c[i]) ** 2 for i in range(g.n))
        bump = np.exp(-0.5 * r2 / sigma ** 2)
        coeff = rng.normal(size=(g.n, dg)) * amplitude / (sigma * math.sqrt(packets))
        A += np.einsum("ia,...->ia...", coeff, bump)
        if higgs_amplitude > 0:
            cu = rng.normal(size=dV) * higgs_amplitude / math.sqrt(packets)
            u += np.einsum("a,...->a...", cu, bump)
    if higgs_amplitude > 0:
        vev = W.zero_set()[0] if W.kind == "quartic" else 1.0
        e1 = np.zeros(dV)
        e1[0] = 1.0
        u += (vev / math.sqrt(float(rep.norm2(e1))) * e1).reshape((dV,) + (1,) * g.n)
    return FlowState(GaugeField(g, rep.structure, A), ScalarFieldV(g, rep, u), 0.0)
