"""Periodic lattice realisation of gauge fields, Higgs fields and their calculus.

Array layout (component axes first, spatial axes last):

* gauge field ``A``: ``(n, dim_g, N, ..., N)``, ``A.data[i]`` is ``A_i``
* scalar field ``u``: ``(dim_V, N, ..., N)``
* curvature ``F``: ``(n(n-1)/2, dim_g, N, ..., N)``, stored for ``i < j``

Spatial derivatives are second-order central differences on the torus.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .algebra import Representation, StructureData, dexp, batched_group_exp


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class LatticeGeometry:
    n: int
    N: int
    h: float
    origin: tuple = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 5:
            raise GeometryError(f"dimension n must be an integer > 4, got {self.n}")
        if int(self.N) != self.N or self.N < 8:
            raise GeometryError(f"N must be an integer >= 8, got {self.N}")
        if not self.h > 0:
            raise GeometryError(f"h must be positive, got {self.h}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "h", float(self.h))
        if self.origin is None:
            origin = (-0.5 * self.N * self.h,) * self.n
        else:
            origin = tuple(float(o) for o in np.broadcast_to(self.origin, (self.n,)))
        object.__setattr__(self, "origin", origin)

    @property
    def L(self) -> float:
        return self.N * self.h

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.n

    @property
    def cell_volume(self) -> float:
        return self.h ** self.n

    def axis(self, i: int) -> np.ndarray:
        return self.origin[i] + self.h * np.arange(self.N)

    def coords(self) -> np.ndarray:
        """Site coordinates, shape ``(n, N, ..., N)``."""
        return np.stack(np.meshgrid(*[self.axis(i) for i in range(self.n)], indexing="ij"))

    def centered_block(self, center, N: int | None = None) -> "LatticeGeometry":
        """A smaller lattice with the same spacing whose site ``N // 2`` sits on ``center``."""
        N = N or 8
        center = np.broadcast_to(np.asarray(center, dtype=float), (self.n,))
        return LatticeGeometry(self.n, N, self.h, tuple(center - (N // 2) * self.h))

    def refined(self, factor: int = 2) -> "LatticeGeometry":
        return LatticeGeometry(self.n, self.N * factor, self.h / factor, self.origin)

    def nearest_index(self, x) -> tuple:
        x = np.asarray(x, dtype=float)
        return tuple(int(round((x[i] - self.origin[i]) / self.h)) % self.N for i in range(self.n))


def pair_index(n: int) -> dict:
    return {p: k for k, p in enumerate(combinations(range(n), 2))}


@dataclass(frozen=True)
class Potential:
    """``W(s)`` for ``s = |u|^2``: zero, or quartic ``(lam/4)(s - v^2)^2``."""

    kind: str = "zero"
    lam: float = 0.0
    v: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "quartic"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.lam < 0 or self.v < 0:
            raise ValueError("potential parameters must be nonnegative")

    def W(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(s)
        return 0.25 * self.lam * (s - self.v ** 2) ** 2

    def dW(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(s)
        return 0.5 * self.lam * (s - self.v ** 2)

    def zero_set(self) -> tuple:
        """Nonnegative points of ``{x : W(x^2) = W'(x^2) = 0}``."""
        if self.kind == "zero":
            return (0.0,)  # every x qualifies; 0 is a representative
        return (self.v,)

    @property
    def higgs_like(self) -> bool:
        return len(self.zero_set()) > 0


ZERO_POTENTIAL = Potential()


@dataclass
class GaugeField:
    geometry: LatticeGeometry
    structure: StructureData
    data: np.ndarray

    def __post_init__(self):
        expected = (self.geometry.n, self.structure.dim) + self.geometry.shape
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != expected:
            raise GeometryError(f"gauge field shape {self.data.shape} != {expected}")

    @classmethod
    def zeros(cls, geometry, structure):
        return cls(geometry, structure, np.zeros((geometry.n, structure.dim) + geometry.shape))

    def __getitem__(self, i):
        return self.data[i]


@dataclass
class ScalarFieldV:
    geometry: LatticeGeometry
    rep: Representation
    data: np.ndarray

    def __post_init__(self):
        expected = (self.rep.dim,) + self.geometry.shape
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != expected:
            raise GeometryError(f"scalar field shape {self.data.shape} != {expected}")

    @classmethod
    def zeros(cls, geometry, rep):
        return cls(geometry, rep, np.zeros((rep.dim,) + geometry.shape))

    @classmethod
    def constant(cls, geometry, rep, value):
        value = np.asarray(value, dtype=float).reshape((rep.dim,) + (1,) * geometry.n)
        return cls(geometry, rep, np.broadcast_to(value, (rep.dim,) + geometry.shape).copy())


@dataclass
class CurvatureField:
    """``F_ij`` for ``i < j``; ``get(i, j)`` returns ``-F_ji`` when ``i > j``."""

    geometry: LatticeGeometry
    structure: StructureData
    data: np.ndarray
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self._index = pair_index(self.geometry.n)

    def get(self, i: int, j: int) -> np.ndarray:
        if i == j:
            return np.zeros(self.data.shape[1:])
        if i < j:
            return self.data[self._index[(i, j)]]
        return -self.data[self._index[(j, i)]]


def _stack_norm2(metric, X):
    """``sum_p |X[p]|^2`` for a stack ``X`` of shape ``(P, dim, ...)``."""
    return np.einsum("ab,pa...,pb...->...", metric, X, X, optimize=True)


def _check_same(*objs):
    geoms = {o.geometry for o in objs}
    if len(geoms) != 1:
        raise GeometryError("fields live on different lattices")


def partial(X: np.ndarray, i: int, geometry: LatticeGeometry) -> np.ndarray:
    """Central difference along spatial direction ``i`` (spatial axes are the trailing ones)."""
    axis = X.ndim - geometry.n + i
    return (np.roll(X, -1, axis=axis) - np.roll(X, 1, axis=axis)) / (2.0 * geometry.h)


def grad_cov_g(A: GaugeField, X: np.ndarray, i: int) -> np.ndarray:
    """``nabla_i X = d_i X + [A_i, X]`` for a g-valued lattice function ``X``."""
    X = np.asarray(X, dtype=float)
    if X.shape[-A.geometry.n:] != A.geometry.shape:
        raise GeometryError("g-valued function does not live on the gauge field's lattice")
    return partial(X, i, A.geometry) + A.structure.bracket(A.data[i], X)


def grad_cov_v(A: GaugeField, u: ScalarFieldV, i: int) -> np.ndarray:
    """``nabla-slash_i u = d_i u + A_i . u``."""
    _check_same(A, u)
    return partial(u.data, i, A.geometry) + u.rep.act(A.data[i], u.data)


def grad_cov_v_array(A: GaugeField, rep: Representation, v: np.ndarray, i: int) -> np.ndarray:
    return partial(v, i, A.geometry) + rep.act(A.data[i], v)


def curvature(A: GaugeField) -> CurvatureField:
    g = A.geometry
    out = np.empty((g.n * (g.n - 1) // 2, A.structure.dim) + g.shape)
    for k, (i, j) in enumerate(combinations(range(g.n), 2)):
        out[k] = (partial(A.data[j], i, g) - partial(A.data[i], j, g)
                  + A.structure.bracket(A.data[i], A.data[j]))
    return CurvatureField(g, A.structure, out)


def covariant_gradient(A: GaugeField, u: ScalarFieldV) -> np.ndarray:
    """All ``nabla-slash_i u`` stacked, shape ``(n, dim_V, ...)``."""
    return np.stack([grad_cov_v(A, u, i) for i in range(A.geometry.n)])


def bianchi_field(A: GaugeField, F: CurvatureField | None = None) -> np.ndarray:
    """``|nabla_i F_jk + nabla_j F_ki + nabla_k F_ij|_K`` maximised over triples, per site."""
    F = F or curvature(A)
    n = A.geometry.n
    worst = np.zeros(A.geometry.shape)
    for i, j, k in combinations(range(n), 3):
        cyc = (grad_cov_g(A, F.get(j, k), i) + grad_cov_g(A, F.get(k, i), j)
               + grad_cov_g(A, F.get(i, j), k))
        np.maximum(worst, np.sqrt(np.maximum(A.structure.norm2(cyc), 0.0)), out=worst)
    return worst


def bianchi_residual(A: GaugeField) -> float:
    return float(bianchi_field(A).max())


def energy_density(A: GaugeField, u: ScalarFieldV, W: Potential = ZERO_POTENTIAL,
                   F: CurvatureField | None = None, Du: np.ndarray | None = None) -> np.ndarray:
    """``e = (1/2)(sum_{i<j} |F_ij|^2 + sum_i |nabla-slash_i u|^2) + W(|u|^2)`` per site."""
    _check_same(A, u)
    F = F or curvature(A)
    Du = covariant_gradient(A, u) if Du is None else Du
    e = 0.5 * _stack_norm2(A.structure.killing_metric, F.data)
    e += 0.5 * _stack_norm2(u.rep.inner_product, Du)
    e += W.W(u.rep.norm2(u.data))
    return e


def total_energy(A, u, W=ZERO_POTENTIAL) -> float:
    return float(energy_density(A, u, W).sum() * A.geometry.cell_volume)


def ymhe_fields(A: GaugeField, u: ScalarFieldV, W: Potential = ZERO_POTENTIAL):
    """Residual fields of the Yang-Mills-Higgs equations.

    Returns ``(RA, Ru)`` with ``RA[j] = -sum_i nabla_i F_ij + u (.) nabla-slash_j u`` and
    ``Ru = -sum_i nabla-slash_i^2 u + 2 W'(|u|^2) u``.
    """
    _check_same(A, u)
    g = A.geometry
    F = curvature(A)
    Du = covariant_gradient(A, u)
    RA = np.empty_like(A.data)
    for j in range(g.n):
        acc = np.zeros_like(A.data[j])
        for i in range(g.n):
            if i != j:
                acc += grad_cov_g(A, F.get(i, j), i)
        RA[j] = -acc + u.rep.odot(u.data, Du[j])
    lap = np.zeros_like(u.data)
    for i in range(g.n):
        lap += grad_cov_v_array(A, u.rep, Du[i], i)
    Ru = -lap + 2.0 * W.dW(u.rep.norm2(u.data)) * u.data
    return RA, Ru


def ymhe_residual(A: GaugeField, u: ScalarFieldV, W: Potential = ZERO_POTENTIAL) -> tuple[float, float]:
    RA, Ru = ymhe_fields(A, u, W)
    ra = np.sqrt(np.maximum(_stack_norm2(A.structure.killing_metric, RA), 0.0)).max()
    ru = np.sqrt(np.maximum(u.rep.norm2(Ru), 0.0)).max()
    return float(ra), float(ru)


# --- identity residual fields (used by the convergence suite) -------------

def compat_g_field(A: GaugeField, X: np.ndarray, Y: np.ndarray, i: int) -> np.ndarray:
    """``d_i<X,Y> - <nabla_i X, Y> - <X, nabla_i Y>`` per site."""
    s = A.structure
    return (partial(s.inner(X, Y), i, A.geometry)
            - s.inner(grad_cov_g(A, X, i), Y) - s.inner(X, grad_cov_g(A, Y, i)))


def compat_v_field(A: GaugeField, u: ScalarFieldV, v: ScalarFieldV, i: int) -> np.ndarray:
    r = u.rep
    return (partial(r.inner(u.data, v.data), i, A.geometry)
            - r.inner(grad_cov_v(A, u, i), v.data) - r.inner(u.data, grad_cov_v(A, v, i)))


def commutator_field(A: GaugeField, u: ScalarFieldV, F: CurvatureField | None = None) -> np.ndarray:
    """Max over ``i < j`` of ``|(nabla-slash_i nabla-slash_j - nabla-slash_j nabla-slash_i) u - F_ij . u|``."""
    F = F or curvature(A)
    r = u.rep
    Du = covariant_gradient(A, u)
    worst = np.zeros(A.geometry.shape)
    for i, j in combinations(range(A.geometry.n), 2):
        res = (grad_cov_v_array(A, r, Du[j], i) - grad_cov_v_array(A, r, Du[i], j)
               - r.act(F.get(i, j), u.data))
        np.maximum(worst, np.sqrt(np.maximum(r.norm2(res), 0.0)), out=worst)
    return worst


# --- gauge transformations of lattice data ---------------------------------

def gauge_transform_lattice(xi: np.ndarray, A: GaugeField, u: ScalarFieldV):
    """Apply ``g = exp(xi)`` for a g-valued lattice field ``xi`` of shape ``(dim_g, ...)``.

    ``g.A_i = Ad_g A_i - (d_i g) g^-1`` with the right Maurer-Cartan form built from
    central differences of ``xi``; ``g.u = rho(g) u``.
    """
    _check_same(A, u)
    geom = A.geometry
    rho_g, Ad_g = batched_group_exp(xi, u.rep)
    newA = np.empty_like(A.data)
    for i in range(geom.n):
        mc = dexp(A.structure, xi, partial(xi, i, geom), side="right")
        newA[i] = np.einsum("...kb,b...->k...", Ad_g, A.data[i]) - mc
    newu = np.einsum("...ij,j...->i...", rho_g, u.data)
    return GaugeField(geom, A.structure, newA), ScalarFieldV(geom, u.rep, newu)


# --- binary field format ---------------------------------------------------

_KINDS = {"gauge": 0, "scalar": 1, "curvature": 2}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}
_HEADER = struct.Struct("<qqdqqd")


def write_field(fh, f, t: float = 0.0) -> None:
    """Write one field record: header ``(n, N, h, dim, kind, t)`` then site-major data.

    Integers are int64 and reals float64, all little-endian.  The payload is the
    row-major array indexed ``[site..., component...]``.
    """
    g = f.geometry
    if isinstance(f, GaugeField):
        kind, dim, comp_axes = "gauge", f.structure.dim, 2
    elif isinstance(f, ScalarFieldV):
        kind, dim, comp_axes = "scalar", f.rep.dim, 1
    elif isinstance(f, CurvatureField):
        kind, dim, comp_axes = "curvature", f.structure.dim, 2
    else:
        raise TypeError(f"cannot serialise {type(f).__name__}")
    fh.write(_HEADER.pack(g.n, g.N, g.h, dim, _KINDS[kind], float(t)))
    site_major = np.moveaxis(f.data, tuple(range(comp_axes)), tuple(range(-comp_axes, 0)))
    fh.write(np.ascontiguousarray(site_major, dtype="<f8").tobytes())


def read_field(fh, structure: StructureData | None = None, rep: Representation | None = None):
    """Inverse of :func:`write_field`; returns ``(field, t)``.

    The lattice origin is not part of the format; the default centred origin is used.
    """
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise EOFError("truncated field header")
    n, N, h, dim, kind, t = _HEADER.unpack(raw)
    geom = LatticeGeometry(n, N, h)
    kind = _KIND_NAMES[kind]
    if kind == "gauge":
        comp = (n, dim)
    elif kind == "scalar":
        comp = (dim,)
    else:
        comp = (n * (n - 1) // 2, dim)
    count = int(np.prod(geom.shape + comp))
    payload = fh.read(8 * count)
    if len(payload) != 8 * count:
        raise EOFError("truncated field payload")
    arr = np.frombuffer(payload, dtype="<f8").reshape(geom.shape + comp)
    data = np.moveaxis(arr, tuple(range(n, n + len(comp))), tuple(range(len(comp)))).copy()
    if kind == "gauge":
        if structure is None or structure.dim != dim:
            raise ValueError("matching StructureData required to read a gauge field")
        return GaugeField(geom, structure, data), t
    if kind == "scalar":
        if rep is None or rep.dim != dim:
            raise ValueError("matching Representation required to read a scalar field")
        return ScalarFieldV(geom, rep, data), t
    if structure is None or structure.dim != dim:
        raise ValueError("matching StructureData required to read a curvature field")
    return CurvatureField(geom, structure, data), t


def save_fields(path, fields, t: float = 0.0) -> None:
    with open(path, "wb") as fh:
        for f in fields:
            write_field(fh, f, t)


def load_fields(path, structure=None, rep=None) -> list:
    out = []
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    while buf.tell() < len(data):
        out.append(read_field(buf, structure, rep))
    return out
