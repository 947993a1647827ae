"""Finite-dimensional Lie algebra kernel.

Elements of the Lie algebra and of the representation space are plain numpy
arrays whose *leading* axis holds the coefficients in a fixed basis; any
trailing axes are batch axes (lattice sites, quadrature points, ...).  This is
the same layout used by the lattice fields, so every routine here applies
unchanged to whole fields.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_VALIDATION_TOL = 1e-12
_EXPM_TAIL = 1e-14


class AlgebraError(ValueError):
    """Raised when structure data or representation data is invalid."""


def _check_leading(x: np.ndarray, dim: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[0] != dim:
        raise AlgebraError(f"{what}: expected leading axis of length {dim}, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class StructureData:
    """Structure constants ``c[a, b, k]`` with ``[e_a, e_b] = sum_k c[a, b, k] e_k``.

    The negative Killing form ``K[a, b] = -tr(ad_a ad_b)`` is derived at
    construction and the whole invariant suite (antisymmetry, Jacobi,
    positivity of ``K``, ad-invariance) is checked.
    """

    structure_constants: np.ndarray
    killing_metric: np.ndarray = field(init=False, repr=False)
    ad_matrices: np.ndarray = field(init=False, repr=False)
    _kinv: np.ndarray = field(init=False, repr=False)
    _nonzero: tuple = field(init=False, repr=False)

    def __post_init__(self):
        c = np.array(self.structure_constants, dtype=float)
        if c.ndim != 3 or len(set(c.shape)) != 1:
            raise AlgebraError(f"structure constants must be a cube, got shape {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "structure_constants", c)
        # (ad_a)_{kb} = c[a, b, k]
        ad = np.transpose(c, (0, 2, 1)).copy()
        ad.setflags(write=False)
        object.__setattr__(self, "ad_matrices", ad)
        K = -np.einsum("akm,bmk->ab", ad, ad)
        K.setflags(write=False)
        object.__setattr__(self, "killing_metric", K)
        nz = np.argwhere(np.abs(c) > 0)
        object.__setattr__(self, "_nonzero", tuple((int(a), int(b), int(k), float(c[a, b, k])) for a, b, k in nz))
        residuals = self.invariant_residuals()
        bad = {k: v for k, v in residuals.items() if v > _VALIDATION_TOL * max(1.0, np.abs(c).max() ** 3)}
        if bad:
            raise AlgebraError(f"structure constants violate invariants: {bad}")
        try:
            np.linalg.cholesky(K)
        except np.linalg.LinAlgError as exc:
            raise AlgebraError("negative Killing form is not positive definite") from exc
        kinv = np.linalg.inv(K)
        kinv.setflags(write=False)
        object.__setattr__(self, "_kinv", kinv)

    @property
    def dim(self) -> int:
        return self.structure_constants.shape[0]

    def invariant_residuals(self) -> dict[str, float]:
        """Max-abs residuals of antisymmetry, Jacobi, symmetry of K and ad-invariance."""
        c = self.structure_constants
        K = self.killing_metric
        anti = np.abs(c + np.transpose(c, (1, 0, 2))).max()
        jac = (np.einsum("abm,mdk->abdk", c, c)
               + np.einsum("bdm,mak->abdk", c, c)
               + np.einsum("dam,mbk->abdk", c, c))
        # <[x,y],z> = <x,[y,z]> on basis triples
        lhs = np.einsum("abm,mc->abc", c, K)
        rhs = np.einsum("bcm,am->abc", c, K)
        return {
            "antisymmetry": float(anti),
            "jacobi": float(np.abs(jac).max()),
            "killing_symmetry": float(np.abs(K - K.T).max()),
            "ad_invariance": float(np.abs(lhs - rhs).max()),
        }

    def bracket(self, x, y) -> np.ndarray:
        x = _check_leading(x, self.dim, "bracket")
        y = _check_leading(y, self.dim, "bracket")
        out = np.zeros(np.broadcast_shapes(x.shape, y.shape))
        for a, b, k, v in self._nonzero:
            out[k] += v * x[a] * y[b]
        return out

    def inner(self, x, y) -> np.ndarray:
        """Negative Killing form ``x^T K y`` (batched over trailing axes)."""
        x = _check_leading(x, self.dim, "killing_inner")
        y = _check_leading(y, self.dim, "killing_inner")
        return np.einsum("ab,a...,b...->...", self.killing_metric, x, y)

    def norm2(self, x) -> np.ndarray:
        return self.inner(x, x)

    def ad(self, x) -> np.ndarray:
        """Matrix of ``ad_x`` acting on coefficient vectors, shape (dim, dim, ...)."""
        x = _check_leading(x, self.dim, "ad")
        return np.einsum("a...,akb->kb...", x, self.ad_matrices)

    def raise_index(self, w) -> np.ndarray:
        """Solve ``K z = w``; turns a covector into an algebra element."""
        w = _check_leading(w, self.dim, "raise_index")
        return np.einsum("ka,a...->k...", self._kinv, w)

    @classmethod
    def from_table(cls, path_or_text) -> "StructureData":
        """Load from rows ``a b k value`` (1-based indices, ``#`` comments allowed).

        Only the listed entries are set; antisymmetric partners must be listed
        explicitly, which keeps the table an honest record of the data.
        """
        text = path_or_text
        if isinstance(path_or_text, Path) or (isinstance(path_or_text, str) and "\n" not in path_or_text
                                               and Path(path_or_text).exists()):
            text = Path(path_or_text).read_text()
        rows = []
        for raw in str(text).splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise AlgebraError(f"bad structure-constant row: {raw!r}")
            a, b, k = (int(p) for p in parts[:3])
            rows.append((a, b, k, float(parts[3])))
        if not rows:
            raise AlgebraError("empty structure-constant table")
        dim = max(max(a, b, k) for a, b, k, _ in rows)
        c = np.zeros((dim, dim, dim))
        for a, b, k, v in rows:
            if min(a, b, k) < 1:
                raise AlgebraError("structure-constant indices are 1-based")
            c[a - 1, b - 1, k - 1] = v
        return cls(c)

    def to_table(self) -> str:
        lines = ["# a b k value"]
        for a, b, k, v in self._nonzero:
            lines.append(f"{a + 1} {b + 1} {k + 1} {v!r}")
        return "\n".join(lines) + "\n"


def su2() -> StructureData:
    """su(2) in the basis with ``[e_a, e_b] = eps_abk e_k``; Killing metric ``2 I``."""
    eps = np.zeros((3, 3, 3))
    for a, b, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        eps[a, b, k] = 1.0
        eps[b, a, k] = -1.0
    return StructureData(eps)


@dataclass(frozen=True)
class Representation:
    """Infinitesimal action ``e_a -> generators[a]`` on an inner-product space V."""

    structure: StructureData
    generators: np.ndarray
    inner_product: np.ndarray

    def __post_init__(self):
        gens = np.array(self.generators, dtype=float)
        ip = np.array(self.inner_product, dtype=float)
        dg = self.structure.dim
        if gens.ndim != 3 or gens.shape[0] != dg or gens.shape[1] != gens.shape[2]:
            raise AlgebraError(f"generators must have shape ({dg}, dV, dV), got {gens.shape}")
        if ip.shape != gens.shape[1:]:
            raise AlgebraError("inner product does not match generator size")
        gens.setflags(write=False)
        ip.setflags(write=False)
        object.__setattr__(self, "generators", gens)
        object.__setattr__(self, "inner_product", ip)
        scale = max(1.0, np.abs(gens).max() ** 2) * max(1.0, np.abs(ip).max())
        for name, res in self.invariant_residuals().items():
            if res > _VALIDATION_TOL * scale:
                raise AlgebraError(f"representation violates {name}: residual {res:.3e}")
        try:
            np.linalg.cholesky(ip)
        except np.linalg.LinAlgError as exc:
            raise AlgebraError("V inner product is not positive definite") from exc

    @property
    def dim(self) -> int:
        return self.generators.shape[1]

    def invariant_residuals(self) -> dict[str, float]:
        g = self.generators
        c = self.structure.structure_constants
        comm = np.einsum("aij,bjk->abik", g, g) - np.einsum("bij,ajk->abik", g, g)
        expected = np.einsum("abk,kij->abij", c, g)
        M = self.inner_product
        skew = np.einsum("aji,jk->aik", g, M) + np.einsum("ij,ajk->aik", M, g)
        return {
            "commutation": float(np.abs(comm - expected).max()),
            "skew_adjointness": float(np.abs(skew).max()),
            "inner_symmetry": float(np.abs(M - M.T).max()),
        }

    def act(self, x, v) -> np.ndarray:
        """``x . v = sum_a x_a rho(e_a) v``."""
        x = _check_leading(x, self.structure.dim, "rho_act")
        v = _check_leading(v, self.dim, "rho_act")
        return np.einsum("a...,aij,j...->i...", x, self.generators, v)

    def inner(self, v, w) -> np.ndarray:
        v = _check_leading(v, self.dim, "V inner")
        w = _check_leading(w, self.dim, "V inner")
        return np.einsum("ij,i...,j...->...", self.inner_product, v, w)

    def norm2(self, v) -> np.ndarray:
        return self.inner(v, v)

    def odot(self, u1, u2) -> np.ndarray:
        """The algebra element ``z`` with ``<x, z> = <x . u1, u2>`` for every ``x``."""
        u1 = _check_leading(u1, self.dim, "odot")
        u2 = _check_leading(u2, self.dim, "odot")
        w = np.einsum("jk,aji,i...,k...->a...", self.inner_product, self.generators, u1, u2, optimize=True)
        return self.structure.raise_index(w)

    def matrix(self, x) -> np.ndarray:
        """``rho_*(x)`` as a (dV, dV, ...) array."""
        x = _check_leading(x, self.structure.dim, "rho matrix")
        return np.einsum("a...,aij->ij...", x, self.generators)


def adjoint_representation(structure: StructureData) -> Representation:
    """V = g with the Killing inner product; ``x . v = [x, v]``."""
    return Representation(structure, structure.ad_matrices, structure.killing_metric)


def expm(M: np.ndarray, tail: float = _EXPM_TAIL) -> np.ndarray:
    """Matrix exponential of a stack ``(..., d, d)`` by scaling and squaring.

    The Taylor series of ``M / 2**s`` is summed until the next term drops below
    ``tail`` in max norm (``s`` is chosen so the scaled norm is at most 1/2).
    """
    M = np.asarray(M, dtype=float)
    d = M.shape[-1]
    norm = np.abs(M).sum(axis=-1).max() if M.size else 0.0
    s = 0 if norm <= 0.5 else int(np.ceil(np.log2(norm / 0.5)))
    X = M / 2.0 ** s
    eye = np.broadcast_to(np.eye(d), M.shape)
    result = eye.copy()
    term = eye.copy()
    for k in range(1, 60):
        term = term @ X / k
        result = result + term
        if np.abs(term).max(initial=0.0) < tail:
            break
    for _ in range(s):
        result = result @ result
    return result


@dataclass(frozen=True)
class GroupElement:
    """``exp(x)`` realised in V (``matrix``) and on g (``ad_matrix`` = Ad)."""

    matrix: np.ndarray
    ad_matrix: np.ndarray

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        return GroupElement(self.matrix @ other.matrix, self.ad_matrix @ other.ad_matrix)

    def act_algebra(self, x) -> np.ndarray:
        return self.ad_matrix @ np.asarray(x, dtype=float)

    def act_vector(self, v) -> np.ndarray:
        return self.matrix @ np.asarray(v, dtype=float)


def group_exp(x, rep: Representation) -> GroupElement:
    x = _check_leading(x, rep.structure.dim, "group_exp")
    if x.ndim != 1:
        raise AlgebraError("group_exp takes a single algebra element; use batched_group_exp for fields")
    rho = np.einsum("a,aij->ij", x, rep.generators)
    adx = np.einsum("a,aij->ij", x, rep.structure.ad_matrices)
    return GroupElement(expm(rho), expm(adx))


def batched_group_exp(xi: np.ndarray, rep: Representation) -> tuple[np.ndarray, np.ndarray]:
    """Exponentiate an algebra field ``(dim_g, ...)``.

    Returns ``(rho_g, Ad_g)`` with shapes ``(..., dV, dV)`` and ``(..., dg, dg)``.
    """
    xi = _check_leading(xi, rep.structure.dim, "batched_group_exp")
    rho = np.einsum("a...,aij->...ij", xi, rep.generators)
    adx = np.einsum("a...,aij->...ij", xi, rep.structure.ad_matrices)
    return expm(rho), expm(adx)


def dexp(structure: StructureData, xi: np.ndarray, dxi: np.ndarray, side: str = "right",
         tol: float = 1e-16) -> np.ndarray:
    """Trivialised derivative of ``exp``.

    ``side='right'`` gives ``(d e^xi) e^-xi = sum_k ad_xi^k dxi / (k+1)!``;
    ``side='left'`` gives ``e^-xi (d e^xi) = sum_k (-ad_xi)^k dxi / (k+1)!``.
    """
    sign = 1.0 if side == "right" else -1.0
    term = np.array(dxi, dtype=float)
    out = term.copy()
    scale = max(np.abs(out).max(initial=0.0), 1e-300)
    for k in range(1, 80):
        term = sign * structure.bracket(xi, term) / (k + 1)
        out = out + term
        if np.abs(term).max(initial=0.0) < tol * scale:
            break
    return out
