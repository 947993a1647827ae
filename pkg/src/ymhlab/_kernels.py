"""Compiled lattice kernels for the flow right-hand side and for interpolation.

Lattice arrays are flattened to ``(components, sites)`` with sites in C order,
the same memory layout as the field classes.  The kernels sweep the lattice one
plane (the last two axes, ``N*N`` contiguous sites) at a time so the inner
loops run over contiguous memory and vectorise; neighbours along the leading
axes are whole planes found from a small periodic table, and the two in-plane
axes wrap explicitly.

The algebra enters only through sparse tables ``(index..., value)``, so the
kernels serve any structure data and representation.
"""
from __future__ import annotations

import numpy as np
from numba import njit


def plane_table(n: int, N: int) -> np.ndarray:
    """First site of the +1 / -1 neighbour plane along each leading axis.

    A plane is the ``N*N`` block spanned by the last two axes.  Returns
    ``(2*(n-2), N**(n-2))`` int64; entry ``[2*i, p]`` is the offset of the
    plane adjacent to plane ``p`` in the ``+`` direction of axis ``i``.
    """
    planes = np.arange(N ** (n - 2), dtype=np.int64).reshape((N,) * (n - 2))
    out = np.empty((2 * (n - 2), N ** (n - 2)), dtype=np.int64)
    for i in range(n - 2):
        out[2 * i] = np.roll(planes, -1, axis=i).ravel() * N * N
        out[2 * i + 1] = np.roll(planes, 1, axis=i).ravel() * N * N
    return out


@njit(cache=True, inline="always")
def _acc_diff(o, src, axis, n, base, ptab, pl, N, s):
    """``o[k] += s * (src[k + e_axis] - src[k - e_axis])`` over one plane (periodic).

    ``src`` is a 1-d component row; slicing keeps every index provably
    nonnegative so the loops vectorise.
    """
    B = N * N
    if axis < n - 2:
        bp = ptab[2 * axis, pl]
        bm = ptab[2 * axis + 1, pl]
        sp = src[bp:bp + B]
        sm = src[bm:bm + B]
        for k in range(B):
            o[k] += s * (sp[k] - sm[k])
    elif axis == n - 2:
        blk = src[base:base + B]
        for k in range(N):
            o[k] += s * (blk[k + N] - blk[B - N + k])
        for k in range(N, B - N):
            o[k] += s * (blk[k + N] - blk[k - N])
        for k in range(B - N, B):
            o[k] += s * (blk[k + N - B] - blk[k - N])
    else:
        blk = src[base:base + B]
        for y in range(N):
            r = y * N
            o[r] += s * (blk[r + 1] - blk[r + N - 1])
            for x in range(1, N - 1):
                o[r + x] += s * (blk[r + x + 1] - blk[r + x - 1])
            o[r + N - 1] += s * (blk[r] - blk[r + N - 2])


@njit(cache=True)
def pass_curvature(A, u, out_F, out_Du, out_e, want_e, N, n, h, pairs,
                   br_a, br_b, br_k, br_v, rep_a, rep_v, rep_w, rep_val,
                   K, M, wkind, lam, vev, ptab):
    """Fill ``F`` (npairs*dg, S) and ``Du`` (n*dV, S); optionally ``e`` (S,).

    ``A`` is (n*dg, S), ``u`` is (dV, S).  Returns the total of ``e`` summed
    plane by plane in site order (0.0 when ``want_e`` is false).
    """
    S = u.shape[1]
    dg = K.shape[0]
    dV = M.shape[0]
    npairs = pairs.shape[0]
    inv2h = 0.5 / h
    B = N * N
    eb = np.zeros(B)
    total = 0.0
    for pl in range(S // B):
        base = pl * B
        if want_e:
            eb[:] = 0.0
        for p in range(npairs):
            i = pairs[p, 0]
            j = pairs[p, 1]
            for a in range(dg):
                o = out_F[p * dg + a, base:base + B]
                o[:] = 0.0
                _acc_diff(o, A[j * dg + a], i, n, base, ptab, pl, N, inv2h)
                _acc_diff(o, A[i * dg + a], j, n, base, ptab, pl, N, -inv2h)
            for q in range(br_a.shape[0]):
                o = out_F[p * dg + br_k[q], base:base + B]
                xa = A[i * dg + br_a[q], base:base + B]
                xb = A[j * dg + br_b[q], base:base + B]
                v = br_v[q]
                for k in range(B):
                    o[k] += v * xa[k] * xb[k]
            if want_e:
                for a in range(dg):
                    fa = out_F[p * dg + a, base:base + B]
                    for b in range(dg):
                        kab = 0.5 * K[a, b]
                        if kab != 0.0:
                            fb = out_F[p * dg + b, base:base + B]
                            for k in range(B):
                                eb[k] += kab * fa[k] * fb[k]
        for i in range(n):
            for v in range(dV):
                o = out_Du[i * dV + v, base:base + B]
                o[:] = 0.0
                _acc_diff(o, u[v], i, n, base, ptab, pl, N, inv2h)
            for q in range(rep_a.shape[0]):
                o = out_Du[i * dV + rep_v[q], base:base + B]
                xa = A[i * dg + rep_a[q], base:base + B]
                uw = u[rep_w[q], base:base + B]
                val = rep_val[q]
                for k in range(B):
                    o[k] += val * xa[k] * uw[k]
            if want_e:
                for v in range(dV):
                    dv = out_Du[i * dV + v, base:base + B]
                    for w in range(dV):
                        mvw = 0.5 * M[v, w]
                        if mvw != 0.0:
                            dw = out_Du[i * dV + w, base:base + B]
                            for k in range(B):
                                eb[k] += mvw * dv[k] * dw[k]
        if want_e:
            if wkind == 1:
                for k in range(B):
                    uu = 0.0
                    for v in range(dV):
                        for w in range(dV):
                            uu += M[v, w] * u[v, base + k] * u[w, base + k]
                    eb[k] += 0.25 * lam * (uu - vev * vev) ** 2
            for k in range(B):
                out_e[base + k] = eb[k]
                total += eb[k]
    return total


@njit(cache=True)
def pass_flow(A, u, F, Du, out_dA, out_du, N, n, h, pair_of,
              br_a, br_b, br_k, br_v, rep_a, rep_v, rep_w, rep_val,
              od_k, od_v, od_w, od_val, M, wkind, lam, vev, ptab):
    """Fill ``dA`` (n*dg, S) and ``du`` (dV, S) from precomputed ``F`` and ``Du``.

    ``dA_j = sum_i nabla_i F_ij - u (.) Du_j`` and
    ``du = sum_i nabla-slash_i Du_i - 2 W'(|u|^2) u``.
    ``pair_of[i, j]`` is the storage slot of the unordered pair; the
    antisymmetry sign is applied here.
    """
    S = u.shape[1]
    dV = M.shape[0]
    dg = out_dA.shape[0] // n
    inv2h = 0.5 / h
    B = N * N
    for pl in range(S // B):
        base = pl * B
        for j in range(n):
            for k in range(dg):
                out_dA[j * dg + k, base:base + B] = 0.0
            for i in range(n):
                if i == j:
                    continue
                p = pair_of[i, j]
                sign = 1.0 if i < j else -1.0
                for a in range(dg):
                    _acc_diff(out_dA[j * dg + a, base:base + B], F[p * dg + a], i, n, base, ptab, pl, N,
                              sign * inv2h)
                for q in range(br_a.shape[0]):
                    o = out_dA[j * dg + br_k[q], base:base + B]
                    xa = A[i * dg + br_a[q], base:base + B]
                    fb = F[p * dg + br_b[q], base:base + B]
                    v = sign * br_v[q]
                    for k in range(B):
                        o[k] += v * xa[k] * fb[k]
            for q in range(od_k.shape[0]):
                o = out_dA[j * dg + od_k[q], base:base + B]
                uv = u[od_v[q], base:base + B]
                dw = Du[j * dV + od_w[q], base:base + B]
                val = od_val[q]
                for k in range(B):
                    o[k] -= val * uv[k] * dw[k]
        for v in range(dV):
            out_du[v, base:base + B] = 0.0
        for i in range(n):
            for v in range(dV):
                _acc_diff(out_du[v, base:base + B], Du[i * dV + v], i, n, base, ptab, pl, N, inv2h)
            for q in range(rep_a.shape[0]):
                o = out_du[rep_v[q], base:base + B]
                xa = A[i * dg + rep_a[q], base:base + B]
                dw = Du[i * dV + rep_w[q], base:base + B]
                val = rep_val[q]
                for k in range(B):
                    o[k] += val * xa[k] * dw[k]
        if wkind == 1:
            for k in range(B):
                uu = 0.0
                for v in range(dV):
                    for w in range(dV):
                        uu += M[v, w] * u[v, base + k] * u[w, base + k]
                dW = 2.0 * 0.5 * lam * (uu - vev * vev)
                for v in range(dV):
                    out_du[v, base + k] -= dW * u[v, base + k]


@njit(cache=True)
def axpy_into(out, x, a, y):
    """``out = x + a * y`` elementwise (contiguous arrays; ``out`` may alias ``x``)."""
    o = out.ravel()
    xs = x.ravel()
    ys = y.ravel()
    for k in range(o.shape[0]):
        o[k] = xs[k] + a * ys[k]


@njit(cache=True)
def multilinear(data, origin, h, shape, pts, out):
    """Multilinear interpolation of ``data`` (C, prod(shape)) at ``pts`` (P, n).

    ``origin`` is the coordinate of index 0 along each axis.  Points are clamped
    to the box (callers check coverage beforehand).  ``out`` is (P, C).
    """
    P = pts.shape[0]
    n = pts.shape[1]
    C = data.shape[0]
    strides = np.empty(n, np.int64)
    st = 1
    for i in range(n - 1, -1, -1):
        strides[i] = st
        st *= shape[i]
    base = np.empty(n, np.int64)
    frac = np.empty(n)
    ncorner = 1 << n
    for p in range(P):
        for c in range(C):
            out[p, c] = 0.0
        for i in range(n):
            x = (pts[p, i] - origin[i]) / h
            k = int(np.floor(x))
            if k < 0:
                k = 0
            if k > shape[i] - 2:
                k = shape[i] - 2
            base[i] = k
            frac[i] = x - k
        for corner in range(ncorner):
            w = 1.0
            idx = 0
            for i in range(n):
                bit = (corner >> i) & 1
                if bit:
                    w *= frac[i]
                else:
                    w *= 1.0 - frac[i]
                idx += (base[i] + bit) * strides[i]
            if w != 0.0:
                for c in range(C):
                    out[p, c] += w * data[c, idx]
