"""Hot inner loops.

Each kernel exists twice: a plain loop compiled with ``numba.njit`` and a
vectorised numpy equivalent. The module-level names (``pair_scatter``,
``inverse3``, ``wedge_apply``) are bound to one or the other at import time
according to :data:`hwmap._accel.USE_JIT`. Both variants are importable
directly (``*_jit`` / ``*_numpy``) so they can be compared and benchmarked.
"""
import numpy as np

from ._accel import USE_JIT, njit


# --------------------------------------------------------------------------
# bilinear pair scatter: out[(a + b) mod N] += m[a, b] * ua[a] * vb[b]


def _pair_scatter_loop(out, idx_a, idx_b, size, m, ua, vb):
    na = idx_a.shape[0]
    nb = idx_b.shape[0]
    ndim = idx_a.shape[1]
    for a in range(na):
        ca = ua[a]
        for b in range(nb):
            flat = 0
            for d in range(ndim):
                flat = flat * size + (idx_a[a, d] + idx_b[b, d]) % size
            out[flat] += m[a, b] * ca * vb[b]
    return out


pair_scatter_jit = njit(cache=False, error_model="numpy")(_pair_scatter_loop)


def pair_scatter_numpy(out, idx_a, idx_b, size, m, ua, vb):
    ndim = idx_a.shape[1]
    flat = np.zeros((idx_a.shape[0], idx_b.shape[0]), dtype=np.int64)
    for d in range(ndim):
        flat = flat * size + (idx_a[:, None, d] + idx_b[None, :, d]) % size
    vals = m * ua[:, None] * vb[None, :]
    flat = flat.ravel()
    vals = vals.ravel()
    out += np.bincount(flat, weights=vals.real, minlength=out.size)
    out += 1j * np.bincount(flat, weights=vals.imag, minlength=out.size)
    return out


# --------------------------------------------------------------------------
# batched 3x3 inverse with determinant


def _inverse3_loop(mats):
    npts = mats.shape[0]
    inv = np.empty_like(mats)
    det = np.empty(npts)
    for p in range(npts):
        a = mats[p]
        c00 = a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1]
        c01 = a[1, 2] * a[2, 0] - a[1, 0] * a[2, 2]
        c02 = a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]
        d = a[0, 0] * c00 + a[0, 1] * c01 + a[0, 2] * c02
        det[p] = d
        r = 1.0 / d
        inv[p, 0, 0] = c00 * r
        inv[p, 1, 0] = c01 * r
        inv[p, 2, 0] = c02 * r
        inv[p, 0, 1] = (a[0, 2] * a[2, 1] - a[0, 1] * a[2, 2]) * r
        inv[p, 1, 1] = (a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0]) * r
        inv[p, 2, 1] = (a[0, 1] * a[2, 0] - a[0, 0] * a[2, 1]) * r
        inv[p, 0, 2] = (a[0, 1] * a[1, 2] - a[0, 2] * a[1, 1]) * r
        inv[p, 1, 2] = (a[0, 2] * a[1, 0] - a[0, 0] * a[1, 2]) * r
        inv[p, 2, 2] = (a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]) * r
    return inv, det


inverse3_jit = njit(cache=False, error_model="numpy")(_inverse3_loop)


def inverse3_numpy(mats):
    # adjugate via row cross products: rows of inv^T are r1 x r2, r2 x r0, r0 x r1
    r0, r1, r2 = mats[:, 0, :], mats[:, 1, :], mats[:, 2, :]
    cof = np.stack([np.cross(r1, r2), np.cross(r2, r0), np.cross(r0, r1)], axis=1)
    det = np.einsum("pi,pi->p", r0, cof[:, 0, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.swapaxes(cof, 1, 2) / det[:, None, None]
    return inv, det


# --------------------------------------------------------------------------
# (a b^T - b a^T) @ U at every point


def _wedge_apply_loop(a, b, mats):
    npts = a.shape[0]
    out = np.zeros_like(mats)
    w = np.empty((3, 3))
    for p in range(npts):
        for i in range(3):
            for j in range(3):
                w[i, j] = a[p, i] * b[p, j] - b[p, i] * a[p, j]
        for i in range(3):
            for j in range(3):
                acc = 0.0
                for k in range(3):
                    acc += w[i, k] * mats[p, k, j]
                out[p, i, j] = acc
    return out


wedge_apply_jit = njit(cache=False, error_model="numpy")(_wedge_apply_loop)


def wedge_apply_numpy(a, b, mats):
    outer = a[:, :, None] * b[:, None, :]
    wedge = outer - np.swapaxes(outer, 1, 2)
    return np.einsum("pik,pkj->pij", wedge, mats)


if USE_JIT:
    pair_scatter = pair_scatter_jit
    inverse3 = inverse3_jit
    wedge_apply = wedge_apply_jit
else:
    pair_scatter = pair_scatter_numpy
    inverse3 = inverse3_numpy
    wedge_apply = wedge_apply_numpy

BACKEND = "numba" if USE_JIT else "numpy"
