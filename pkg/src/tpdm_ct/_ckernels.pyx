# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, nonecheck=False
"""Compiled hot loops: ray-marched projection, FDK backprojection and the
pairwise reductions behind the empirical score.

Every output element is produced by one thread with a fixed summation order,
so results do not depend on the thread count or on how a batch is split.
"""

import numpy as np

from cython.parallel cimport prange
from libc.math cimport sqrt, floor, ceil, cos, sin, fmax, fmin

cdef enum:
    UNROLL = 8
    BLOCK = 8


cdef inline double _trilinear(const double[:, :, ::1] vol, int nx, int ny, int nz,
                              double fx, double fy, double fz) noexcept nogil:
    cdef int x0 = <int>floor(fx)
    cdef int y0 = <int>floor(fy)
    cdef int z0 = <int>floor(fz)
    cdef double ax = fx - x0
    cdef double ay = fy - y0
    cdef double az = fz - z0
    cdef double acc = 0.0
    cdef double wx, wy, wz
    cdef int dx, dy, dz, xi, yi, zi
    for dx in range(2):
        xi = x0 + dx
        if xi < 0 or xi >= nx:
            continue
        wx = ax if dx else 1.0 - ax
        for dy in range(2):
            yi = y0 + dy
            if yi < 0 or yi >= ny:
                continue
            wy = ay if dy else 1.0 - ay
            for dz in range(2):
                zi = z0 + dz
                if zi < 0 or zi >= nz:
                    continue
                wz = az if dz else 1.0 - az
                acc = acc + wx * wy * wz * vol[xi, yi, zi]
    return acc


cdef inline double _clip_axis(double s, double d, double lo, double hi,
                              double *tmin, double *tmax) noexcept nogil:
    cdef double t0, t1, tmp
    if d == 0.0:
        if s < lo or s > hi:
            tmin[0] = 1.0
            tmax[0] = 0.0
        return 0.0
    t0 = (lo - s) / d
    t1 = (hi - s) / d
    if t0 > t1:
        tmp = t0
        t0 = t1
        t1 = tmp
    tmin[0] = fmax(tmin[0], t0)
    tmax[0] = fmin(tmax[0], t1)
    return 0.0


cdef double _ray_integral(const double[:, :, ::1] vol, int nx, int ny, int nz,
                          double ox, double oy, double oz, double spacing,
                          double sx, double sy, double sz,
                          double dx, double dy, double dz, double step) noexcept nogil:
    cdef double tmin = 0.0
    cdef double tmax = 1e300
    # interpolation support extends one voxel beyond the outer centres
    _clip_axis(sx, dx, ox - spacing, ox + nx * spacing, &tmin, &tmax)
    _clip_axis(sy, dy, oy - spacing, oy + ny * spacing, &tmin, &tmax)
    _clip_axis(sz, dz, oz - spacing, oz + nz * spacing, &tmin, &tmax)
    if tmax <= tmin:
        return 0.0
    cdef double length = tmax - tmin
    cdef int ns = <int>ceil(length / step)
    if ns < 1:
        ns = 1
    cdef double h = length / ns
    cdef double acc = 0.0
    cdef double t, f
    cdef int m
    for m in range(ns + 1):
        t = tmin + m * h
        f = _trilinear(vol, nx, ny, nz,
                       (sx + t * dx - ox) / spacing,
                       (sy + t * dy - oy) / spacing,
                       (sz + t * dz - oz) / spacing)
        if m == 0 or m == ns:
            f = 0.5 * f
        acc = acc + f
    return acc * h


def forward_project(const double[:, :, ::1] vol, double ox, double oy, double oz,
                    double spacing, const double[::1] angles, double dso, double dsd,
                    int n_cols, int n_rows, double pixel, double step, int num_threads=1):
    """Line integrals for every detector pixel and angle, shape ``(n_cols, n_rows, n_angles)``."""
    cdef int nx = vol.shape[0]
    cdef int ny = vol.shape[1]
    cdef int nz = vol.shape[2]
    cdef int na = angles.shape[0]
    out = np.zeros((na, n_cols, n_rows), dtype=np.float64)
    cdef double[:, :, ::1] ov = out
    cdef int k, i, j
    cdef double c, s, sx, sy, px, py, pz, u, v, dx, dy, dz, norm
    for k in prange(na, nogil=True, num_threads=num_threads, schedule="static"):
        c = cos(angles[k])
        s = sin(angles[k])
        sx = dso * c
        sy = dso * s
        for i in range(n_cols):
            v = (i - (n_cols - 1) / 2.0) * pixel
            for j in range(n_rows):
                u = (j - (n_rows - 1) / 2.0) * pixel
                dx = -dsd * c - u * s
                dy = -dsd * s + u * c
                dz = v
                norm = sqrt(dx * dx + dy * dy + dz * dz)
                ov[k, i, j] = _ray_integral(vol, nx, ny, nz, ox, oy, oz, spacing,
                                            sx, sy, 0.0, dx / norm, dy / norm, dz / norm, step)
    return np.ascontiguousarray(np.moveaxis(out, 0, 2))


def backproject(const double[:, :, ::1] q_kij, double ox, double oy, double oz,
                double spacing, int nx, int ny, int nz, const double[::1] angles,
                double dso, double tau, int num_threads=1):
    """Distance-weighted voxel-driven backprojection of filtered projections.

    ``q_kij`` holds filtered data resampled to the virtual detector through
    the rotation axis with pixel pitch ``tau``. Returns the unscaled sum over
    angles of ``(dso/U)^2 * q``.
    """
    cdef int na = q_kij.shape[0]
    cdef int d1 = q_kij.shape[1]
    cdef int d2 = q_kij.shape[2]
    out = np.zeros((nx, ny, nz), dtype=np.float64)
    cdef double[:, :, ::1] ov = out
    cdef double[::1] cs = np.cos(np.asarray(angles))
    cdef double[::1] sn = np.sin(np.asarray(angles))
    cdef int ix, iy, iz, k, i0, j0
    cdef double x, y, z, U, mag, w, fj, fi, aj, ai, val, c0, c1
    cdef double ci = (d1 - 1) / 2.0
    cdef double cj = (d2 - 1) / 2.0
    for ix in prange(nx, nogil=True, num_threads=num_threads, schedule="static"):
        x = ox + ix * spacing
        for iy in range(ny):
            y = oy + iy * spacing
            for k in range(na):
                U = dso - (x * cs[k] + y * sn[k])
                mag = dso / U
                w = mag * mag
                fj = mag * (-x * sn[k] + y * cs[k]) / tau + cj
                j0 = <int>floor(fj)
                aj = fj - j0
                if j0 < -1 or j0 >= d2:
                    continue
                for iz in range(nz):
                    z = oz + iz * spacing
                    fi = mag * z / tau + ci
                    i0 = <int>floor(fi)
                    ai = fi - i0
                    if i0 < -1 or i0 >= d1:
                        continue
                    val = 0.0
                    if i0 >= 0:
                        c0 = q_kij[k, i0, j0] if j0 >= 0 else 0.0
                        c1 = q_kij[k, i0, j0 + 1] if j0 + 1 < d2 else 0.0
                        val = val + (1.0 - ai) * ((1.0 - aj) * c0 + aj * c1)
                    if i0 + 1 < d1:
                        c0 = q_kij[k, i0 + 1, j0] if j0 >= 0 else 0.0
                        c1 = q_kij[k, i0 + 1, j0 + 1] if j0 + 1 < d2 else 0.0
                        val = val + ai * ((1.0 - aj) * c0 + aj * c1)
                    ov[ix, iy, iz] += w * val
    return out


cdef inline double _sqdist(const double *a, const double *b, Py_ssize_t n) noexcept nogil:
    cdef double acc[UNROLL]
    cdef Py_ssize_t p, q
    cdef double d, total
    for q in range(UNROLL):
        acc[q] = 0.0
    p = 0
    while p + UNROLL <= n:
        for q in range(UNROLL):
            d = a[p + q] - b[p + q]
            acc[q] += d * d
        p += UNROLL
    while p < n:
        d = a[p] - b[p]
        acc[0] += d * d
        p += 1
    total = 0.0
    for q in range(UNROLL):
        total += acc[q]
    return total


cdef inline double _dot(const double *a, const double *b, Py_ssize_t n) noexcept nogil:
    cdef double acc[UNROLL]
    cdef Py_ssize_t p, q
    cdef double total
    for q in range(UNROLL):
        acc[q] = 0.0
    p = 0
    while p + UNROLL <= n:
        for q in range(UNROLL):
            acc[q] += a[p + q] * b[p + q]
        p += UNROLL
    while p < n:
        acc[0] += a[p] * b[p]
        p += 1
    total = 0.0
    for q in range(UNROLL):
        total += acc[q]
    return total


cdef inline void _axpy(double *out, double w, const double *x, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t p
    for p in range(n):
        out[p] += w * x[p]


def sq_distances(const double[:, ::1] X, const double[:, ::1] D, int num_threads=1):
    """``out[b, n] = ||X[b] - D[n]||^2``."""
    cdef Py_ssize_t B = X.shape[0]
    cdef Py_ssize_t N = D.shape[0]
    cdef Py_ssize_t P = X.shape[1]
    if D.shape[1] != P:
        raise ValueError("feature sizes differ")
    out = np.empty((B, N), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t nblocks = (B + BLOCK - 1) // BLOCK
    cdef Py_ssize_t blk, b, n, b_end
    for blk in prange(nblocks, nogil=True, num_threads=num_threads, schedule="static"):
        b_end = (blk + 1) * BLOCK
        if b_end > B:
            b_end = B
        for n in range(N):
            for b in range(blk * BLOCK, b_end):
                ov[b, n] = _sqdist(&X[b, 0], &D[n, 0], P)
    return out


def pairwise_dot(const double[:, ::1] X, const double[:, ::1] D, int num_threads=1):
    """``out[b, n] = X[b] . D[n]``."""
    cdef Py_ssize_t B = X.shape[0]
    cdef Py_ssize_t N = D.shape[0]
    cdef Py_ssize_t P = X.shape[1]
    if D.shape[1] != P:
        raise ValueError("feature sizes differ")
    out = np.empty((B, N), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t nblocks = (B + BLOCK - 1) // BLOCK
    cdef Py_ssize_t blk, b, n, b_end
    for blk in prange(nblocks, nogil=True, num_threads=num_threads, schedule="static"):
        b_end = (blk + 1) * BLOCK
        if b_end > B:
            b_end = B
        for n in range(N):
            for b in range(blk * BLOCK, b_end):
                ov[b, n] = _dot(&X[b, 0], &D[n, 0], P)
    return out


def weighted_sum(const double[:, ::1] W, const double[:, ::1] D, int num_threads=1):
    """``out[b] = sum_n W[b, n] * D[n]``, accumulated in order of ``n``.

    Exact-zero weights are skipped; at small noise levels most softmax
    weights underflow to zero so this is the common fast path.
    """
    cdef Py_ssize_t B = W.shape[0]
    cdef Py_ssize_t N = D.shape[0]
    cdef Py_ssize_t P = D.shape[1]
    if W.shape[1] != N:
        raise ValueError("weight and data counts differ")
    out = np.zeros((B, P), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t nblocks = (B + BLOCK - 1) // BLOCK
    cdef Py_ssize_t blk, b, n, p, b_end
    cdef double w
    for blk in prange(nblocks, nogil=True, num_threads=num_threads, schedule="static"):
        b_end = (blk + 1) * BLOCK
        if b_end > B:
            b_end = B
        for n in range(N):
            for b in range(blk * BLOCK, b_end):
                w = W[b, n]
                if w == 0.0:
                    continue
                _axpy(&ov[b, 0], w, &D[n, 0], P)
    return out
