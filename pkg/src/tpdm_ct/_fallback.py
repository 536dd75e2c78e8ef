"""Pure-numpy versions of the compiled kernels in ``_ckernels.pyx``.

Same signatures and semantics; results agree with the compiled path to
floating-point tolerance, not bit-for-bit.
"""

import numpy as np
from scipy.ndimage import map_coordinates


def _trilinear_zero(vol, fx, fy, fz):
    pad = np.pad(vol, 1)
    coords = np.stack([fx + 1.0, fy + 1.0, fz + 1.0])
    return map_coordinates(pad, coords, order=1, mode="constant", cval=0.0, prefilter=False)


def forward_project(vol, ox, oy, oz, spacing, angles, dso, dsd, n_cols, n_rows, pixel, step, num_threads=1):
    vol = np.ascontiguousarray(vol, dtype=np.float64)
    nx, ny, nz = vol.shape
    angles = np.asarray(angles, dtype=np.float64)
    v = (np.arange(n_cols) - (n_cols - 1) / 2.0) * pixel
    u = (np.arange(n_rows) - (n_rows - 1) / 2.0) * pixel
    vv, uu = np.meshgrid(v, u, indexing="ij")
    vv, uu = vv.ravel(), uu.ravel()
    origin = np.array([ox, oy, oz])
    lo = origin - spacing
    hi = origin + np.array([nx, ny, nz]) * spacing
    out = np.zeros((n_cols * n_rows, angles.size))
    for k, th in enumerate(angles):
        c, s = np.cos(th), np.sin(th)
        src = np.array([dso * c, dso * s, 0.0])
        d = np.stack([-dsd * c - uu * s, -dsd * s + uu * c, vv], axis=1)
        d /= np.sqrt((d * d).sum(axis=1))[:, None]
        tmin = np.zeros(d.shape[0])
        tmax = np.full(d.shape[0], 1e300)
        for ax in range(3):
            da = d[:, ax]
            nz_ = da != 0.0
            with np.errstate(divide="ignore", invalid="ignore"):
                t0 = (lo[ax] - src[ax]) / da
                t1 = (hi[ax] - src[ax]) / da
            a = np.where(nz_, np.minimum(t0, t1), -np.inf)
            b = np.where(nz_, np.maximum(t0, t1), np.inf)
            outside = (~nz_) & ((src[ax] < lo[ax]) | (src[ax] > hi[ax]))
            a[outside] = 1.0
            b[outside] = 0.0
            tmin = np.maximum(tmin, a)
            tmax = np.minimum(tmax, b)
        hit = tmax > tmin
        length = np.where(hit, tmax - tmin, 0.0)
        ns = np.maximum(np.ceil(length / step).astype(np.int64), 1)
        h = length / ns
        mmax = int(ns[hit].max()) if hit.any() else 0
        m = np.arange(mmax + 1)
        for idx in np.array_split(np.flatnonzero(hit), max(1, int(hit.sum()) // 1024)):
            if idx.size == 0:
                continue
            t = tmin[idx, None] + m[None, :] * h[idx, None]
            valid = m[None, :] <= ns[idx, None]
            pts = src[None, None, :] + t[..., None] * d[idx, None, :]
            f = _trilinear_zero(
                vol,
                ((pts[..., 0] - ox) / spacing).ravel(),
                ((pts[..., 1] - oy) / spacing).ravel(),
                ((pts[..., 2] - oz) / spacing).ravel(),
            ).reshape(t.shape)
            wgt = valid.astype(np.float64)
            wgt[:, 0] = 0.5
            wgt[np.arange(idx.size), ns[idx]] = 0.5
            out[idx, k] = (f * wgt).sum(axis=1) * h[idx]
    return out.reshape(n_cols, n_rows, angles.size)


def backproject(q_kij, ox, oy, oz, spacing, nx, ny, nz, angles, dso, tau, num_threads=1):
    q_kij = np.asarray(q_kij, dtype=np.float64)
    na, d1, d2 = q_kij.shape
    x = ox + spacing * np.arange(nx)
    y = oy + spacing * np.arange(ny)
    z = oz + spacing * np.arange(nz)
    X, Y = np.meshgrid(x, y, indexing="ij")
    out = np.zeros((nx, ny, nz))
    ci, cj = (d1 - 1) / 2.0, (d2 - 1) / 2.0
    for k, th in enumerate(np.asarray(angles)):
        c, s = np.cos(th), np.sin(th)
        U = dso - (X * c + Y * s)
        mag = dso / U
        fj = mag * (-X * s + Y * c) / tau + cj
        fi = mag[..., None] * z[None, None, :] / tau + ci
        fj3 = np.broadcast_to(fj[..., None], fi.shape)
        pad = np.pad(q_kij[k], 1)
        val = map_coordinates(
            pad, np.stack([fi.ravel() + 1.0, fj3.ravel() + 1.0]),
            order=1, mode="constant", cval=0.0, prefilter=False,
        ).reshape(fi.shape)
        out += (mag * mag)[..., None] * val
    return out


def sq_distances(X, D, num_threads=1):
    X = np.asarray(X, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    d2 = (X * X).sum(1)[:, None] + (D * D).sum(1)[None, :] - 2.0 * X @ D.T
    return np.maximum(d2, 0.0)


def pairwise_dot(X, D, num_threads=1):
    return np.asarray(X, dtype=np.float64) @ np.asarray(D, dtype=np.float64).T


def weighted_sum(W, D, num_threads=1):
    return np.asarray(W, dtype=np.float64) @ np.asarray(D, dtype=np.float64)
