"""Projection compositing and FDK reconstruction for full circular scans."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import kernels
from .geometry import ConeBeamGeometry, GeometryError, ProjectionStack, Volume, VolumeGrid

__all__ = ["composite", "ramp_response", "ramp_filter", "fdk", "save_orthoslices", "DIFF_WINDOW"]

EDGE_EXTEND = 16
WINDOWS = ("ramlak", "hann")
DIFF_WINDOW = (-0.04, 0.07)


def composite(original: ProjectionStack, inpainted: ProjectionStack, mask) -> ProjectionStack:
    """Copy inpainted values into the original stack where ``mask`` is set."""
    m = mask.data if isinstance(mask, ProjectionStack) else np.asarray(mask, dtype=np.float64)
    if not (original.data.shape == inpainted.data.shape == m.shape):
        raise ValueError("original, inpainted and mask shapes differ")
    out = np.where(m != 0, inpainted.data, original.data)
    return original.replace(data=out)


def _pad_length(n: int) -> int:
    return 1 << int(math.ceil(math.log2(2 * n)))


def ramp_response(n: int, tau: float, window: str = "hann") -> np.ndarray:
    """Frequency response (length ``n``) of the band-limited ramp for sample spacing ``tau``.

    Built from the closed-form spatial Ram-Lak kernel ``h[0] = 1/(4 tau^2)``,
    ``h[odd] = -1/(pi n tau)^2``, so the DC gain is the small finite-length
    value of that kernel rather than an exact zero.
    """
    if window not in WINDOWS:
        raise ValueError(f"window must be one of {WINDOWS}")
    k = np.arange(n)
    k = np.minimum(k, n - k)
    h = np.zeros(n)
    h[0] = 1.0 / (4.0 * tau * tau)
    odd = k % 2 == 1
    h[odd] = -1.0 / (math.pi * k[odd] * tau) ** 2
    H = np.real(np.fft.fft(h)) * tau
    if window == "hann":
        f = np.abs(np.fft.fftfreq(n))
        H *= 0.5 * (1.0 + np.cos(2.0 * math.pi * f))
    return H


def ramp_filter(rows: np.ndarray, tau: float, window: str = "hann", extend: int = EDGE_EXTEND) -> np.ndarray:
    """Ramp-filter along the last axis after constant-extending each row by ``extend``."""
    rows = np.asarray(rows, dtype=np.float64)
    n = rows.shape[-1]
    width = [(0, 0)] * (rows.ndim - 1) + [(extend, extend)]
    ext = np.pad(rows, width, mode="edge") if extend else rows
    L = _pad_length(ext.shape[-1])
    H = ramp_response(L, tau, window)
    spec = np.fft.rfft(ext, n=L, axis=-1) * H[: L // 2 + 1]
    out = np.fft.irfft(spec, n=L, axis=-1)
    return np.ascontiguousarray(out[..., extend : extend + n])


def fdk(stack: ProjectionStack, g: ConeBeamGeometry, grid: VolumeGrid, window: str = "hann") -> Volume:
    """Feldkamp-Davis-Kress reconstruction of a full-turn line-integral stack."""
    if stack.domain_tag != "line-integral":
        raise ValueError("fdk expects a line-integral stack")
    if stack.data.shape != g.shape:
        raise ValueError("stack shape does not match geometry")
    if g.n_angles < 2:
        raise GeometryError("fdk needs at least 2 angles")
    if not g.is_uniform():
        raise GeometryError("fdk needs uniformly spaced angles over a full turn")
    # work on a virtual detector through the isocentre
    tau = g.pixel_size * g.dso / g.dsd
    a = (np.arange(g.n_cols) - (g.n_cols - 1) / 2.0) * tau
    b = (np.arange(g.n_rows) - (g.n_rows - 1) / 2.0) * tau
    cosw = g.dso / np.sqrt(g.dso**2 + a[:, None] ** 2 + b[None, :] ** 2)
    p = np.moveaxis(stack.data, 2, 0) * cosw[None]
    q = ramp_filter(p, tau, window)
    ox, oy, oz = grid.origin
    nx, ny, nz = grid.shape
    vol = kernels.backproject(
        np.ascontiguousarray(q), float(ox), float(oy), float(oz), float(grid.spacing),
        int(nx), int(ny), int(nz), np.ascontiguousarray(g.angles), float(g.dso), float(tau),
    )
    vol *= (2.0 * math.pi / g.n_angles) / 2.0
    return Volume(grid, vol, "mu")


def save_orthoslices(vol: np.ndarray, path: str | Path, window: tuple[float, float] | None = None,
                     cmap: str = "gray", title: str | None = None) -> None:
    """Write the central axial, coronal and sagittal slices side by side as a PNG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    v = np.asarray(vol)
    cx, cy, cz = (s // 2 for s in v.shape)
    views = [v[:, :, cz].T, v[:, cy, :].T, v[cx, :, :].T]
    lo, hi = window if window is not None else (float(v.min()), float(v.max()))
    fig, axes = plt.subplots(1, 3, figsize=(9, 3.2))
    for ax, img, name in zip(axes, views, ("axial", "coronal", "sagittal")):
        ax.imshow(img, cmap=cmap, vmin=lo, vmax=hi, origin="lower")
        ax.set_title(name, fontsize=9)
        ax.axis("off")
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
