"""Linear-interpolation inpainting of implant traces, one projection at a time."""

from __future__ import annotations

import numpy as np
from scipy.interpolate import LinearNDInterpolator
from scipy.ndimage import binary_dilation
from scipy.spatial import QhullError, cKDTree

from .geometry import ProjectionStack

__all__ = ["li_inpaint", "li_inpaint_slice"]

BAND = 3
STRIDE = 4


def _known_points(mask: np.ndarray, full_density: bool) -> np.ndarray:
    known = mask == 0
    if full_density:
        return np.argwhere(known)
    band = binary_dilation(mask.astype(bool), iterations=BAND)
    grid = np.zeros_like(known)
    grid[::STRIDE, ::STRIDE] = True
    return np.argwhere(known & (band | grid))


def li_inpaint_slice(img: np.ndarray, mask: np.ndarray, full_density: bool = False) -> np.ndarray:
    """Fill ``mask == 1`` pixels of a 2D image by barycentric interpolation."""
    img = np.asarray(img, dtype=np.float64)
    mask = np.asarray(mask)
    if img.shape != mask.shape or img.ndim != 2:
        raise ValueError("image and mask must be 2D arrays of equal shape")
    out = img.copy()
    holes = np.argwhere(mask != 0)
    if holes.size == 0:
        return out
    if np.count_nonzero(mask == 0) < 3:
        raise ValueError("fewer than 3 known pixels in slice")
    pts = _known_points(mask, full_density)
    vals = img[pts[:, 0], pts[:, 1]]
    try:
        filled = LinearNDInterpolator(pts.astype(np.float64), vals)(holes.astype(np.float64))
    except QhullError:
        # collinear known pixels: no triangulation exists
        filled = np.full(len(holes), np.nan)
    miss = np.isnan(filled)
    if miss.any():
        allpts = np.argwhere(mask == 0)
        _, idx = cKDTree(allpts).query(holes[miss])
        near = allpts[idx]
        filled[miss] = img[near[:, 0], near[:, 1]]
    out[holes[:, 0], holes[:, 1]] = filled
    return out


def li_inpaint(stack: ProjectionStack, mask: ProjectionStack, full_density: bool = False) -> ProjectionStack:
    """Inpaint every projection ``[:, :, k]`` of ``stack`` where ``mask`` is set."""
    if stack.data.shape != mask.data.shape:
        raise ValueError("stack and mask shapes differ")
    data, m = stack.data, mask.data
    out = np.empty_like(data)
    for k in range(data.shape[2]):
        out[:, :, k] = li_inpaint_slice(data[:, :, k], m[:, :, k], full_density)
    return stack.replace(data=out)
