"""Cone-beam forward projection and the measurement-domain implant mask."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import ConeBeamGeometry, ProjectionStack, Volume

__all__ = ["ProjectionSet", "forward_project", "project_materials", "measurement_mask"]

DEFAULT_MASK_EPS = 1e-6


@dataclass(frozen=True)
class ProjectionSet:
    """Line integrals of the water, bone and implant channels."""

    p_w: ProjectionStack
    p_b: ProjectionStack
    p_im: ProjectionStack

    def __post_init__(self):
        g = self.p_w.geometry
        if self.p_b.geometry != g or self.p_im.geometry != g:
            raise ValueError("projection set members must share one geometry")

    @property
    def geometry(self) -> ConeBeamGeometry:
        return self.p_w.geometry

    def total(self) -> np.ndarray:
        return self.p_w.data + self.p_b.data + self.p_im.data


def forward_project(v: Volume, g: ConeBeamGeometry, step: float | None = None) -> ProjectionStack:
    """Sampled line integrals of ``v`` along every detector ray.

    Rays are clipped to the grid's interpolation support, sampled uniformly
    with spacing at most ``step`` (default half a voxel) and accumulated with
    the trapezoidal rule over trilinearly interpolated values.
    """
    grid = v.grid
    if step is None:
        step = grid.spacing / 2.0
    if step <= 0:
        raise ValueError("step must be positive")
    ox, oy, oz = grid.origin
    data = kernels.forward_project(
        np.ascontiguousarray(v.data, dtype=np.float64),
        float(ox), float(oy), float(oz), float(grid.spacing),
        np.ascontiguousarray(g.angles), float(g.dso), float(g.dsd),
        int(g.n_cols), int(g.n_rows), float(g.pixel_size), float(step),
    )
    return ProjectionStack(g, data, "line-integral")


def project_materials(m, g: ConeBeamGeometry, metal_mu: float, step: float | None = None) -> ProjectionSet:
    """Project the water, bone and (scaled) implant channels of a decomposition."""
    if not (metal_mu > 0):
        raise ValueError("metal_mu must be positive")
    p_w = forward_project(m.water, g, step)
    p_b = forward_project(m.bone, g, step)
    if np.any(m.implant.data):
        metal = Volume(m.implant.grid, metal_mu * m.implant.data, "mu")
        p_im = forward_project(metal, g, step)
    else:
        p_im = ProjectionStack(g, np.zeros(g.shape), "line-integral")
    return ProjectionSet(p_w, p_b, p_im)


def measurement_mask(p_im: ProjectionStack, eps: float = DEFAULT_MASK_EPS) -> ProjectionStack:
    """Binary stack marking pixels whose ray crosses the implant."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if np.any(p_im.data < 0):
        raise ValueError("implant projections must be nonnegative")
    mask = (p_im.data > eps).astype(np.float64)
    return ProjectionStack(p_im.geometry, mask, "normalized", {"binary": True})
