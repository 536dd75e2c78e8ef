"""Scanner geometry, voxel grids and the projection-stack conventions.

World frame is right-handed with the rotation axis along ``z``. For gantry
angle ``theta`` the source sits at ``dso * (cos theta, sin theta, 0)`` and the
flat detector is centred at distance ``dsd`` from the source on the opposite
side of the axis.

A projection stack is indexed ``data[i, j, k]``:

* ``i`` -- detector position along the rotation axis (``v``, ``d1 = n_cols``)
* ``j`` -- transaxial detector position (``u``, ``d2 = n_rows``)
* ``k`` -- projection angle (``d3 = n_angles``)

so ``data[:, :, k]`` is one projection image (the primary view) and
``data[i, :, :]`` is a sinogram at fixed height (the secondary view).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

__all__ = [
    "ConeBeamGeometry",
    "VolumeGrid",
    "Volume",
    "ProjectionStack",
    "GeometryError",
    "make_geometry",
    "ray_for_pixel",
    "detector_coords",
    "primary_slices",
    "secondary_slices",
    "from_primary_slices",
    "from_secondary_slices",
]

VOLUME_UNITS = ("mu", "hu", "mask")
DOMAIN_TAGS = ("line-integral", "count", "normalized")


class GeometryError(ValueError):
    """Raised for invalid scanner or grid parameters."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ConeBeamGeometry:
    """Circular-trajectory cone-beam scanner with a flat detector.

    Use :func:`make_geometry` to build one; the constructor validates but does
    not fill in default angles.
    """

    dso: float
    dsd: float
    n_cols: int
    n_rows: int
    pixel_size: float
    angles: np.ndarray
    fov_radius: float

    def __post_init__(self):
        if not (self.dso > 0):
            raise GeometryError("dso must be positive")
        if not (self.dsd > self.dso):
            raise GeometryError("dsd must exceed dso")
        if self.n_cols < 1 or self.n_rows < 1:
            raise GeometryError("detector pixel counts must be >= 1")
        if not (self.pixel_size > 0):
            raise GeometryError("pixel_size must be positive")
        angles = _readonly(np.atleast_1d(self.angles))
        if angles.ndim != 1 or angles.size < 1:
            raise GeometryError("need at least one angle")
        if np.any(np.diff(angles) <= 0):
            raise GeometryError("angles must be strictly increasing")
        if angles[0] < 0 or angles[-1] >= 2 * math.pi:
            raise GeometryError("angles must lie in [0, 2*pi)")
        if not (0 < self.fov_radius <= self.dso):
            raise GeometryError("fov_radius must be positive and not exceed dso")
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "n_cols", int(self.n_cols))
        object.__setattr__(self, "n_rows", int(self.n_rows))

    @property
    def n_angles(self) -> int:
        return int(self.angles.size)

    @property
    def shape(self) -> tuple[int, int, int]:
        """Projection stack shape ``(d1, d2, d3)``."""
        return (self.n_cols, self.n_rows, self.n_angles)

    @property
    def magnification(self) -> float:
        return self.dsd / self.dso

    def is_uniform(self, rtol: float = 1e-9) -> bool:
        """True when angles are evenly spaced over a full turn."""
        n = self.n_angles
        if n < 2:
            return False
        step = 2 * math.pi / n
        expected = self.angles[0] + step * np.arange(n)
        return bool(np.allclose(self.angles, expected, rtol=0, atol=rtol * 2 * math.pi))

    def to_dict(self) -> dict[str, Any]:
        return {
            "dso_mm": float(self.dso),
            "dsd_mm": float(self.dsd),
            "n_cols": int(self.n_cols),
            "n_rows": int(self.n_rows),
            "pixel_size_mm": float(self.pixel_size),
            "n_angles": int(self.n_angles),
            "angles_rad": [float(a) for a in self.angles],
            "fov_radius_mm": float(self.fov_radius),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ConeBeamGeometry":
        expected = {
            "dso_mm", "dsd_mm", "n_cols", "n_rows", "pixel_size_mm",
            "n_angles", "angles_rad", "fov_radius_mm",
        }
        missing = expected - set(d)
        if missing:
            raise GeometryError(f"geometry JSON missing keys: {sorted(missing)}")
        g = cls(
            dso=float(d["dso_mm"]),
            dsd=float(d["dsd_mm"]),
            n_cols=int(d["n_cols"]),
            n_rows=int(d["n_rows"]),
            pixel_size=float(d["pixel_size_mm"]),
            angles=np.asarray(d["angles_rad"], dtype=np.float64),
            fov_radius=float(d["fov_radius_mm"]),
        )
        if g.n_angles != int(d["n_angles"]):
            raise GeometryError("n_angles does not match len(angles_rad)")
        return g

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, path_or_text: str | Path) -> "ConeBeamGeometry":
        text = str(path_or_text)
        if not text.lstrip().startswith("{"):
            text = Path(path_or_text).read_text()
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        if not isinstance(other, ConeBeamGeometry):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(json.dumps(self.to_dict(), sort_keys=True))


def make_geometry(
    dso: float = 100.0,
    dsd: float = 200.0,
    n_cols: int = 64,
    n_rows: int = 64,
    pixel_size: float = 1.2,
    n_angles: int | None = 64,
    angles=None,
    fov_radius: float = 14.0,
) -> ConeBeamGeometry:
    """Build a validated geometry, filling in uniform angles over [0, 2*pi).

    The defaults describe the desk-scale scanner: a 64 x 64 detector at
    magnification 2 covering a ~38 mm wide field at the axis.
    """
    if dsd <= dso:
        raise GeometryError("dsd must exceed dso")
    if angles is None:
        if n_angles is None or n_angles < 1:
            raise GeometryError("n_angles must be >= 1")
        angles = 2 * math.pi * np.arange(n_angles) / n_angles
    else:
        angles = np.asarray(angles, dtype=np.float64)
        if n_angles is not None and angles.size != n_angles:
            raise GeometryError("n_angles does not match len(angles)")
    return ConeBeamGeometry(
        dso=float(dso),
        dsd=float(dsd),
        n_cols=int(n_cols),
        n_rows=int(n_rows),
        pixel_size=float(pixel_size),
        angles=angles,
        fov_radius=float(fov_radius),
    )


def detector_coords(g: ConeBeamGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-centre offsets ``(v_i, u_j)`` in mm on the physical detector."""
    v = (np.arange(g.n_cols) - (g.n_cols - 1) / 2.0) * g.pixel_size
    u = (np.arange(g.n_rows) - (g.n_rows - 1) / 2.0) * g.pixel_size
    return v, u


def source_position(g: ConeBeamGeometry, k: int) -> np.ndarray:
    th = g.angles[k]
    return np.array([g.dso * math.cos(th), g.dso * math.sin(th), 0.0])


def ray_for_pixel(g: ConeBeamGeometry, i: int, j: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Source point and unit direction of the ray hitting pixel ``(i, j)`` at angle ``k``."""
    if not (0 <= i < g.n_cols and 0 <= j < g.n_rows and 0 <= k < g.n_angles):
        raise IndexError(f"pixel index {(i, j, k)} out of range for {g.shape}")
    th = g.angles[k]
    c, s = math.cos(th), math.sin(th)
    v = (i - (g.n_cols - 1) / 2.0) * g.pixel_size
    u = (j - (g.n_rows - 1) / 2.0) * g.pixel_size
    src = np.array([g.dso * c, g.dso * s, 0.0])
    # detector centre, then offset along e_u = (-s, c, 0) and e_z
    pix = src + g.dsd * np.array([-c, -s, 0.0]) + u * np.array([-s, c, 0.0]) + np.array([0.0, 0.0, v])
    d = pix - src
    return src, d / np.linalg.norm(d)


@dataclass(frozen=True)
class VolumeGrid:
    """Isotropic voxel grid; ``origin`` is the world position of voxel (0, 0, 0)."""

    nx: int
    ny: int
    nz: int
    spacing: float
    origin: tuple[float, float, float] | None = None

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise GeometryError("voxel counts must be >= 1")
        if not (self.spacing > 0):
            raise GeometryError("spacing must be positive")
        if self.origin is None:
            origin = tuple(-(n - 1) * self.spacing / 2.0 for n in self.shape)
        else:
            origin = tuple(float(o) for o in self.origin)
            if len(origin) != 3:
                raise GeometryError("origin must have three components")
        object.__setattr__(self, "origin", origin)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (int(self.nx), int(self.ny), int(self.nz))

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """World coordinates of voxel centres along x, y, z."""
        return tuple(o + self.spacing * np.arange(n) for o, n in zip(self.origin, self.shape))

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")

    def to_dict(self) -> dict[str, Any]:
        return {
            "dims": list(self.shape),
            "spacing_mm": float(self.spacing),
            "origin_mm": [float(o) for o in self.origin],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "VolumeGrid":
        nx, ny, nz = (int(v) for v in d["dims"])
        return cls(nx, ny, nz, float(d["spacing_mm"]), tuple(d.get("origin_mm") or ()) or None)


@dataclass(frozen=True)
class Volume:
    """Scalar field on a :class:`VolumeGrid`, tagged ``mu``, ``hu`` or ``mask``."""

    grid: VolumeGrid
    data: np.ndarray
    unit: str = "mu"

    def __post_init__(self):
        if self.unit not in VOLUME_UNITS:
            raise GeometryError(f"unknown volume unit {self.unit!r}")
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.shape != self.grid.shape:
            raise GeometryError(f"data shape {data.shape} does not match grid {self.grid.shape}")
        if self.unit == "mask" and not np.all((data == 0) | (data == 1)):
            raise GeometryError("mask volumes must contain only 0 and 1")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, grid: VolumeGrid, unit: str = "mu") -> "Volume":
        return cls(grid, np.zeros(grid.shape), unit)


@dataclass(frozen=True)
class ProjectionStack:
    """``d1 x d2 x d3`` projection data; see the module docstring for axes."""

    geometry: ConeBeamGeometry
    data: np.ndarray
    domain_tag: str = "line-integral"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.domain_tag not in DOMAIN_TAGS:
            raise GeometryError(f"unknown domain tag {self.domain_tag!r}")
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.shape != self.geometry.shape:
            raise GeometryError(f"stack shape {data.shape} does not match geometry {self.geometry.shape}")
        if self.domain_tag == "count" and np.any(data < 0):
            raise GeometryError("count-domain data must be nonnegative")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def replace(self, data: np.ndarray, domain_tag: str | None = None, **meta) -> "ProjectionStack":
        m = dict(self.meta)
        m.update(meta)
        return ProjectionStack(self.geometry, data, domain_tag or self.domain_tag, m)


def primary_slices(data: np.ndarray) -> np.ndarray:
    """``(d3, d1, d2)`` batch of i-j planes, one per angle."""
    return np.ascontiguousarray(np.moveaxis(data, 2, 0))


def secondary_slices(data: np.ndarray) -> np.ndarray:
    """``(d1, d2, d3)`` batch of j-k planes, one per detector height."""
    return np.ascontiguousarray(data)


def from_primary_slices(batch: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(batch, 0, 2))


def from_secondary_slices(batch: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(batch)
