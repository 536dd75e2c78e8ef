"""Procedural phantoms, material decomposition and implant placement."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import ConeBeamGeometry, Volume, VolumeGrid

__all__ = [
    "Ellipsoid",
    "PhantomSpec",
    "MaterialDecomposition",
    "Cylinder",
    "Sphere",
    "ImplantError",
    "MU_WATER",
    "rasterize",
    "mu_to_hu",
    "hu_to_mu",
    "decompose_hu",
    "place_implants",
    "implant_visible",
    "random_mandible",
    "implant_layout",
]

MATERIALS = ("water", "bone", "metal")
MU_WATER = 0.02  # mm^-1 at the reference energy
DEFAULT_HU_THRESHOLDS = (100.0, 500.0)


class ImplantError(ValueError):
    """Raised when an implant cannot be placed as requested."""


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]
    semi_axes: tuple[float, float, float]
    mu: float
    material: str = "water"
    rotation: float = 0.0  # radians about z

    def __post_init__(self):
        if self.material not in MATERIALS:
            raise ValueError(f"unknown material {self.material!r}")
        if min(self.semi_axes) <= 0:
            raise ValueError("semi-axes must be positive")
        if self.mu < 0:
            raise ValueError("attenuation must be nonnegative")

    def inside(self, X, Y, Z) -> np.ndarray:
        cx, cy, cz = self.center
        a, b, c = self.semi_axes
        ct, st = math.cos(self.rotation), math.sin(self.rotation)
        dx, dy = X - cx, Y - cy
        xr = ct * dx + st * dy
        yr = -st * dx + ct * dy
        return (xr / a) ** 2 + (yr / b) ** 2 + ((Z - cz) / c) ** 2 <= 1.0


@dataclass(frozen=True)
class PhantomSpec:
    ellipsoids: tuple[Ellipsoid, ...] = ()
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "ellipsoids": [
                {**asdict(e), "center": list(e.center), "semi_axes": list(e.semi_axes)}
                for e in self.ellipsoids
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        ells = tuple(
            Ellipsoid(
                center=tuple(e["center"]),
                semi_axes=tuple(e["semi_axes"]),
                mu=float(e["mu"]),
                material=e.get("material", "water"),
                rotation=float(e.get("rotation", 0.0)),
            )
            for e in d.get("ellipsoids", [])
        )
        return cls(ells, d.get("seed"))

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, path: str | Path) -> "PhantomSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class MaterialDecomposition:
    """Water and bone attenuation channels plus a binary implant mask."""

    water: Volume
    bone: Volume
    implant: Volume

    def __post_init__(self):
        g = self.water.grid
        if self.bone.grid != g or self.implant.grid != g:
            raise ValueError("decomposition channels must share one grid")
        if self.implant.unit != "mask":
            raise ValueError("implant channel must be a mask volume")
        if np.any(self.water.data < 0) or np.any(self.bone.data < 0):
            raise ValueError("water and bone channels must be nonnegative")

    @property
    def grid(self) -> VolumeGrid:
        return self.water.grid

    def total_mu(self) -> np.ndarray:
        return self.water.data + self.bone.data


def rasterize(spec: PhantomSpec, grid: VolumeGrid) -> MaterialDecomposition:
    """Sample ellipsoids at voxel centres in painter's order."""
    X, Y, Z = grid.mesh()
    label = np.zeros(grid.shape, dtype=np.int8)  # 0 air, 1 water, 2 bone, 3 metal
    mu = np.zeros(grid.shape)
    codes = {"water": 1, "bone": 2, "metal": 3}
    for e in spec.ellipsoids:
        sel = e.inside(X, Y, Z)
        label[sel] = codes[e.material]
        mu[sel] = e.mu
    water = np.where(label == 1, mu, 0.0)
    bone = np.where(label == 2, mu, 0.0)
    implant = (label == 3).astype(np.float64)
    return MaterialDecomposition(
        Volume(grid, water, "mu"), Volume(grid, bone, "mu"), Volume(grid, implant, "mask")
    )


def mu_to_hu(mu: np.ndarray, mu_water: float = MU_WATER) -> np.ndarray:
    return 1000.0 * (np.asarray(mu) - mu_water) / mu_water


def hu_to_mu(hu: np.ndarray, mu_water: float = MU_WATER) -> np.ndarray:
    """Two-point map with air (-1000 HU) at 0 and water (0 HU) at ``mu_water``."""
    return np.maximum(mu_water * (1.0 + np.asarray(hu, dtype=np.float64) / 1000.0), 0.0)


def decompose_hu(
    v: Volume,
    thresholds: tuple[float, float] = DEFAULT_HU_THRESHOLDS,
    mu_water: float = MU_WATER,
) -> MaterialDecomposition:
    """Split an HU volume into water and bone attenuation with a soft threshold.

    The bone weight rises linearly from 0 at ``thresholds[0]`` to 1 at
    ``thresholds[1]``; the two channels always sum to the total attenuation.
    """
    t_low, t_high = thresholds
    if not t_low < t_high:
        raise ValueError("t_low must be below t_high")
    if v.unit != "hu":
        raise ValueError("decompose_hu expects an HU volume")
    h = v.data
    mu = hu_to_mu(h, mu_water)
    w = np.clip((h - t_low) / (t_high - t_low), 0.0, 1.0)
    bone = w * mu
    water = mu - bone
    return MaterialDecomposition(
        Volume(v.grid, water, "mu"), Volume(v.grid, bone, "mu"), Volume.zeros(v.grid, "mask")
    )


@dataclass(frozen=True)
class Cylinder:
    """Implant body with its axis parallel to z."""

    center: tuple[float, float, float]
    radius: float
    half_height: float

    def inside(self, X, Y, Z):
        cx, cy, cz = self.center
        return ((X - cx) ** 2 + (Y - cy) ** 2 <= self.radius ** 2) & (np.abs(Z - cz) <= self.half_height)

    @property
    def radial_extent(self) -> float:
        return math.hypot(self.center[0], self.center[1]) + self.radius

    def to_dict(self):
        return {"shape": "cylinder", "center_mm": list(self.center), "radius_mm": self.radius,
                "half_height_mm": self.half_height}


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float

    def inside(self, X, Y, Z):
        cx, cy, cz = self.center
        return (X - cx) ** 2 + (Y - cy) ** 2 + (Z - cz) ** 2 <= self.radius ** 2

    @property
    def radial_extent(self) -> float:
        return math.hypot(self.center[0], self.center[1]) + self.radius

    def to_dict(self):
        return {"shape": "sphere", "center_mm": list(self.center), "radius_mm": self.radius}


def implant_from_dict(d: dict):
    shape = d.get("shape")
    if shape == "cylinder":
        return Cylinder(tuple(d["center_mm"]), float(d["radius_mm"]), float(d["half_height_mm"]))
    if shape == "sphere":
        return Sphere(tuple(d["center_mm"]), float(d["radius_mm"]))
    raise ValueError(f"unknown implant shape {shape!r}")


def implant_visible(mask: np.ndarray, grid: VolumeGrid, g: ConeBeamGeometry) -> bool:
    """True when some voxel of ``mask`` projects onto the detector at some angle."""
    X, Y, Z = grid.mesh()
    sel = mask > 0
    if not sel.any():
        return False
    x, y, z = X[sel], Y[sel], Z[sel]
    half_v = g.n_cols * g.pixel_size / 2.0
    half_u = g.n_rows * g.pixel_size / 2.0
    for th in g.angles:
        c, s = math.cos(th), math.sin(th)
        U = g.dso - (x * c + y * s)
        front = U > 0
        mag = g.dsd / np.where(front, U, 1.0)
        u = mag * (-x * s + y * c)
        v = mag * z
        if np.any(front & (np.abs(u) <= half_u) & (np.abs(v) <= half_v)):
            return True
    return False


def place_implants(
    decomp: MaterialDecomposition,
    implants,
    geometry: ConeBeamGeometry,
    allow_exomass: bool = False,
) -> MaterialDecomposition:
    """Add implant shapes to the mask channel and clear them from water/bone.

    Shapes reaching beyond ``geometry.fov_radius`` (the exomass) are rejected
    unless ``allow_exomass`` is set; every shape must be seen by at least one
    detector ray.
    """
    grid = decomp.grid
    X, Y, Z = grid.mesh()
    mask = decomp.implant.data.copy()
    for imp in implants:
        if not allow_exomass and imp.radial_extent > geometry.fov_radius:
            raise ImplantError(
                f"implant at {imp.center} extends to r={imp.radial_extent:.2f} mm, "
                f"outside the FOV radius {geometry.fov_radius} mm"
            )
        sel = imp.inside(X, Y, Z)
        if not sel.any() or not implant_visible(sel.astype(np.float64), grid, geometry):
            raise ImplantError(f"implant at {imp.center} is invisible to all rays")
        mask[sel] = 1.0
    keep = mask == 0
    return MaterialDecomposition(
        Volume(grid, decomp.water.data * keep, "mu"),
        Volume(grid, decomp.bone.data * keep, "mu"),
        Volume(grid, mask, "mask"),
    )


@dataclass(frozen=True)
class MandibleParams:
    """Shape family of the desk-scale jaw phantoms (lengths in mm, mu in mm^-1)."""

    arch_radius: float = 8.0
    arch_span: float = 2.2  # radians covered by the bone arch
    n_arch: int = 7
    soft_axes: tuple[float, float, float] = (12.5, 11.0, 12.0)
    mu_soft: float = MU_WATER
    mu_cortical: float = 0.045
    mu_cancellous: float = 0.03
    mu_tooth: float = 0.055
    jitter: float = 0.08  # relative jitter of sizes and attenuation
    pos_jitter: float = 0.6  # mm
    extra: dict = field(default_factory=dict)


def random_mandible(seed: int, params: MandibleParams | None = None) -> PhantomSpec:
    """Jaw-like phantom: soft-tissue body, U-shaped bone arch and teeth."""
    p = params or MandibleParams()
    rng = np.random.default_rng(seed)

    def jit(x, rel=p.jitter):
        return float(x * (1.0 + rel * rng.uniform(-1, 1)))

    ells: list[Ellipsoid] = []
    a, b, c = p.soft_axes
    ells.append(Ellipsoid((0.0, jit(1.0, 0.5), 0.0), (jit(a), jit(b), jit(c)), jit(p.mu_soft, 0.03), "water"))
    # tongue / floor of mouth
    ells.append(
        Ellipsoid((0.0, jit(-1.5, 0.3), jit(-2.0, 0.3)), (jit(4.5), jit(3.5), jit(4.0)),
                  jit(0.9 * p.mu_soft, 0.03), "water")
    )
    radius = jit(p.arch_radius)
    turn = rng.uniform(-0.15, 0.15)
    centre_angle = math.pi / 2 + turn  # arch opens toward -y
    z_arch = rng.uniform(-1.5, 0.5)
    phis = centre_angle + np.linspace(-p.arch_span / 2, p.arch_span / 2, p.n_arch)
    for phi in phis:
        cx = radius * math.cos(phi) + p.pos_jitter * rng.uniform(-0.5, 0.5)
        cy = radius * math.sin(phi) - 1.0 + p.pos_jitter * rng.uniform(-0.5, 0.5)
        tangent = phi + math.pi / 2
        body = (jit(2.6), jit(1.9), jit(5.5))
        ells.append(Ellipsoid((cx, cy, z_arch), body, jit(p.mu_cortical, 0.05), "bone", tangent))
        ells.append(
            Ellipsoid((cx, cy, z_arch), (0.6 * body[0], 0.55 * body[1], 0.85 * body[2]),
                      jit(p.mu_cancellous, 0.05), "bone", tangent)
        )
    for phi in phis[1:-1]:
        if rng.uniform() < 0.8:
            cx = (radius + 0.2) * math.cos(phi)
            cy = (radius + 0.2) * math.sin(phi) - 1.0
            ells.append(
                Ellipsoid((cx, cy, z_arch + jit(6.0)), (jit(1.3), jit(1.1), jit(2.8)),
                          jit(p.mu_tooth, 0.05), "bone", phi)
            )
    return PhantomSpec(tuple(ells), seed)


def implant_layout(
    spec: PhantomSpec,
    n_implants: int,
    seed: int,
    radius: float = 1.0,
    half_height: float = 4.0,
) -> list[Cylinder]:
    """Cylinders seated in distinct arch segments of a :func:`random_mandible` phantom."""
    arch = [e for e in spec.ellipsoids if e.material == "bone" and e.semi_axes[2] > 4.0]
    cortical = arch[0::2]
    if n_implants > len(cortical) - 2:
        raise ImplantError("not enough arch segments for the requested implants")
    rng = np.random.default_rng(seed)
    # skip the arch ends; keep implants at least two segments apart where possible
    candidates = np.arange(1, len(cortical) - 1)
    for _ in range(100):
        pick = np.sort(rng.choice(candidates, size=n_implants, replace=False))
        if n_implants == 1 or np.min(np.diff(pick)) >= 2 or len(candidates) < 2 * n_implants:
            break
    out = []
    for idx in pick:
        e = cortical[idx]
        out.append(Cylinder((e.center[0], e.center[1], e.center[2] + 1.0), radius, half_height))
    return out
