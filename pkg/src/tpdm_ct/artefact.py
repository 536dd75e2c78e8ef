"""Polychromatic beam hardening, counting noise and log normalisation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import ProjectionStack
from .projector import ProjectionSet

__all__ = [
    "Spectrum",
    "NoiseParams",
    "toy_spectrum",
    "monochromatic",
    "beam_harden",
    "poissonize",
    "log_normalize",
    "acquisition_noise",
    "slice_rng",
]

COUNT_FLOOR = 1.0
DEFAULT_I0 = 1e5

# stream tags for per-slice generators
_POISSON = 11
_ACQ_POISSON = 12
_ACQ_GAUSS = 13


def slice_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for one slice of one stage.

    Streams are keyed by ``(seed, *key)`` so draws do not depend on the
    order in which slices are processed.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(int(k) for k in key)])
    return np.random.Generator(np.random.Philox(ss))


def _trapezoid_weights(e: np.ndarray) -> np.ndarray:
    if e.size == 1:
        return np.ones(1)
    w = np.empty_like(e)
    w[0] = (e[1] - e[0]) / 2
    w[-1] = (e[-1] - e[-2]) / 2
    w[1:-1] = (e[2:] - e[:-2]) / 2
    return w


@dataclass(frozen=True)
class Spectrum:
    """Discrete tube spectrum with per-material mass attenuation tables."""

    energies: np.ndarray
    intensity: np.ndarray
    e0: float
    m_water: np.ndarray
    m_bone: np.ndarray
    m_implant: np.ndarray

    def __post_init__(self):
        arrs = {}
        for name in ("energies", "intensity", "m_water", "m_bone", "m_implant"):
            a = np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64)).copy()
            a.setflags(write=False)
            arrs[name] = a
            object.__setattr__(self, name, a)
        n = arrs["energies"].size
        if n < 1 or any(a.size != n for a in arrs.values()):
            raise ValueError("spectrum arrays must be non-empty and of equal length")
        if n > 1 and np.any(np.diff(arrs["energies"]) <= 0):
            raise ValueError("energies must be strictly increasing")
        if np.any(arrs["intensity"] < 0):
            raise ValueError("intensities must be nonnegative")
        for m in ("m_water", "m_bone", "m_implant"):
            if np.any(arrs[m] <= 0):
                raise ValueError("mass attenuation values must be positive")
        if not (self.total() > 0):
            raise ValueError("spectrum carries no intensity")
        e = arrs["energies"]
        if not (e[0] <= self.e0 <= e[-1]):
            raise ValueError("reference energy must lie within the tabulated range")

    @property
    def weights(self) -> np.ndarray:
        """Trapezoidal energy-bin widths (1 for a single bin)."""
        return _trapezoid_weights(self.energies)

    def total(self) -> float:
        return float(np.sum(self.intensity * self.weights))

    def _at_e0(self, table: np.ndarray) -> float:
        e = self.energies
        hit = np.flatnonzero(e == self.e0)
        if hit.size:
            return float(table[hit[0]])
        return float(np.exp(np.interp(np.log(self.e0), np.log(e), np.log(table))))

    def ratios(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``m(E) / m(E0)`` for water, bone and implant."""
        return tuple(t / self._at_e0(t) for t in (self.m_water, self.m_bone, self.m_implant))

    def to_dict(self) -> dict:
        return {
            "energies_kev": self.energies.tolist(),
            "intensity": self.intensity.tolist(),
            "m_water": self.m_water.tolist(),
            "m_bone": self.m_bone.tolist(),
            "m_implant": self.m_implant.tolist(),
            "e0_kev": float(self.e0),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Spectrum":
        return cls(
            energies=d["energies_kev"],
            intensity=d["intensity"],
            e0=float(d["e0_kev"]),
            m_water=d["m_water"],
            m_bone=d["m_bone"],
            m_implant=d["m_implant"],
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "Spectrum":
        return cls.from_dict(json.loads(Path(path).read_text()))


def toy_spectrum() -> Spectrum:
    """The bundled 20-bin 40-100 keV spectrum with water/bone/titanium tables."""
    text = resources.files("tpdm_ct").joinpath("data/toy_spectrum.json").read_text()
    return Spectrum.from_dict(json.loads(text))


def monochromatic(e0: float = 70.0) -> Spectrum:
    """Single-bin spectrum at the reference energy; beam hardening vanishes."""
    return Spectrum([e0], [1.0], e0, [1.0], [1.0], [1.0])


@dataclass(frozen=True)
class NoiseParams:
    r: float = 10.0
    i0: float = DEFAULT_I0
    gaussian_sigma: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.r < 0:
            raise ValueError("r must be nonnegative")
        if not (self.i0 > 0):
            raise ValueError("i0 must be positive")
        if self.gaussian_sigma < 0:
            raise ValueError("gaussian_sigma must be nonnegative")


def beam_harden(ps: ProjectionSet, s: Spectrum, i0: float = DEFAULT_I0) -> ProjectionStack:
    """Noiseless detected counts of a polychromatic beam."""
    pw, pb, pim = ps.p_w.data, ps.p_b.data, ps.p_im.data
    if not (pw.shape == pb.shape == pim.shape):
        raise ValueError("projection shapes differ")
    rw, rb, rim = s.ratios()
    weights = s.intensity * s.weights * i0
    out = np.zeros_like(pw)
    for wgt, a, b, c in zip(weights, rw, rb, rim):
        if wgt == 0:
            continue
        out += wgt * np.exp(-(a * pw + b * pb + c * pim))
    return ProjectionStack(ps.geometry, out, "count")


def poissonize(p_bh: ProjectionStack, params: NoiseParams) -> ProjectionStack:
    """Draw counts ``~ Poisson(p_bh + r)``, one generator per angle."""
    lam = p_bh.data
    if np.any(lam < 0):
        raise ValueError("expected counts must be nonnegative")
    out = np.empty_like(lam)
    for k in range(lam.shape[2]):
        rng = slice_rng(params.seed, _POISSON, k)
        out[:, :, k] = rng.poisson(lam[:, :, k] + params.r)
    return ProjectionStack(p_bh.geometry, out, "count")


def log_normalize(p: ProjectionStack, s: Spectrum, i0: float = DEFAULT_I0) -> ProjectionStack:
    """Line integrals ``-ln(counts / incident)`` with counts floored at one."""
    data = p.data
    if np.any(data < 0):
        raise ValueError("counts must be nonnegative")
    incident = i0 * s.total()
    return ProjectionStack(p.geometry, -np.log(np.maximum(data, COUNT_FLOOR) / incident), "line-integral")


def acquisition_noise(p: ProjectionStack, params: NoiseParams) -> ProjectionStack:
    """Monochromatic Poisson plus Gaussian detector noise on clean line integrals."""
    data = p.data
    if np.any(data < 0):
        raise ValueError("line integrals must be nonnegative")
    counts = np.empty_like(data)
    for k in range(data.shape[2]):
        lam = params.i0 * np.exp(-data[:, :, k])
        c = slice_rng(params.seed, _ACQ_POISSON, k).poisson(lam).astype(np.float64)
        if params.gaussian_sigma > 0:
            c += slice_rng(params.seed, _ACQ_GAUSS, k).normal(0.0, params.gaussian_sigma, size=c.shape)
        counts[:, :, k] = c
    out = -np.log(np.maximum(counts, COUNT_FLOOR) / params.i0)
    return ProjectionStack(p.geometry, out, "line-integral")
