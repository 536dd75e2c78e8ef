"""Predictor-corrector VE sampling with DPS conditioning over 3D stacks.

Axis convention for a stack ``X[i, j, k]``: primary slices are ``X[:, :, k]``
(one per projection angle, conditioned on the measurement) and secondary
slices are ``X[i, :, :]`` (one per detector column, unconditioned).

Step indexing: at loop step ``i`` (running ``T-1 .. 0``) the state sits at
noise level ``sigma_i``. The predictor moves it to ``sigma_{i-1}``, and the
last step (``i = 0``) returns the noise-free mean, i.e. ``sigma_{-1} = 0``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .artefact import slice_rng
from .geometry import ProjectionStack, from_primary_slices, primary_slices
from .score import NoiseSchedule, tweedie_at

__all__ = [
    "SamplerConfig",
    "Measurement",
    "DegenerateScheduleWarning",
    "branch_schedule",
    "predictor_step",
    "corrector_step",
    "dps_gradient",
    "tpdm_sample",
    "dps_sample_2d",
]

GRADIENT_MODES = ("identity", "exact-jvp")

_TAG = 21
_INIT, _PRED, _CORR = 0, 1, 2
AXIS_PRIMARY, AXIS_SECONDARY = 0, 1


class DegenerateScheduleWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    T: int = 200
    K: int = 2
    lam: float = 1.0
    snr: float = 0.16
    n_corrector: int = 1
    gradient_mode: str = "identity"
    seed: int = 0
    sigma_min: float = 0.01
    sigma_max: float = 50.0

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if not (self.snr > 0):
            raise ValueError("snr must be positive")
        if self.n_corrector < 0:
            raise ValueError("n_corrector must be nonnegative")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ValueError(f"gradient_mode must be one of {GRADIENT_MODES}")

    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule(self.T, self.sigma_min, self.sigma_max)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown sampler config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_json(cls, path: str | Path) -> "SamplerConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Measurement:
    """Normalized measurement ``y`` and implant mask (1 = to be inpainted)."""

    y: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        y = np.array(self.y, dtype=np.float64)
        m = np.array(self.mask, dtype=np.float64)
        if y.ndim != 3 or y.shape != m.shape:
            raise ValueError("y and mask must be 3D arrays of equal shape")
        if not np.all((m == 0) | (m == 1)):
            raise ValueError("mask must be binary")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "mask", m)

    @classmethod
    def from_stacks(cls, y: ProjectionStack, mask: ProjectionStack) -> "Measurement":
        if y.geometry != mask.geometry:
            raise ValueError("measurement and mask geometries differ")
        return cls(y.data, mask.data)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.y.shape


def branch_schedule(T: int, K: int) -> list[tuple[int, str]]:
    """``(i, branch)`` for ``i = T-1 .. 0``; primary where ``i mod K != 0``."""
    if T < 1 or K < 1:
        raise ValueError("T and K must be >= 1")
    return [(i, "primary" if i % K != 0 else "secondary") for i in range(T - 1, -1, -1)]


def _gaussian(seed, i, axis, n, shape, purpose) -> np.ndarray:
    out = np.empty((n,) + tuple(shape))
    for b in range(n):
        out[b] = slice_rng(seed, _TAG, i, axis, b, purpose).standard_normal(shape)
    return out


def _batch_norm(a: np.ndarray) -> np.ndarray:
    return np.sqrt((a * a).reshape(a.shape[0], -1).sum(axis=1))


def predictor_step(x, s, i: int, schedule: NoiseSchedule, rng=None, z=None) -> np.ndarray:
    """Reverse-diffusion step from ``sigma_i`` to ``sigma_{i-1}``.

    ``i = 0`` is the terminal step to ``sigma_{-1} = 0`` and adds no noise.
    Noise comes from ``z`` if given, else from ``rng``.
    """
    if not (0 <= i <= schedule.T):
        raise ValueError(f"step index {i} outside [0, {schedule.T}]")
    x = np.asarray(x, dtype=np.float64)
    hi, lo = schedule.sigma_at(i), schedule.sigma_at(i - 1)
    dvar = hi * hi - lo * lo
    out = x + dvar * np.asarray(s, dtype=np.float64)
    if i == 0:
        return out
    if z is None:
        if rng is None:
            raise ValueError("predictor needs rng or z")
        z = rng.standard_normal(x.shape)
    return out + np.sqrt(dvar) * z


def _corrector(x, s, snr, z):
    """Langevin update applied per slice along the leading axis."""
    x = np.asarray(x, dtype=np.float64)
    xs, ss, zs = x.reshape((-1,) + x.shape[-2:]), s.reshape((-1,) + x.shape[-2:]), z.reshape((-1,) + x.shape[-2:])
    sn = _batch_norm(ss)
    zn = _batch_norm(zs)
    out = xs.copy()
    live = sn > 0
    eps = np.zeros_like(sn)
    eps[live] = 2.0 * (snr * zn[live] / sn[live]) ** 2
    out += eps[:, None, None] * ss + np.sqrt(2.0 * eps)[:, None, None] * zs
    return out.reshape(x.shape)


def corrector_step(x, provider, t: float, snr: float, rng=None, z=None, schedule=None) -> np.ndarray:
    """One annealed-Langevin step at noise level ``sigma(t)``, skipped where the score vanishes."""
    if not (snr > 0):
        raise ValueError("snr must be positive")
    sched = schedule or provider.schedule
    x = np.asarray(x, dtype=np.float64)
    s = provider.score_at(x, sched.sigma(t))
    if z is None:
        if rng is None:
            raise ValueError("corrector needs rng or z")
        z = rng.standard_normal(x.shape)
    return _corrector(x, s, snr, np.asarray(z, dtype=np.float64))


def _dps_gradient_at(x, y, mask, provider, sigma, mode, s=None):
    if mode not in GRADIENT_MODES:
        raise ValueError(f"gradient_mode must be one of {GRADIENT_MODES}")
    if mode == "exact-jvp" and not getattr(provider, "has_jvp", False):
        raise ValueError("exact-jvp requested but the provider has no Jacobian-vector product")
    if s is None:
        s = provider.score_at(x, sigma)
    keep = 1.0 - mask
    u = 2.0 * keep * (keep * tweedie_at(x, sigma, s) - y)
    if mode == "identity":
        return u
    return u + sigma * sigma * provider.jvp_at(x, sigma, u)


def dps_gradient(x, y_slice, mask_slice, provider, t: float, mode: str = "identity", schedule=None) -> np.ndarray:
    """Gradient of ``||(1-m) * xhat0(x) - y||^2`` with respect to ``x``.

    ``identity`` treats ``d xhat0 / dx`` as the identity; ``exact-jvp`` uses
    ``I + sigma^2 J`` with the provider's (symmetric) score Jacobian.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y_slice, dtype=np.float64)
    m = np.asarray(mask_slice, dtype=np.float64)
    if not (x.shape == y.shape == m.shape):
        raise ValueError("x, y and mask shapes differ")
    sched = schedule or provider.schedule
    return _dps_gradient_at(x, y, m, provider, sched.sigma(t), mode)


def _check_provider(provider, shape, name):
    want = tuple(getattr(provider, "slice_shape", shape))
    if want != tuple(shape):
        raise ValueError(f"{name} provider expects slices {want}, stack gives {tuple(shape)}")


def _pc(x, s0, provider, i, sigma, cfg: SamplerConfig, schedule, axis):
    n = x.shape[0]
    s = s0
    for c in range(cfg.n_corrector):
        z = _gaussian(cfg.seed, i, axis, n, x.shape[1:], _CORR + 8 * c)
        x = _corrector(x, s, cfg.snr, z)
        s = provider.score_at(x, sigma)
    z = None if i == 0 else _gaussian(cfg.seed, i, axis, n, x.shape[1:], _PRED)
    return predictor_step(x, s, i, schedule, z=z)


def _run(Y: Measurement, primary, secondary, cfg, schedule, branches, dump, dump_every):
    if schedule.T != cfg.T:
        raise ValueError("schedule and config disagree on T")
    d1, d2, d3 = Y.shape
    _check_provider(primary, (d1, d2), "primary")
    if secondary is not None:
        _check_provider(secondary, (d2, d3), "secondary")
    yb = primary_slices(Y.y)
    mb = primary_slices(Y.mask)
    init = _gaussian(cfg.seed, cfg.T, AXIS_PRIMARY, d3, (d1, d2), _INIT)
    X = from_primary_slices(schedule.sigma_max * init)
    for i, branch in branches:
        sigma = schedule.sigma_at(i)
        if branch == "primary":
            xb = primary_slices(X)
            s0 = primary.score_at(xb, sigma)
            if cfg.lam > 0:
                g = _dps_gradient_at(xb, yb, mb, primary, sigma, cfg.gradient_mode, s0)
            xb = _pc(xb, s0, primary, i, sigma, cfg, schedule, AXIS_PRIMARY)
            if cfg.lam > 0:
                xb = xb - cfg.lam * g
            X = from_primary_slices(xb)
        else:
            s0 = secondary.score_at(X, sigma)
            X = _pc(X, s0, secondary, i, sigma, cfg, schedule, AXIS_SECONDARY)
        if dump is not None and dump_every and i % dump_every == 0:
            dump(i, X.copy())
    return X


def tpdm_sample(
    Y: Measurement,
    primary,
    secondary,
    cfg: SamplerConfig,
    schedule: NoiseSchedule | None = None,
    dump: Callable[[int, np.ndarray], None] | None = None,
    dump_every: int = 0,
) -> np.ndarray:
    """Alternate conditioned primary sweeps with unconditioned secondary sweeps."""
    schedule = schedule or cfg.schedule()
    if cfg.K == 1:
        warnings.warn("K=1: every step takes the secondary branch, measurement is ignored",
                      DegenerateScheduleWarning, stacklevel=2)
    elif cfg.K > cfg.T:
        warnings.warn("K>T: only the final step takes the secondary branch",
                      DegenerateScheduleWarning, stacklevel=2)
    return _run(Y, primary, secondary, cfg, schedule, branch_schedule(cfg.T, cfg.K), dump, dump_every)


def dps_sample_2d(
    Y: Measurement,
    primary,
    cfg: SamplerConfig,
    schedule: NoiseSchedule | None = None,
    dump: Callable[[int, np.ndarray], None] | None = None,
    dump_every: int = 0,
) -> np.ndarray:
    """Slice-wise DPS with the primary model only."""
    schedule = schedule or cfg.schedule()
    branches = [(i, "primary") for i in range(cfg.T - 1, -1, -1)]
    return _run(Y, primary, None, cfg, schedule, branches, dump, dump_every)
