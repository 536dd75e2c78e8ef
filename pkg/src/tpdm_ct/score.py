"""Variance-exploding noise schedule and exact score providers.

A score provider maps a batch of 2D slices ``x`` (shape ``(..., H, W)``) and
a noise level to the gradient of the log-density of the noise-perturbed data
distribution. Two exact providers are implemented: a diagonal Gaussian and
the Gaussian-smoothed empirical distribution of a slice dataset.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import kernels

__all__ = [
    "NoiseSchedule",
    "ScoreProvider",
    "GaussianScoreProvider",
    "EmpiricalScoreProvider",
    "SliceIndexedEmpiricalProvider",
    "tweedie",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Geometric ladder ``sigma(t) = sigma_min * (sigma_max / sigma_min) ** t``."""

    T: int = 200
    sigma_min: float = 0.01
    sigma_max: float = 50.0

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not (0 < self.sigma_min < self.sigma_max):
            raise ValueError("need 0 < sigma_min < sigma_max")

    def sigma(self, t: float) -> float:
        if not (0.0 <= t <= 1.0):
            raise ValueError(f"t={t} outside [0, 1]")
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** t

    def sigma_at(self, i: int) -> float:
        """Ladder value ``sigma_i = sigma(i / T)``; ``sigma_{-1}`` is 0."""
        if i == -1:
            return 0.0
        if not (0 <= i <= self.T):
            raise ValueError(f"step index {i} outside [0, {self.T}]")
        return self.sigma(i / self.T)

    def ladder(self) -> np.ndarray:
        return np.array([self.sigma_at(i) for i in range(self.T + 1)])


class ScoreProvider(Protocol):
    """Contract shared by the primary and secondary slice models."""

    schedule: NoiseSchedule
    has_jvp: bool

    def score_at(self, x: np.ndarray, sigma: float) -> np.ndarray: ...

    def jvp_at(self, x: np.ndarray, sigma: float, v: np.ndarray) -> np.ndarray: ...

    def evaluate(self, x: np.ndarray, t: float) -> np.ndarray: ...

    def jvp(self, x: np.ndarray, t: float, v: np.ndarray) -> np.ndarray: ...


class _ProviderBase:
    schedule: NoiseSchedule
    has_jvp = False
    slice_shape: tuple[int, int]

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim < 2 or x.shape[-2:] != tuple(self.slice_shape):
            raise ValueError(f"slice shape {x.shape[-2:]} does not match provider {self.slice_shape}")
        return x

    def evaluate(self, x, t):
        return self.score_at(x, self.schedule.sigma(t))

    def jvp(self, x, t, v):
        return self.jvp_at(x, self.schedule.sigma(t), v)

    def jvp_at(self, x, sigma, v):
        raise NotImplementedError(f"{type(self).__name__} has no Jacobian-vector product")


class GaussianScoreProvider(_ProviderBase):
    """Score of ``N(mean, diag(var))`` convolved with ``N(0, sigma^2 I)``."""

    has_jvp = True

    def __init__(self, mean, var, schedule: NoiseSchedule | None = None):
        self.mean = np.array(mean, dtype=np.float64)
        self.var = np.broadcast_to(np.asarray(var, dtype=np.float64), self.mean.shape).copy()
        if self.mean.ndim != 2:
            raise ValueError("mean must be a 2D slice")
        if np.any(self.var <= 0):
            raise ValueError("variances must be positive")
        self.slice_shape = self.mean.shape
        self.schedule = schedule or NoiseSchedule()

    def score_at(self, x, sigma):
        x = self._check(x)
        return -(x - self.mean) / (self.var + sigma * sigma)

    def jvp_at(self, x, sigma, v):
        self._check(x)
        v = np.asarray(v, dtype=np.float64)
        if v.shape != np.shape(x):
            raise ValueError("direction shape does not match x")
        return -v / (self.var + sigma * sigma)


class EmpiricalScoreProvider(_ProviderBase):
    """Exact score of the sigma-smoothed empirical distribution of a slice set.

    With ``w_n`` the softmax over ``-||x - x_n||^2 / (2 sigma^2)``, the score is
    ``(sum_n w_n x_n - x) / sigma^2``.
    """

    has_jvp = True

    def __init__(self, dataset, schedule: NoiseSchedule | None = None):
        data = np.array(dataset, dtype=np.float64)
        if data.ndim != 3 or data.shape[0] < 1:
            raise ValueError("dataset must be a non-empty stack of 2D slices")
        self.slice_shape = data.shape[1:]
        self._flat = np.ascontiguousarray(data.reshape(data.shape[0], -1))
        self._flat.setflags(write=False)
        self.schedule = schedule or NoiseSchedule()

    @property
    def n_samples(self) -> int:
        return self._flat.shape[0]

    @property
    def dataset(self) -> np.ndarray:
        return self._flat.reshape((-1,) + tuple(self.slice_shape))

    def _flatten(self, x):
        x = self._check(x)
        lead = x.shape[:-2]
        return np.ascontiguousarray(x.reshape(-1, self._flat.shape[1])), lead

    def weights(self, x, sigma) -> np.ndarray:
        """Posterior responsibilities ``w[b, n]`` of the training slices."""
        flat, lead = self._flatten(x)
        return self._weights(flat, sigma).reshape(lead + (self.n_samples,))

    def _weights(self, flat, sigma):
        logits = kernels.sq_distances(flat, self._flat) * (-0.5 / (sigma * sigma))
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        w /= w.sum(axis=1, keepdims=True)
        return w

    def score_at(self, x, sigma):
        flat, lead = self._flatten(x)
        w = self._weights(flat, sigma)
        mean = kernels.weighted_sum(w, self._flat)
        return ((mean - flat) / (sigma * sigma)).reshape(lead + tuple(self.slice_shape))

    def jvp_at(self, x, sigma, v):
        flat, lead = self._flatten(x)
        vflat = np.ascontiguousarray(np.asarray(v, dtype=np.float64).reshape(flat.shape))
        w = self._weights(flat, sigma)
        c = kernels.pairwise_dot(vflat, self._flat)
        c -= (w * c).sum(axis=1, keepdims=True)
        cov_v = kernels.weighted_sum(np.ascontiguousarray(w * c), self._flat)
        s2 = sigma * sigma
        out = cov_v / (s2 * s2) - vflat / s2
        return out.reshape(lead + tuple(self.slice_shape))


class SliceIndexedEmpiricalProvider(_ProviderBase):
    """One empirical distribution per slice position.

    ``datasets`` has shape ``(n_positions, N, H, W)``. Batches passed to
    ``score_at`` must hold exactly one slice per position, in order.
    """

    has_jvp = True

    def __init__(self, datasets, schedule: NoiseSchedule | None = None):
        data = np.asarray(datasets, dtype=np.float64)
        if data.ndim != 4:
            raise ValueError("datasets must have shape (n_positions, N, H, W)")
        self.schedule = schedule or NoiseSchedule()
        self._parts = [EmpiricalScoreProvider(d, self.schedule) for d in data]
        self.slice_shape = data.shape[2:]

    @property
    def n_positions(self) -> int:
        return len(self._parts)

    def _split(self, x):
        x = self._check(x)
        if x.ndim != 3 or x.shape[0] != self.n_positions:
            raise ValueError(f"expected a batch of {self.n_positions} slices, got shape {x.shape}")
        return x

    def score_at(self, x, sigma):
        x = self._split(x)
        return np.stack([p.score_at(x[b], sigma) for b, p in enumerate(self._parts)])

    def jvp_at(self, x, sigma, v):
        x = self._split(x)
        v = np.asarray(v, dtype=np.float64)
        return np.stack([p.jvp_at(x[b], sigma, v[b]) for b, p in enumerate(self._parts)])


def tweedie(x, t: float, s, schedule: NoiseSchedule) -> np.ndarray:
    """Posterior-mean denoised estimate ``x + sigma(t)^2 * s``."""
    sig = schedule.sigma(t)
    return np.asarray(x, dtype=np.float64) + sig * sig * np.asarray(s, dtype=np.float64)


def tweedie_at(x, sigma: float, s) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) + sigma * sigma * np.asarray(s, dtype=np.float64)

