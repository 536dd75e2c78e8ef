"""Image-quality metrics and per-method aggregation across test cases."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

__all__ = [
    "rmse",
    "psnr",
    "ssim",
    "ssim_map",
    "data_range",
    "case_metrics",
    "MetricRow",
    "aggregate",
    "report",
    "write_csv",
    "format_table",
    "CSV_FIELDS",
]

PSNR_CAP = 200.0
WIN_SIGMA = 1.5
WIN_SIZE = 11
K1, K2 = 0.01, 0.03
SCOPES = ("projection", "reconstruction")
CSV_FIELDS = ["method", "scope", "ssim_mean", "ssim_std", "psnr_mean", "psnr_std", "rmse_mean", "rmse_std", "n_cases"]


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def _select(mask, shape):
    if mask is None:
        return None
    m = np.asarray(mask) != 0
    if m.shape != shape:
        raise ValueError("mask shape does not match images")
    if not m.any():
        raise ValueError("mask selects no pixels")
    return m


def data_range(reference) -> float:
    r = np.asarray(reference, dtype=np.float64)
    return float(r.max() - r.min())


def rmse(a, b, mask=None) -> float:
    a, b = _pair(a, b)
    m = _select(mask, a.shape)
    d = (a - b) if m is None else (a - b)[m]
    return float(np.sqrt(np.mean(d * d)))


def psnr(a, b, data_range: float, mask=None) -> float:
    if not (data_range > 0):
        raise ValueError("data_range must be positive")
    e = rmse(a, b, mask)
    if e < data_range * 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 20.0 * math.log10(data_range / e))


def ssim_map(a, b, data_range: float) -> np.ndarray:
    """Local SSIM with an 11-wide Gaussian window (sigma 1.5) in every dimension."""
    a, b = _pair(a, b)
    if not (data_range > 0):
        raise ValueError("data_range must be positive")
    if a.ndim not in (2, 3):
        raise ValueError("ssim expects 2D or 3D arrays")
    if min(a.shape) < WIN_SIZE:
        raise ValueError(f"images must be at least {WIN_SIZE} pixels along every axis")
    trunc = (WIN_SIZE // 2) / WIN_SIGMA

    def filt(x):
        return gaussian_filter(x, WIN_SIGMA, mode="reflect", truncate=trunc)

    mu_a, mu_b = filt(a), filt(b)
    vaa = filt(a * a) - mu_a * mu_a
    vbb = filt(b * b) - mu_b * mu_b
    vab = filt(a * b) - mu_a * mu_b
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * vab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (vaa + vbb + c2)
    return num / den


def ssim(a, b, data_range: float, mask=None, per_slice: bool = False) -> float:
    """Mean SSIM over window centres selected by ``mask`` (all pixels by default).

    ``per_slice`` treats a 3D input as a stack of 2D images along the last
    axis and averages the per-slice scores over slices with a nonempty mask.
    """
    a, b = _pair(a, b)
    m = _select(mask, a.shape)
    if per_slice:
        if a.ndim != 3:
            raise ValueError("per_slice needs a 3D stack")
        vals = []
        for k in range(a.shape[2]):
            mk = None if m is None else m[:, :, k]
            if mk is not None and not mk.any():
                continue
            smap = ssim_map(a[:, :, k], b[:, :, k], data_range)
            vals.append(float(smap.mean() if mk is None else smap[mk].mean()))
        return float(np.mean(vals))
    smap = ssim_map(a, b, data_range)
    return float(smap.mean() if m is None else smap[m].mean())


def case_metrics(reference, candidate, mask=None, per_slice: bool = False) -> dict[str, float]:
    """SSIM, PSNR and RMSE of one candidate, with the range taken from the reference."""
    rng = data_range(reference)
    return {
        "ssim": ssim(candidate, reference, rng, mask, per_slice),
        "psnr": psnr(candidate, reference, rng, mask),
        "rmse": rmse(candidate, reference, mask),
    }


@dataclass(frozen=True)
class MetricRow:
    method: str
    scope: str
    ssim_mean: float
    ssim_std: float
    psnr_mean: float
    psnr_std: float
    rmse_mean: float
    rmse_std: float
    n_cases: int

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in CSV_FIELDS}


def aggregate(records: list[dict]) -> list[MetricRow]:
    """Mean and population std per (method, scope) of per-case records.

    Each record holds ``method``, ``scope``, ``ssim``, ``psnr`` and ``rmse``.
    """
    if not records:
        raise ValueError("no candidates to report")
    groups: dict[tuple[str, str], list[dict]] = {}
    for r in records:
        if r["scope"] not in SCOPES:
            raise ValueError(f"unknown scope {r['scope']!r}")
        groups.setdefault((r["method"], r["scope"]), []).append(r)
    rows = []
    for (method, scope), rs in groups.items():
        stats = {}
        for key in ("ssim", "psnr", "rmse"):
            v = np.array([r[key] for r in rs], dtype=np.float64)
            stats[key] = (float(v.mean()), float(v.std()))
        rows.append(MetricRow(method, scope, *stats["ssim"], *stats["psnr"], *stats["rmse"], len(rs)))
    return rows


def report(reference_volume, candidates: dict, reference_stack=None, candidate_stacks: dict | None = None,
           mask=None, per_slice: bool = False) -> list[MetricRow]:
    """Single-case table: whole-volume metrics and, when stacks are given, masked projection metrics."""
    if not candidates:
        raise ValueError("no candidates to report")
    records = []
    for name, vol in candidates.items():
        records.append({"method": name, "scope": "reconstruction", **case_metrics(reference_volume, vol)})
    for name, st in (candidate_stacks or {}).items():
        if reference_stack is None or mask is None:
            raise ValueError("projection metrics need a reference stack and a mask")
        records.append({"method": name, "scope": "projection",
                        **case_metrics(reference_stack, st, mask, per_slice)})
    return aggregate(records)


def write_csv(rows: list[MetricRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in rows:
            d = r.as_dict()
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in d.items()})


def format_table(rows: list[MetricRow]) -> str:
    header = f"{'method':<12} {'scope':<15} {'SSIM':>17} {'PSNR':>17} {'RMSE':>21} {'n':>3}"
    lines = [header, "-" * len(header)]
    for r in sorted(rows, key=lambda r: (r.scope, r.method)):
        lines.append(
            f"{r.method:<12} {r.scope:<15} {r.ssim_mean:>8.4f} ± {r.ssim_std:<6.4f} "
            f"{r.psnr_mean:>8.2f} ± {r.psnr_std:<6.2f} {r.rmse_mean:>10.6f} ± {r.rmse_std:<8.6f} {r.n_cases:>3}"
        )
    return "\n".join(lines)
