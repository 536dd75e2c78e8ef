"""Seeded method-comparison suite: metric table, ordering verdicts and sampler cost ratio."""

from __future__ import annotations

import copy
import json
import shutil
import time
from pathlib import Path

import numpy as np

from . import pipeline
from .metrics import aggregate
from .sampler import SamplerConfig

__all__ = ["DEFAULT_SUITE", "ordering_verdict", "run_benchmark"]

DEFAULT_SUITE = {
    "seed": 0,
    "n_seeds": 4,
    "implant_configs": [{"n_implants": 2}, {"n_implants": 3}],
    "fovs": ["large", "small"],
    "methods": ["tpdm", "dps", "li"],
    "generate": {},
    "sampler": {"T": 200, "K": 2, "lam": 1.0},
    "min_metrics": 2,
}

HIGHER_BETTER = {"ssim": True, "psnr": True, "rmse": False}


def ordering_verdict(means: list[float], higher_better: bool) -> str:
    """``pass`` when ``means`` is ordered best-first (ties allowed), ``tie`` when all equal."""
    v = np.asarray(means, dtype=np.float64)
    if not higher_better:
        v = -v
    if np.all(v == v[0]):
        return "tie"
    return "pass" if np.all(np.diff(v) <= 0) else "fail"


def _verdicts(rows, methods, scope):
    by = {r.method: r for r in rows if r.scope == scope}
    if not all(m in by for m in methods):
        return {}
    return {k: ordering_verdict([getattr(by[m], f"{k}_mean") for m in methods], hb)
            for k, hb in HIGHER_BETTER.items()}


def _suite(config):
    cfg = copy.deepcopy(DEFAULT_SUITE)
    for k, v in (config or {}).items():
        if k not in cfg:
            raise pipeline.ConfigError(f"unknown suite key {k!r}")
        cfg[k] = v
    for m in cfg["methods"]:
        if m not in pipeline.METHODS:
            raise pipeline.ConfigError(f"unknown method {m!r}")
    if int(cfg["n_seeds"]) < 1 or not cfg["implant_configs"] or not cfg["fovs"]:
        raise pipeline.ConfigError("suite needs at least one seed, implant config and fov")
    return cfg


def run_benchmark(config: dict | None, out_dir, log=print) -> dict:
    """Generate, corrupt, inpaint, reconstruct and evaluate the whole suite under ``out_dir``."""
    started = time.time()
    cfg = _suite(config)
    sampler = SamplerConfig.from_dict(cfg["sampler"])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    case_dirs, seconds = [], {m: 0.0 for m in cfg["methods"]}
    for fov in cfg["fovs"]:
        gen = dict(cfg["generate"], seed=int(cfg["seed"]), n_cases=int(cfg["n_seeds"]), fov=fov)
        root = out / fov
        if root.exists():
            shutil.rmtree(root)
        manifest = pipeline.generate(gen, root, log=log)
        for case in manifest["cases"]:
            src = root / case["dir"]
            for ic in cfg["implant_configs"]:
                cdir = root / f"{case['dir']}_n{ic.get('n_implants', 'x')}"
                shutil.copytree(src, cdir)
                pipeline.corrupt(cdir, ic, log=log)
                for m in cfg["methods"]:
                    info = pipeline.inpaint(cdir, m, sampler, root / "scores", log=log)
                    seconds[m] += info["sample_seconds"]
                pipeline.reconstruct(cdir, cfg["methods"], log=log)
                case_dirs.append(cdir)
            shutil.rmtree(src)
    records = pipeline.evaluate(case_dirs, out, cfg["methods"], images=False, log=log)
    rows = aggregate(records)
    proj = _verdicts(rows, cfg["methods"], "projection")
    n_pass = sum(v in ("pass", "tie") for v in proj.values())
    ratio = None
    if seconds.get("tpdm", 0) > 0 and "dps" in seconds:
        ratio = seconds["dps"] / seconds["tpdm"]
    verdict = {
        "methods": cfg["methods"],
        "n_cases": len(case_dirs),
        "ordering_projection": proj,
        "ordering_reconstruction": _verdicts(rows, cfg["methods"], "reconstruction"),
        "projection_metrics_ordered": n_pass,
        "ordering_pass": n_pass >= int(cfg["min_metrics"]),
        "means_projection": {r.method: {"ssim": r.ssim_mean, "psnr": r.psnr_mean, "rmse": r.rmse_mean}
                             for r in rows if r.scope == "projection"},
        "sample_seconds": seconds,
        "wall_time_ratio_dps_over_tpdm": ratio,
        "total_seconds": time.time() - started,
        "suite": cfg,
    }
    (out / "verdict.json").write_text(json.dumps(verdict, indent=2, sort_keys=True))
    log(f"ordering {proj}; dps/tpdm time ratio {ratio}")
    return verdict
