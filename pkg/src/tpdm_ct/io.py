"""Raw float32 arrays with JSON sidecars, checksums and run logs."""

from __future__ import annotations

import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from .geometry import ConeBeamGeometry, ProjectionStack, Volume, VolumeGrid

__all__ = [
    "save_array",
    "load_array",
    "save_volume",
    "load_volume",
    "save_stack",
    "load_stack",
    "file_sha256",
    "config_hash",
    "write_run_log",
]

RAW_SUFFIX = ".f32"
META_SUFFIX = ".json"


def _stem(path) -> Path:
    p = Path(path)
    if p.suffix in (RAW_SUFFIX, META_SUFFIX):
        p = p.with_suffix("")
    return p


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def save_array(path, data: np.ndarray, meta: dict | None = None) -> str:
    """Write ``<stem>.f32`` (C order, little endian) and ``<stem>.json``; return the raw checksum."""
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(data, dtype="<f4")
    raw = stem.with_suffix(RAW_SUFFIX)
    raw.write_bytes(arr.tobytes())
    digest = hashlib.sha256(arr.tobytes()).hexdigest()
    side = {"shape": list(arr.shape), "dtype": "float32", "order": "C", "sha256": digest}
    side.update(meta or {})
    stem.with_suffix(META_SUFFIX).write_text(json.dumps(side, indent=2, sort_keys=True))
    return digest


def load_array(path, verify: bool = True) -> tuple[np.ndarray, dict]:
    stem = _stem(path)
    meta = json.loads(stem.with_suffix(META_SUFFIX).read_text())
    buf = stem.with_suffix(RAW_SUFFIX).read_bytes()
    if verify and "sha256" in meta and hashlib.sha256(buf).hexdigest() != meta["sha256"]:
        raise IOError(f"checksum mismatch for {stem}")
    arr = np.frombuffer(buf, dtype="<f4").reshape(meta["shape"]).astype(np.float64)
    return arr, meta


def save_volume(path, v: Volume) -> str:
    return save_array(path, v.data, {"kind": "volume", "unit": v.unit, "grid": v.grid.to_dict()})


def load_volume(path) -> Volume:
    data, meta = load_array(path)
    if meta.get("kind") != "volume":
        raise ValueError(f"{path} is not a volume")
    return Volume(VolumeGrid.from_dict(meta["grid"]), data, meta["unit"])


def save_stack(path, p: ProjectionStack) -> str:
    return save_array(path, p.data, {
        "kind": "stack", "domain_tag": p.domain_tag, "geometry": p.geometry.to_dict(), "meta": p.meta,
    })


def load_stack(path) -> ProjectionStack:
    data, meta = load_array(path)
    if meta.get("kind") != "stack":
        raise ValueError(f"{path} is not a projection stack")
    return ProjectionStack(ConeBeamGeometry.from_dict(meta["geometry"]), data, meta["domain_tag"], meta["meta"])


def write_run_log(path, command: str, config: dict, started: float, extra: dict | None = None) -> None:
    import scipy

    log = {
        "command": command,
        "config_hash": config_hash(config),
        "config": config,
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "platform": platform.platform(),
        },
        "wall_time_s": time.time() - started,
    }
    log.update(extra or {})
    Path(path).write_text(json.dumps(log, indent=2, sort_keys=True, default=str))
