"""Case-directory pipeline stages behind the command-line tool.

A dataset directory holds ``manifest.json``, ``scores/{primary,secondary}``
slice files for the score providers, and one directory per test case. Each
stage reads and writes files inside a case directory:

    generate     case.json, water, bone, clean
    corrupt      implants.json, y, mask, recon_artefacts
    inpaint      inpainted_<method>, composite_<method>, inpaint_<method>.json
    reconstruct  recon_reference, recon_<method>
"""

from __future__ import annotations

import copy
import csv
import json
import shutil
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import artefact, io
from .baseline import li_inpaint
from .geometry import GeometryError, ProjectionStack, Volume, VolumeGrid, make_geometry, primary_slices
from .metrics import aggregate, case_metrics, write_csv
from .phantom import (
    MandibleParams, MaterialDecomposition, PhantomSpec, decompose_hu, implant_from_dict, implant_layout, mu_to_hu,
    place_implants, random_mandible, rasterize,
)
from .projector import forward_project, measurement_mask, project_materials
from .recon import DIFF_WINDOW, composite, fdk, save_orthoslices
from .sampler import Measurement, SamplerConfig, branch_schedule, dps_sample_2d, tpdm_sample
from .score import EmpiricalScoreProvider

__all__ = [
    "ConfigError", "InputError", "ShapeError",
    "DEFAULT_GENERATE", "DEFAULT_CORRUPT", "METHODS",
    "generate", "corrupt", "inpaint", "reconstruct", "evaluate", "load_providers",
]

METHODS = ("tpdm", "dps", "li")
FOV_SCALE = {"large": 1.0, "small": 0.5}
_CASE_TAG, _TRAIN_TAG = 1, 2

DEFAULT_GENERATE = {
    "seed": 0,
    "n_cases": 2,
    "fov": "large",
    "grid": {"dims": [64, 64, 64], "spacing_mm": 0.5},
    "geometry": {"dso": 100.0, "dsd": 200.0, "n_cols": 64, "n_rows": 64, "pixel_size": 1.2,
                 "n_angles": 64, "fov_radius": 14.0},
    "noise": {"i0": 1e5, "gaussian_sigma": 10.0},
    "hu_thresholds": [100.0, 500.0],
    "train": {"n_phantoms": 8, "seed": 1000},
    "phantom": {},
}

DEFAULT_CORRUPT = {
    "n_implants": 2,
    "seed": 0,
    "radius_mm": 1.0,
    "half_height_mm": 4.0,
    "metal_mu": 0.25,
    "implants": None,
    "spectrum": None,
    "noise": {"r": 10.0, "i0": 1e5},
}


class ConfigError(ValueError):
    pass


class InputError(FileNotFoundError):
    pass


class ShapeError(ValueError):
    pass


def _merge(defaults: dict, cfg: dict | None) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in (cfg or {}).items():
        if k not in defaults:
            raise ConfigError(f"unknown config key {k!r}")
        if isinstance(defaults[k], dict) and isinstance(v, dict) and k not in ("phantom",):
            sub = _merge(defaults[k], v)
            out[k] = sub
        else:
            out[k] = v
    return out


def derive_seed(*key: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1)[0])


def _require(path: Path, what: str) -> Path:
    if not Path(str(path) + ".f32").exists() and not path.exists():
        raise InputError(f"missing {what}: {path}")
    return path


# ---------------------------------------------------------------- generate

@dataclass(frozen=True)
class _Setup:
    grid: VolumeGrid
    geometry: object
    noise: artefact.NoiseParams
    thresholds: tuple
    params: MandibleParams


def _setup(cfg: dict) -> _Setup:
    try:
        if cfg["fov"] not in FOV_SCALE:
            raise ConfigError(f"fov must be one of {sorted(FOV_SCALE)}")
        gcfg = dict(cfg["geometry"])
        gcfg["fov_radius"] = float(gcfg["fov_radius"]) * FOV_SCALE[cfg["fov"]]
        geometry = make_geometry(**gcfg)
        nx, ny, nz = (int(d) for d in cfg["grid"]["dims"])
        grid = VolumeGrid(nx, ny, nz, float(cfg["grid"]["spacing_mm"]))
        noise = artefact.NoiseParams(r=0.0, i0=float(cfg["noise"]["i0"]),
                                     gaussian_sigma=float(cfg["noise"]["gaussian_sigma"]))
        params = MandibleParams(**cfg["phantom"])
        if int(cfg["n_cases"]) < 1 or int(cfg["train"]["n_phantoms"]) < 1:
            raise ConfigError("n_cases and train.n_phantoms must be >= 1")
    except (TypeError, KeyError, GeometryError) as e:
        raise ConfigError(str(e)) from e
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return _Setup(grid, geometry, noise, tuple(cfg["hu_thresholds"]), params)


def _clean_case(seed: int, st: _Setup):
    spec = random_mandible(seed, st.params)
    mu = rasterize(spec, st.grid).total_mu()
    hu = Volume(st.grid, mu_to_hu(mu), "hu")
    dec = decompose_hu(hu, st.thresholds)
    p = forward_project(Volume(st.grid, dec.water.data + dec.bone.data, "mu"), st.geometry)
    noise = artefact.NoiseParams(st.noise.r, st.noise.i0, st.noise.gaussian_sigma, seed)
    clean = artefact.acquisition_noise(p, noise)
    return spec, dec, clean


def generate(config: dict, out_dir, log=print) -> dict:
    """Write test cases, score datasets and a manifest under ``out_dir``.

    On a configuration error nothing is left behind.
    """
    started = time.time()
    cfg = _merge(DEFAULT_GENERATE, config)
    st = _setup(cfg)
    out = Path(out_dir)
    created = not out.exists()
    try:
        out.mkdir(parents=True, exist_ok=True)
        return _generate(cfg, st, out, started, log)
    except ConfigError:
        if created:
            shutil.rmtree(out, ignore_errors=True)
        raise


def _generate(cfg, st, out, started, log):
    seed = int(cfg["seed"])
    train_seed = int(cfg["train"]["seed"])
    train = []
    for n in range(int(cfg["train"]["n_phantoms"])):
        _, _, clean = _clean_case(derive_seed(train_seed, _TRAIN_TAG, n), st)
        train.append(clean.data)
        log(f"train phantom {n} projected")
    norm = float(max(t.max() for t in train))
    prim = np.concatenate([primary_slices(t) for t in train]) / norm
    sec = np.concatenate([t for t in train]) / norm
    checks = {
        "scores/primary": io.save_array(out / "scores" / "primary", prim, {"view": "primary", "norm": norm}),
        "scores/secondary": io.save_array(out / "scores" / "secondary", sec, {"view": "secondary", "norm": norm}),
    }
    cases = []
    for c in range(int(cfg["n_cases"])):
        case_seed = derive_seed(seed, _CASE_TAG, c)
        spec, dec, clean = _clean_case(case_seed, st)
        cdir = out / f"case_{c:03d}"
        cdir.mkdir(exist_ok=True)
        meta = {
            "case": c, "seed": case_seed, "fov": cfg["fov"], "norm": norm,
            "allow_exomass": cfg["fov"] == "small", "geometry": st.geometry.to_dict(),
            "grid": st.grid.to_dict(), "phantom": spec.to_dict(),
        }
        (cdir / "case.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        sums = {
            "water": io.save_volume(cdir / "water", dec.water),
            "bone": io.save_volume(cdir / "bone", dec.bone),
            "clean": io.save_stack(cdir / "clean", clean),
        }
        cases.append({"dir": cdir.name, "seed": case_seed, "sha256": sums})
        log(f"case {c} generated")
    manifest = {"config": cfg, "norm": norm, "cases": cases, "scores": checks}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    io.write_run_log(out / "run_generate.json", "generate", cfg, started)
    return manifest


# ---------------------------------------------------------------- corrupt

def _case_meta(cdir: Path) -> dict:
    p = cdir / "case.json"
    if not p.exists():
        raise InputError(f"{cdir} is not a generated case")
    return json.loads(p.read_text())


def _spectrum(cfg) -> artefact.Spectrum:
    if cfg["spectrum"] is None:
        return artefact.toy_spectrum()
    return artefact.Spectrum.from_json(cfg["spectrum"])


def corrupt(case_dir, config: dict | None = None, debug_mono: bool = False, log=print) -> dict:
    """Insert implants, simulate the polychromatic measurement and its implant mask."""
    started = time.time()
    cfg = _merge(DEFAULT_CORRUPT, config)
    cdir = Path(case_dir)
    meta = _case_meta(cdir)
    geometry = io.load_stack(_require(cdir / "clean", "clean stack")).geometry
    water, bone = io.load_volume(cdir / "water"), io.load_volume(cdir / "bone")
    dec = MaterialDecomposition(water, bone, Volume.zeros(water.grid, "mask"))
    if cfg["implants"] is not None:
        implants = [implant_from_dict(d) for d in cfg["implants"]]
    else:
        spec = PhantomSpec.from_dict(meta["phantom"])
        implants = implant_layout(spec, int(cfg["n_implants"]), derive_seed(meta["seed"], int(cfg["seed"])),
                                  float(cfg["radius_mm"]), float(cfg["half_height_mm"]))
    dec = place_implants(dec, implants, geometry, allow_exomass=meta["allow_exomass"])
    ps = project_materials(dec, geometry, float(cfg["metal_mu"]))
    mask = measurement_mask(ps.p_im)
    if debug_mono:
        spec_e = artefact.monochromatic()
        i0 = float(cfg["noise"]["i0"])
        y_li = artefact.log_normalize(artefact.beam_harden(ps, spec_e, i0), spec_e, i0)
    else:
        spec_e = _spectrum(cfg)
        nz = artefact.NoiseParams(r=float(cfg["noise"]["r"]), i0=float(cfg["noise"]["i0"]), gaussian_sigma=0.0,
                                  seed=derive_seed(meta["seed"], int(cfg["seed"]), 7))
        counts = artefact.poissonize(artefact.beam_harden(ps, spec_e, nz.i0), nz)
        y_li = artefact.log_normalize(counts, spec_e, nz.i0)
    norm = float(meta["norm"])
    y = y_li.replace(data=y_li.data / norm, domain_tag="normalized", norm=norm)
    sums = {"y": io.save_stack(cdir / "y", y), "mask": io.save_stack(cdir / "mask", mask)}
    grid = VolumeGrid.from_dict(meta["grid"])
    rec = fdk(y_li, geometry, grid)
    sums["recon_artefacts"] = io.save_volume(cdir / "recon_artefacts", rec)
    frac = float(np.mean(mask.data.reshape(-1, mask.data.shape[2]).any(axis=0)))
    info = {"implants": [i.to_dict() for i in implants], "mask_angle_fraction": frac,
            "debug_mono": bool(debug_mono), "sha256": sums, "config": cfg}
    (cdir / "implants.json").write_text(json.dumps(info, indent=2, sort_keys=True))
    io.write_run_log(cdir / "run_corrupt.json", "corrupt", cfg, started)
    log(f"{cdir.name}: {len(implants)} implants, mask on {frac:.0%} of angles")
    return info


# ---------------------------------------------------------------- inpaint

def load_providers(score_dir, cfg: SamplerConfig):
    """Empirical primary and secondary providers from a dataset's ``scores`` directory."""
    sdir = Path(score_dir)
    if not (sdir / "primary.f32").exists() or not (sdir / "secondary.f32").exists():
        raise InputError(f"no score datasets under {sdir}")
    sched = cfg.schedule()
    prim, _ = io.load_array(sdir / "primary")
    sec, _ = io.load_array(sdir / "secondary")
    return EmpiricalScoreProvider(prim, sched), EmpiricalScoreProvider(sec, sched)


def inpaint(case_dir, method: str, sampler: SamplerConfig | None = None, score_dir=None,
            dump_every: int = 0, full_density_li: bool = False, log=print) -> dict:
    """Inpaint the implant traces of a corrupted case and composite into the clean stack."""
    started = time.time()
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}")
    cdir = Path(case_dir)
    meta = _case_meta(cdir)
    y = io.load_stack(_require(cdir / "y", "measurement (run corrupt first)"))
    mask = io.load_stack(_require(cdir / "mask", "mask"))
    clean = io.load_stack(cdir / "clean")
    if not (y.data.shape == mask.data.shape == clean.data.shape):
        raise ShapeError("measurement, mask and clean stacks differ in shape")
    norm = float(meta["norm"])
    sampler = sampler or SamplerConfig()
    trace = None
    t0 = time.perf_counter()
    if method == "li":
        out = li_inpaint(y, mask, full_density=full_density_li).data
    else:
        if score_dir is None:
            score_dir = cdir.parent / "scores"
        prim, sec = load_providers(score_dir, sampler)
        d1, d2, d3 = y.data.shape
        if tuple(prim.slice_shape) != (d1, d2) or tuple(sec.slice_shape) != (d2, d3):
            raise ShapeError("score dataset slices do not match the stack")
        meas = Measurement(y.data, mask.data)
        dump = None
        if dump_every:
            ddir = cdir / f"dump_{method}"
            ddir.mkdir(exist_ok=True)

            def dump(i, x):
                io.save_array(ddir / f"x_{i:04d}", x, {"step": i})
        if method == "tpdm":
            out = tpdm_sample(meas, prim, sec, sampler, dump=dump, dump_every=dump_every)
            trace = branch_schedule(sampler.T, sampler.K)
        else:
            out = dps_sample_2d(meas, prim, sampler, dump=dump, dump_every=dump_every)
            trace = [(i, "primary") for i in range(sampler.T - 1, -1, -1)]
    seconds = time.perf_counter() - t0
    inpainted = y.replace(data=out)
    # composite in the line-integral domain so unmasked pixels stay bit-identical to the clean stack
    comp = composite(clean, inpainted.replace(data=out * norm, domain_tag="line-integral"), mask)
    sums = {"inpainted": io.save_stack(cdir / f"inpainted_{method}", inpainted),
            "composite": io.save_stack(cdir / f"composite_{method}", comp)}
    info = {"method": method, "sampler": sampler.to_dict() if method != "li" else None,
            "sample_seconds": seconds, "sha256": sums}
    if trace is not None:
        info["n_primary"] = sum(b == "primary" for _, b in trace)
        info["n_secondary"] = sum(b == "secondary" for _, b in trace)
        info["schedule"] = "".join("P" if b == "primary" else "S" for _, b in trace)
    (cdir / f"inpaint_{method}.json").write_text(json.dumps(info, indent=2, sort_keys=True))
    io.write_run_log(cdir / f"run_inpaint_{method}.json", "inpaint", info, started)
    log(f"{cdir.name}: {method} done in {seconds:.1f}s")
    return info


# ---------------------------------------------------------------- reconstruct

def reconstruct(case_dir, methods=None, window: str = "hann", log=print) -> list[str]:
    started = time.time()
    cdir = Path(case_dir)
    meta = _case_meta(cdir)
    grid = VolumeGrid.from_dict(meta["grid"])
    clean = io.load_stack(_require(cdir / "clean", "clean stack"))
    io.save_volume(cdir / "recon_reference", fdk(clean, clean.geometry, grid, window))
    if methods is None:
        methods = [m for m in METHODS if (cdir / f"composite_{m}.f32").exists()]
    done = []
    for m in methods:
        comp = io.load_stack(_require(cdir / f"composite_{m}", f"composite for {m} (run inpaint first)"))
        io.save_volume(cdir / f"recon_{m}", fdk(comp, comp.geometry, grid, window))
        done.append(m)
    io.write_run_log(cdir / "run_reconstruct.json", "reconstruct", {"methods": done, "window": window}, started)
    log(f"{cdir.name}: reconstructed {', '.join(['reference', *done])}")
    return done


# ---------------------------------------------------------------- evaluate

PER_CASE_FIELDS = ["case", "method", "scope", "ssim", "psnr", "rmse"]


def case_records(case_dir, methods=None, per_slice: bool = False) -> list[dict]:
    """Per-case metric records for every available method plus the uncorrected reconstruction."""
    cdir = Path(case_dir)
    meta = _case_meta(cdir)
    norm = float(meta["norm"])
    ref_stack = io.load_stack(_require(cdir / "clean", "clean stack")).data / norm
    ref_vol = io.load_volume(_require(cdir / "recon_reference", "reference reconstruction")).data
    scale = float(ref_vol.max())
    ref_vol = ref_vol / scale
    if methods is None:
        methods = [m for m in METHODS if (cdir / f"recon_{m}.f32").exists()]
    mask = None
    if methods:
        mask = io.load_stack(_require(cdir / "mask", "mask")).data
    recs = []
    for m in methods:
        comp = io.load_stack(_require(cdir / f"composite_{m}", f"composite for {m}")).data / norm
        vol = io.load_volume(_require(cdir / f"recon_{m}", f"reconstruction for {m}")).data / scale
        recs.append({"case": cdir.name, "method": m, "scope": "projection",
                     **case_metrics(ref_stack, comp, mask, per_slice)})
        recs.append({"case": cdir.name, "method": m, "scope": "reconstruction", **case_metrics(ref_vol, vol)})
    if (cdir / "recon_artefacts.f32").exists():
        vol = io.load_volume(cdir / "recon_artefacts").data / scale
        recs.append({"case": cdir.name, "method": "artefacts", "scope": "reconstruction",
                     **case_metrics(ref_vol, vol)})
    if not methods:
        recs.append({"case": cdir.name, "method": "reference", "scope": "reconstruction",
                     **case_metrics(ref_vol, ref_vol)})
    return recs


def save_case_images(case_dir, methods, window=DIFF_WINDOW) -> None:
    cdir = Path(case_dir)
    ref = io.load_volume(cdir / "recon_reference").data
    scale = float(ref.max())
    save_orthoslices(ref / scale, cdir / "recon_reference.png", (0.0, 1.0), title="reference")
    for m in [*methods, "artefacts"]:
        p = cdir / f"recon_{m}"
        if not Path(str(p) + ".f32").exists():
            continue
        vol = io.load_volume(p).data / scale
        save_orthoslices(vol, cdir / f"recon_{m}.png", (0.0, 1.0), title=m)
        save_orthoslices(vol - ref / scale, cdir / f"diff_{m}.png", window, cmap="coolwarm",
                         title=f"{m} - reference")


def evaluate(case_dirs, out_dir, methods=None, per_slice: bool = False, images: bool = True,
             diff_window=DIFF_WINDOW, log=print) -> list[dict]:
    """Write ``metrics.csv`` (aggregated) and ``metrics_per_case.csv`` under ``out_dir``."""
    started = time.time()
    case_dirs = list(case_dirs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for c in case_dirs:
        recs = case_records(c, methods, per_slice)
        records.extend(recs)
        if images:
            save_case_images(c, sorted({r["method"] for r in recs} - {"artefacts", "reference"}), diff_window)
    rows = aggregate(records)
    order = {m: i for i, m in enumerate([*METHODS, "artefacts", "reference"])}
    rows.sort(key=lambda r: (r.scope, order.get(r.method, 99), r.method))
    write_csv(rows, out / "metrics.csv")
    with open(out / "metrics_per_case.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=PER_CASE_FIELDS)
        w.writeheader()
        for r in records:
            w.writerow({k: (f"{r[k]:.10g}" if isinstance(r[k], float) else r[k]) for k in PER_CASE_FIELDS})
    io.write_run_log(out / "run_evaluate.json", "evaluate",
                     {"cases": [str(c) for c in case_dirs], "per_slice": per_slice}, started)
    log(f"evaluated {len(case_dirs)} case(s): {len(rows)} table rows")
    return records
