"""Command-line entry point: ``tpdm-ct <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 implant placement error,
4 shape mismatch, 5 missing inputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench, kernels, pipeline
from .phantom import ImplantError
from .sampler import SamplerConfig

EXIT_CONFIG, EXIT_IMPLANT, EXIT_SHAPE, EXIT_INPUT = 2, 3, 4, 5


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise pipeline.ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(cfg, dict):
        raise pipeline.ConfigError("config must be a JSON object")
    return cfg


def _sampler(args) -> SamplerConfig:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        return SamplerConfig.from_dict(cfg)
    except (TypeError, ValueError) as e:
        raise pipeline.ConfigError(str(e)) from e


def cmd_generate(args):
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    pipeline.generate(cfg, args.out)


def cmd_corrupt(args):
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    for c in args.cases:
        pipeline.corrupt(c, cfg, debug_mono=args.debug_mono)


def cmd_inpaint(args):
    sampler = _sampler(args) if args.method != "li" else SamplerConfig()
    for c in args.cases:
        pipeline.inpaint(c, args.method, sampler, args.scores, dump_every=args.dump_every,
                         full_density_li=args.full_density)


def cmd_reconstruct(args):
    for c in args.cases:
        pipeline.reconstruct(c, args.method and [args.method], window=args.window)


def cmd_evaluate(args):
    pipeline.evaluate(args.cases, args.out, args.method and [args.method], per_slice=args.per_slice,
                      images=not args.no_images, diff_window=tuple(args.diff_window))


def cmd_bench(args):
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    v = bench.run_benchmark(cfg, args.out)
    print(json.dumps({k: v[k] for k in ("ordering_projection", "ordering_pass",
                                        "wall_time_ratio_dps_over_tpdm")}, indent=2))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tpdm-ct", description="Cone-beam CT implant-trace inpainting pipeline")
    ap.add_argument("--threads", type=int, default=1, help="worker cap for compiled kernels")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_help):
        p.add_argument("--config", help=config_help)
        p.add_argument("--seed", type=int)

    p = sub.add_parser("generate", help="phantom cases, clean stacks and score datasets")
    common(p, "generate config JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("corrupt", help="insert implants and simulate the measurement")
    common(p, "implant config JSON")
    p.add_argument("cases", nargs="+")
    p.add_argument("--debug-mono", action="store_true", help="single-energy beam without counting noise")
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("inpaint", help="fill implant traces")
    common(p, "sampler config JSON")
    p.add_argument("cases", nargs="+")
    p.add_argument("--method", choices=pipeline.METHODS, required=True)
    p.add_argument("--scores", help="score dataset directory (default: <dataset>/scores)")
    p.add_argument("--dump-every", type=int, default=0, metavar="S", help="save X_i every S steps")
    p.add_argument("--full-density", action="store_true", help="LI over all known pixels")
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("reconstruct", help="FDK of the reference and composite stacks")
    p.add_argument("cases", nargs="+")
    p.add_argument("--method", choices=pipeline.METHODS)
    p.add_argument("--window", choices=("hann", "ramlak"), default="hann")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="metrics table and images")
    p.add_argument("cases", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=pipeline.METHODS)
    p.add_argument("--per-slice", action="store_true", help="average projection SSIM per slice")
    p.add_argument("--no-images", action="store_true")
    p.add_argument("--diff-window", type=float, nargs=2, default=list(pipeline.DIFF_WINDOW))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="run the seeded comparison suite")
    common(p, "suite config JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    kernels.set_num_threads(args.threads)
    try:
        args.func(args)
    except pipeline.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ImplantError as e:
        print(f"implant error: {e}", file=sys.stderr)
        return EXIT_IMPLANT
    except pipeline.ShapeError as e:
        print(f"shape mismatch: {e}", file=sys.stderr)
        return EXIT_SHAPE
    except (pipeline.InputError, FileNotFoundError) as e:
        print(f"missing input: {e}", file=sys.stderr)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
