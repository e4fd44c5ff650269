"""Command-line entry point: ``stairpol <subcommand> [options]``.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, pipeline, synth
from .config import CONFIG_ENV_VAR, load_config
from .errors import InputError, NumericalError

logger = logging.getLogger("stairpol")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERICAL = 2


def _common(parser, out_default):
    parser.add_argument("--config", type=Path, default=None,
                        help=f"JSON pipeline config (default: ${CONFIG_ENV_VAR}, else built-in defaults)")
    parser.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    if out_default is None:
        parser.add_argument("--out", type=Path, default=None, help="output directory (default: print only)")
    else:
        parser.add_argument("--out", type=Path, default=Path(out_default),
                            help=f"output directory (default {out_default})")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stairpol",
        description="Polarization + depth staircase reconstruction, calibration and classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    _common(p, "dataset")
    p.add_argument("--kind", choices=synth.SCENE_KINDS, default="vplate")
    p.add_argument("--rows", type=int, default=256)
    p.add_argument("--cols", type=int, default=256)
    p.add_argument("--pitch", type=float, default=0.8, help="pixel pitch in mm")
    p.add_argument("--distance", type=float, default=500.0, help="camera distance in mm")
    p.add_argument("--opening", type=float, default=90.0, help="V-plate opening angle in degrees")
    p.add_argument("--steps", type=int, default=4)
    p.add_argument("--rise", type=float, default=150.0)
    p.add_argument("--run", type=float, default=300.0)
    p.add_argument("--view-pitch", type=float, default=45.0, help="staircase viewing angle in degrees")
    p.add_argument("--amplitude", type=float, default=10.0)
    p.add_argument("--wavelength", type=float, default=30.0)
    p.add_argument("--refractive-index", type=float, default=1.5)
    p.add_argument("--binocular-sigma", type=float, default=0.0, help="binocular depth noise (mm)")
    p.add_argument("--tof-sigma", type=float, default=0.0, help="TOF depth noise (mm)")
    p.add_argument("--holes", type=float, default=0.0, help="fraction of binocular pixels knocked out")
    p.add_argument("--channel-noise", type=float, default=0.0, help="relative polarizer channel noise")
    p.add_argument("--poses", type=int, default=20, help="calibration board poses (0 to skip)")
    p.add_argument("--corner-noise", type=float, default=0.2, help="corner noise (mm)")
    p.add_argument("--stair-cloud", choices=("upstairs", "downstairs", "floor_wall"), default=None,
                   help="also write a ray-cast depth-camera cloud for classification")
    p.add_argument("--cloud-noise", type=float, default=2.0, help="stair cloud noise (mm)")

    p = sub.add_parser("calibrate", help="joint TOF / polarization calibration from board corners")
    _common(p, "calibration")
    p.add_argument("manifest", type=Path, nargs="?", default=None,
                   help="calibration manifest JSON (default: config inputs.calibration_manifest)")

    p = sub.add_parser("reconstruct", help="polarization + depth surface reconstruction")
    _common(p, "reconstruction")
    p.add_argument("dataset", type=Path, nargs="?", default=None,
                   help="synthetic dataset directory; fills inputs missing from the config")
    p.add_argument("--dump-stages", action="store_true", help="write every intermediate raster")
    p.add_argument("--no-figures", action="store_true", help="skip the PNG figures")

    p = sub.add_parser("classify", help="upstairs / downstairs classification of a point cloud")
    _common(p, None)
    p.add_argument("cloud", type=Path, nargs="?", default=None, help="PLY or CSV cloud (mm)")
    p.add_argument("--gravity", type=float, nargs=3, default=None, metavar=("GX", "GY", "GZ"),
                   help="gravity direction in the cloud frame")
    p.add_argument("--front", default=None, help="label of the front-frame detector")
    p.add_argument("--back", default=None, help="label of the back-frame detector")

    p = sub.add_parser("gwo-bench", help="run the optimizer on a test objective")
    _common(p, "gwo_bench")
    p.add_argument("--objective", default="sphere", help="sphere, rastrigin or rosenbrock")
    p.add_argument("--dim", type=int, default=5)
    p.add_argument("--runs", type=int, default=1, help="number of seeds, starting at --seed")
    p.add_argument("--bound", type=float, default=5.12, help="search box half-width")
    p.add_argument("--no-figures", action="store_true")
    return parser


def _cmd_synth(args, cfg):
    spec = synth.SceneSpec(kind=args.kind, rows=args.rows, cols=args.cols, pixel_pitch=args.pitch,
                           distance_mm=args.distance, opening_deg=args.opening, steps=args.steps,
                           rise_mm=args.rise, run_mm=args.run, view_pitch_deg=args.view_pitch,
                           amplitude_mm=args.amplitude, wavelength_mm=args.wavelength)
    opts = pipeline.SynthOptions(binocular_sigma_mm=args.binocular_sigma, tof_sigma_mm=args.tof_sigma,
                                 hole_fraction=args.holes, channel_noise=args.channel_noise,
                                 calibration_poses=args.poses, corner_noise_mm=args.corner_noise)
    for name in ("binocular_sigma_mm", "tof_sigma_mm", "channel_noise", "corner_noise_mm"):
        if getattr(opts, name) < 0:
            raise InputError("must be >= 0", field=name)
    if args.poses < 0:
        raise InputError("must be >= 0", field="poses")
    manifest = pipeline.run_synth(spec, args.out, seed=args.seed, options=opts,
                                  refractive_index=args.refractive_index)
    if args.stair_cloud:
        pts, gravity, label = synth.make_stair_cloud(
            synth.StairCloudSpec(kind=args.stair_cloud, noise_mm=args.cloud_noise), seed=args.seed)
        io.write_ply(args.out / "stair_cloud.ply", pts)
        io.write_json(args.out / "stair_cloud.json", {"gravity": gravity, "label": label, "kind": args.stair_cloud})
        manifest["files"]["stair_cloud"] = "stair_cloud.ply"
        io.write_json(args.out / "manifest.json", manifest)
    return {"out": str(args.out), "files": manifest["files"]}


def _cmd_calibrate(args, cfg):
    manifest = args.manifest or cfg.inputs.calibration_manifest
    if manifest is None:
        raise InputError("give a manifest path or set inputs.calibration_manifest", stage="calibrate",
                         field="manifest")
    if args.seed:
        cfg = cfg.model_copy(update={"gwo": cfg.gwo.model_copy(update={"seed": args.seed})})
    return pipeline.run_calibrate(cfg, manifest, args.out)


def _cmd_reconstruct(args, cfg):
    if args.dataset is not None:
        cfg = pipeline.config_from_dataset(args.dataset, cfg)
    report = pipeline.run_reconstruct(cfg, args.out, dump_stages=args.dump_stages, figures=not args.no_figures)
    report.pop("config", None)
    return report


def _cmd_classify(args, cfg):
    cloud = args.cloud or cfg.inputs.cloud
    if args.gravity is not None:
        if not np.any(args.gravity):
            raise InputError("gravity must be non-zero", field="gravity")
        cfg = cfg.model_copy(update={"gravity": tuple(args.gravity)})
    return pipeline.run_classify(cfg, cloud, out=args.out, front=args.front, back=args.back)


def _cmd_gwo_bench(args, cfg):
    if args.dim < 1 or args.runs < 1:
        raise InputError("dim and runs must be positive", field="dim/runs")
    if args.bound <= 0:
        raise InputError("bound must be positive", field="bound")
    seeds = tuple(range(args.seed, args.seed + args.runs))
    summary = pipeline.run_gwo_bench(cfg, args.objective, args.dim, out=args.out, seeds=seeds,
                                     bound=args.bound, figures=not args.no_figures)
    return {k: summary[k] for k in ("objective", "dim", "median_best_fitness")}


COMMANDS = {
    "synth": _cmd_synth,
    "calibrate": _cmd_calibrate,
    "reconstruct": _cmd_reconstruct,
    "classify": _cmd_classify,
    "gwo-bench": _cmd_gwo_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        result = COMMANDS[args.command](args, cfg)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(json.dumps(io.to_jsonable(result), indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
