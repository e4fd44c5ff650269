"""End-to-end stages behind the command-line tool.

Each ``run_*`` function reads its inputs from disk, calls the library, and
writes artifacts into an output directory. The in-memory :func:`reconstruct`
is what tests and the CLI share.
"""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import io, synth
from .config import PipelineConfig
from .errors import InputError, NumericalError
from .gwo import BENCHMARKS, GwoConfig, optimize
from .integration import HeightMap, integrate
from .normal_fields import (
    CorrectionResult,
    combine_correction,
    depth_to_normals,
    depth_valid,
    hole_mask,
    normals_to_gradients,
    polar_normals,
    smooth_depth,
)
from .pointcloud import DecisionInputs, SceneLabel, SegmentationParams, decide, segment_and_classify
from .polarimetry import (
    FusionWeights,
    PolarRaw,
    compute_azimuth,
    compute_dop,
    compute_stokes,
    dop_to_zenith,
    fuse_images,
    intensity_image,
)
from .registration import (
    K_POL,
    Intrinsics,
    RigidTransform,
    joint_calibrate,
    reported_extrinsics,
    reproject_depth,
)

logger = logging.getLogger(__name__)

CHANNEL_FILES = ("i0", "i45", "i90", "i135")


@dataclass
class ReconstructionReport:
    """Summary of one reconstruction.

    ``corrected_binocular`` / ``corrected_tof`` count pixels whose azimuth sign
    was fixed against each reference; ``error`` is filled only when a ground
    truth height is available (``alpha`` is max error over target distance).
    """

    shape: tuple
    timings_s: dict
    corrected_binocular: int
    corrected_tof: int
    uncorrected: int
    hole_pixels: int
    height_stats: dict
    error: dict | None = None

    def to_dict(self):
        return {
            "shape": list(self.shape),
            "timings_s": self.timings_s,
            "pixels": {
                "corrected_binocular": self.corrected_binocular,
                "corrected_tof": self.corrected_tof,
                "uncorrected": self.uncorrected,
                "holes": self.hole_pixels,
            },
            "height": self.height_stats,
            "error": self.error,
        }


@dataclass
class Reconstruction:
    height: HeightMap
    depth: np.ndarray
    correction: CorrectionResult
    holes: np.ndarray
    report: ReconstructionReport
    stages: dict = field(default_factory=dict, repr=False)


class _Timer:
    def __init__(self):
        self.timings = {}

    @contextmanager
    def stage(self, name):
        start = time.perf_counter()
        try:
            yield
        except InputError as exc:
            if exc.stage is None:
                raise InputError(str(exc), stage=name) from exc
            raise
        finally:
            self.timings[name] = time.perf_counter() - start


def height_error(estimate, truth, valid=None):
    """Absolute error after removing the mean offset between the two maps."""
    est = np.asarray(estimate, dtype=float)
    ref = np.asarray(truth, dtype=float)
    if est.shape != ref.shape:
        raise InputError(f"truth shape {ref.shape} does not match {est.shape}", field="truth_height")
    mask = np.isfinite(ref) if valid is None else valid & np.isfinite(ref)
    diff = est[mask] - ref[mask]
    return np.abs(diff - diff.mean())


def _smooth_channels(raw: PolarRaw, sigma_px: float) -> PolarRaw:
    if sigma_px <= 0:
        return raw
    return PolarRaw(*(ndimage.gaussian_filter(c, sigma_px, mode="nearest") for c in raw.channels()))


def reconstruct(raw: PolarRaw, binocular_depth, tof_depth, cfg: PipelineConfig | None = None,
                tof_to_pol: RigidTransform | None = None, truth_height=None,
                keep_stages: bool = False) -> Reconstruction:
    """Height map of the scene seen by the polarization camera.

    Args:
        raw: the four polarizer channels.
        binocular_depth: depth (mm) registered to the polarization camera;
            holes are zero or non-finite.
        tof_depth: TOF depth (mm) in the TOF frame.
        tof_to_pol: TOF -> polarization transform; identity when omitted.
        truth_height: optional reference height for the error report.
        keep_stages: keep intermediate rasters in ``Reconstruction.stages``.
    """
    cfg = cfg or PipelineConfig()
    pitch = cfg.pixel_pitch_mm
    timer = _Timer()
    stages = {}
    bino = np.asarray(binocular_depth, dtype=float)
    tof = np.asarray(tof_depth, dtype=float)
    for name, arr in (("binocular_depth", bino), ("tof_depth", tof)):
        if arr.shape != raw.shape:
            raise InputError(f"shape {arr.shape} does not match the polarization channels {raw.shape}",
                             stage="load", field=name)

    with timer.stage("polarimetry"):
        smoothed = _smooth_channels(raw, cfg.reference.channel_smoothing_px)
        stokes = compute_stokes(smoothed)
        dop = compute_dop(stokes)
        phi = compute_azimuth(stokes)
        theta = dop_to_zenith(dop, cfg.refractive_index)
        polar = polar_normals(theta, phi)
        if keep_stages:
            weights = FusionWeights(cfg.fusion.dop_weight, cfg.fusion.i_weight)
            stages.update(dop=dop.rho, azimuth=phi.phi, zenith=theta.theta,
                          fused=fuse_images(dop, intensity_image(smoothed), weights))
    if not polar.valid.any():
        raise InputError("no pixel yields a usable polarization normal", stage="polarimetry")

    with timer.stage("binocular_reference"):
        nb = depth_to_normals(smooth_depth(bino, cfg.reference.binocular_smoothing_px), pitch)
        holes = hole_mask(bino, cfg.reference.hole_mode)

    with timer.stage("tof_reference"):
        if tof_to_pol is not None and not np.allclose(tof_to_pol.as_matrix(), np.eye(4)):
            tof = reproject_depth(tof, tof_to_pol, pitch)
        if not depth_valid(tof).any():
            raise InputError("TOF depth has no valid pixel in the polarization frame", field="tof_depth")
        nt = depth_to_normals(smooth_depth(tof, cfg.reference.tof_smoothing_px), pitch)

    with timer.stage("correction"):
        corr = combine_correction(polar, nb, nt, holes)

    with timer.stage("integration"):
        grads = normals_to_gradients(corr.normals)
        height = integrate(grads, spacing=pitch, boundary=cfg.integration.boundary)
    if not np.all(np.isfinite(height.z)):
        raise NumericalError("integration produced non-finite heights", stage="integration")

    tof_ok = depth_valid(tof)
    depth = height.z - height.z[tof_ok].mean() + tof[tof_ok].mean()
    distance = cfg.distance_mm or float(tof[tof_ok].mean())

    z = height.z
    stats = {"min": float(z.min()), "max": float(z.max()), "mean": float(z.mean()), "std": float(z.std()),
             "distance_mm": distance}
    error = None
    if truth_height is not None:
        err = height_error(z, truth_height)
        error = {"mean_mm": float(err.mean()), "max_mm": float(err.max()),
                 "alpha": float(err.max() / distance)}
    report = ReconstructionReport(
        shape=z.shape,
        timings_s={k: round(v, 6) for k, v in timer.timings.items()},
        corrected_binocular=int(((corr.source == 1) & (corr.signs < 0)).sum()),
        corrected_tof=int(((corr.source == 2) & (corr.signs < 0)).sum()),
        uncorrected=int(corr.uncorrected.sum()),
        hole_pixels=int(holes.sum()),
        height_stats=stats,
        error=error,
    )
    if keep_stages:
        stages.update(polar_nx=polar.nx, polar_ny=polar.ny, binocular_nx=nb.nx, binocular_ny=nb.ny,
                      tof_nx=nt.nx, tof_ny=nt.ny, signs=corr.signs, source=corr.source,
                      p=grads.p, q=grads.q)
    return Reconstruction(height=height, depth=depth, correction=corr, holes=holes, report=report,
                          stages=stages)


# --- file-level runners --------------------------------------------------------

def _ensure_dir(out) -> Path:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc.strerror}", field="out") from exc
    return out


def _require(path, name):
    if path is None:
        raise InputError("path not given", stage="load", field=name)
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: no such file", stage="load", field=name)
    return path


def load_transform(path) -> RigidTransform:
    data = io.read_json(path)
    if isinstance(data, dict) and "transform" in data:
        data = data["transform"]
    try:
        x = RigidTransform.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: expected a transform with r/t, rotvec/t or matrix ({exc})",
                         stage="load", field="calibration") from exc
    if not x.is_proper(1e-6):
        raise InputError(f"{path}: rotation is not proper", stage="load", field="calibration")
    return x


def config_from_dataset(dataset, cfg: PipelineConfig) -> PipelineConfig:
    """Fill missing input paths (and geometry) from a synth dataset manifest."""
    dataset = Path(dataset)
    manifest = io.read_json(dataset / "manifest.json")
    files = manifest.get("files", {})
    updates = {}
    for name, _ in cfg.inputs:
        if getattr(cfg.inputs, name) is None and name in files:
            updates[name] = dataset / files[name]
    new = cfg.model_copy(update={"inputs": cfg.inputs.model_copy(update=updates)})
    scene = manifest.get("scene", {})
    geometry = {}
    if "pixel_pitch" in scene and "pixel_pitch_mm" not in cfg.model_fields_set:
        geometry["pixel_pitch_mm"] = scene["pixel_pitch"]
    if "distance_mm" in scene and cfg.distance_mm is None:
        geometry["distance_mm"] = scene["distance_mm"]
    if "refractive_index" in manifest and "refractive_index" not in cfg.model_fields_set:
        geometry["refractive_index"] = manifest["refractive_index"]
    return new.model_copy(update=geometry) if geometry else new


def run_reconstruct(cfg: PipelineConfig, out, dump_stages: bool = False, figures: bool = True) -> dict:
    """Load inputs named in ``cfg.inputs``, reconstruct, and write artifacts.

    Writes ``height.pfm``, ``depth.pfm``, ``height.ply`` (mesh), ``signs.pgm``,
    ``holes.pgm``, ``report.json`` and ``profile.csv``; with ``dump_stages``
    every intermediate raster goes to ``stages/``.
    """
    inp = cfg.inputs
    chans = [io.read_pfm(_require(getattr(inp, n), n)) for n in CHANNEL_FILES]
    try:
        raw = PolarRaw(*chans)
    except InputError as exc:
        raise InputError(str(exc), stage="load") from exc
    bino = io.read_pfm(_require(inp.binocular_depth, "binocular_depth"))
    tof = io.read_pfm(_require(inp.tof_depth, "tof_depth"))
    x = load_transform(inp.calibration) if inp.calibration is not None else None
    truth = io.read_pfm(inp.truth_height) if inp.truth_height is not None else None

    result = reconstruct(raw, bino, tof, cfg, tof_to_pol=x, truth_height=truth, keep_stages=dump_stages)
    out = _ensure_dir(out)
    z = result.height.z
    io.write_pfm(out / "height.pfm", z)
    io.write_pfm(out / "depth.pfm", result.depth)
    verts, faces = io.height_mesh(result.depth, cfg.pixel_pitch_mm)
    io.write_ply(out / "height.ply", verts, faces)
    io.write_pgm(out / "signs.pgm", result.correction.signs < 0)
    io.write_pgm(out / "holes.pgm", result.holes)
    report = result.report.to_dict()
    report["config"] = cfg.model_dump(mode="json", exclude={"inputs"})
    io.write_json(out / "report.json", report)
    _write_profile(out / "profile.csv", z, truth, cfg.pixel_pitch_mm)
    if dump_stages:
        stage_dir = _ensure_dir(out / "stages")
        for name, arr in result.stages.items():
            io.write_pfm(stage_dir / f"{name}.pfm", np.asarray(arr, dtype=float))
    if figures:
        from . import report as figs

        figs.reconstruction_figures(out, z, truth, result.correction, cfg.pixel_pitch_mm)
    logger.info("reconstruction written to %s", out)
    return report


def _write_profile(path, z, truth, pitch):
    """Middle-row cross-section, optionally against the truth."""
    row = z.shape[0] // 2
    x = np.arange(z.shape[1]) * pitch
    cols = {"x_mm": x, "height_mm": z[row]}
    if truth is not None:
        t = np.asarray(truth, dtype=float)
        cols["truth_mm"] = t[row] - (t - z).mean()
    import csv

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(list(cols))
        for vals in zip(*cols.values()):
            w.writerow([repr(float(v)) for v in vals])


def gwo_config(cfg: PipelineConfig, dim: int, lower, upper, seed: int | None = None) -> GwoConfig:
    g = cfg.gwo
    return GwoConfig(dim=dim, lower=lower, upper=upper, pop_size=g.pop_size, max_iter=g.max_iter,
                     beta=g.beta, seed=g.seed if seed is None else seed, weight_mode=g.weight_mode,
                     levy_enabled=g.levy_enabled, chaotic_init=g.chaotic_init)


def load_calibration_manifest(path):
    """Pose-pair corner clouds, initial transform and intrinsics from a manifest.

    The manifest is JSON: ``{"poses": [{"tof": file, "pol": file}, ...],
    "init": transform, "intrinsics": 3x3 K (optional)}``; corner files are CSV
    or PLY relative to the manifest.
    """
    path = Path(path)
    data = io.read_json(path)
    if not isinstance(data, dict) or not isinstance(data.get("poses"), list) or not data["poses"]:
        raise InputError(f"{path}: manifest needs a non-empty 'poses' list", stage="calibrate", field="poses")
    base = path.parent
    tof, pol = [], []
    for i, pose in enumerate(data["poses"]):
        if not isinstance(pose, dict) or not {"tof", "pol"} <= set(pose):
            raise InputError(f"{path}: pose {i} needs 'tof' and 'pol' entries", stage="calibrate", field="poses")
        tof.append(io.read_cloud(base / pose["tof"]))
        pol.append(io.read_cloud(base / pose["pol"]))
    init = RigidTransform.identity()
    if "init" in data:
        try:
            init = RigidTransform.from_dict(data["init"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}: malformed 'init' transform", stage="calibrate", field="init") from exc
    k = Intrinsics.from_matrix(data.get("intrinsics", K_POL))
    return tof, pol, init, k


def run_calibrate(cfg: PipelineConfig, manifest, out, figures: bool = True) -> dict:
    tof, pol, init, k = load_calibration_manifest(manifest)
    g = cfg.gwo
    bounds = np.array([g.rot_bound_rad] * 3 + [g.trans_bound_mm] * 3)
    result = joint_calibrate(tof, pol, init, cfg=gwo_config(cfg, 6, -bounds, bounds), intrinsics=k)
    out = _ensure_dir(out)
    summary = result.to_dict()
    summary["transform_matrix"] = result.transform.as_matrix()
    io.write_json(out / "calibration.json", summary)
    io.write_trace_csv(out / "gwo_trace.csv", result.gwo_trace)
    io.write_trace_csv(out / "icp_trace.csv", result.icp_trace, column="alignment_error")
    if figures:
        from . import report as figs

        figs.convergence_figure(out / "convergence.png", {"ICP": result.icp_trace, "GWO": result.gwo_trace},
                                ylabel="alignment error (mm$^2$)")
    return summary


def run_classify(cfg: PipelineConfig, cloud_path, out=None, front=None, back=None) -> dict:
    pts = io.read_cloud(_require(cloud_path, "cloud"))
    if len(pts) == 0:
        raise InputError(f"{cloud_path}: cloud is empty", stage="classify", field="cloud")
    s = cfg.segmentation
    params = SegmentationParams(k_neighbors=s.k_neighbors, horiz_angle_deg=s.horiz_angle_deg,
                                vert_angle_deg=s.vert_angle_deg, cluster_tolerance_mm=s.cluster_tolerance_mm,
                                min_cluster_size=s.min_cluster_size)
    seg, label = segment_and_classify(pts, np.asarray(cfg.gravity, dtype=float), params, s.t1, s.t2)
    r1, r2 = seg.ratios
    result = {"label": label.value, "l1": seg.l1, "l2": seg.l2, "l": seg.l_total, "ratios": [r1, r2]}
    if front is not None or back is not None:
        f, b = SceneLabel.parse(front), SceneLabel.parse(back)
        result["cloud_label"] = label.value
        result["label"] = decide(DecisionInputs(front=f, back=b, cloud_seg=label)).value
    if out is not None:
        out = _ensure_dir(out)
        io.write_json(out / "classification.json", result)
        labelled = np.column_stack([pts, seg.labels])
        np.savetxt(out / "labels.csv", labelled, delimiter=",", header="x,y,z,plane", comments="",
                   fmt=["%.6f", "%.6f", "%.6f", "%d"])
    return result


def run_gwo_bench(cfg: PipelineConfig, objective: str, dim: int, out=None, seeds=(0,),
                  bound: float = 5.12, figures: bool = True) -> dict:
    if objective not in BENCHMARKS:
        raise InputError(f"unknown objective {objective!r}; choose from {sorted(BENCHMARKS)}", field="objective")
    f = BENCHMARKS[objective]
    runs = []
    traces = {}
    for seed in seeds:
        res = optimize(f, gwo_config(cfg, dim, -bound, bound, seed=seed))
        runs.append({"seed": seed, "best_fitness": res.best_fitness, "best": res.best,
                     "evaluations": res.evaluations})
        traces[f"seed {seed}"] = res.trace
    fits = np.array([r["best_fitness"] for r in runs])
    summary = {"objective": objective, "dim": dim, "runs": runs, "median_best_fitness": float(np.median(fits)),
               "gwo": cfg.gwo.model_dump()}
    if out is not None:
        out = _ensure_dir(out)
        io.write_json(out / "gwo_bench.json", summary)
        for seed, (name, trace) in zip(seeds, traces.items()):
            io.write_trace_csv(out / f"trace_seed{seed}.csv", trace)
        if figures:
            from . import report as figs

            figs.convergence_figure(out / "convergence.png", traces, ylabel=f"best {objective} value", log=True)
    return summary


# --- synthetic datasets ------------------------------------------------------

@dataclass
class SynthOptions:
    binocular_sigma_mm: float = 0.0
    tof_sigma_mm: float = 0.0
    hole_fraction: float = 0.0
    channel_noise: float = 0.0
    i_un: float = 1.0
    calibration_poses: int = 20
    corner_noise_mm: float = 0.2


def run_synth(spec: synth.SceneSpec, out, seed: int = 0, options: SynthOptions | None = None,
              refractive_index: float = 1.5) -> dict:
    """Write a self-describing synthetic dataset; byte-identical per seed.

    TOF depth is rendered already registered to the polarization camera, so
    ``calibration.json`` holds the identity. A separate corner fixture under
    ``calib/`` (planted with the reference extrinsics) exercises ``calibrate``.
    """
    opt = options or SynthOptions()
    gt = synth.make_scene(spec)
    raw = synth.render_polarization(gt, refractive_index, opt.i_un)
    if opt.channel_noise > 0:
        raw = synth.add_channel_noise(raw, opt.channel_noise, seed=seed)
    holes = opt.hole_fraction if opt.hole_fraction > 0 else None
    bino = synth.degrade_depth(gt.depth, opt.binocular_sigma_mm, holes, seed=seed + 1)
    tof = synth.degrade_depth(gt.depth, opt.tof_sigma_mm, None, seed=seed + 2)

    out = _ensure_dir(out)
    files = {}
    for name, chan in zip(CHANNEL_FILES, raw.channels()):
        files[name] = f"{name}.pfm"
        io.write_pfm(out / files[name], chan)
    files["binocular_depth"] = "binocular_depth.pfm"
    io.write_pfm(out / files["binocular_depth"], bino)
    files["tof_depth"] = "tof_depth.pfm"
    io.write_pfm(out / files["tof_depth"], tof)
    files["truth_height"] = "truth_height.pfm"
    io.write_pfm(out / files["truth_height"], gt.height)
    files["truth_normals"] = "truth_normals.pfm"
    io.write_pfm(out / files["truth_normals"], np.stack([gt.normals.nx, gt.normals.ny, gt.normals.nz], axis=-1))
    files["cloud"] = "cloud.ply"
    io.write_ply(out / files["cloud"], gt.cloud)
    files["calibration"] = "calibration.json"
    io.write_json(out / files["calibration"], {"transform": RigidTransform.identity().to_dict()})

    if opt.calibration_poses > 0:
        calib = _ensure_dir(out / "calib")
        truth = reported_extrinsics()
        pairs, _ = synth.make_calibration_fixture(truth, poses=opt.calibration_poses,
                                                  noise_mm=opt.corner_noise_mm, seed=seed + 3)
        poses = []
        for i, (a, b) in enumerate(pairs):
            io.write_cloud_csv(calib / f"pose{i:02d}_tof.csv", a)
            io.write_cloud_csv(calib / f"pose{i:02d}_pol.csv", b)
            poses.append({"tof": f"pose{i:02d}_tof.csv", "pol": f"pose{i:02d}_pol.csv"})
        io.write_json(calib / "manifest.json", {"poses": poses, "init": RigidTransform.identity().to_dict(),
                                                 "intrinsics": K_POL, "truth": truth.to_dict()})
        files["calibration_manifest"] = "calib/manifest.json"

    manifest = {"scene": spec.to_dict(), "seed": seed, "refractive_index": refractive_index,
                "options": opt.__dict__, "files": files}
    io.write_json(out / "manifest.json", manifest)
    return manifest
