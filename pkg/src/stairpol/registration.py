"""Rigid registration and TOF / polarization-camera joint calibration.

Point clouds are (N, 3) arrays in millimetres. A transform maps the source
(TOF) frame into the target (polarization) frame: ``q = R p + T``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .errors import DegenerateGeometryError, InputError, NumericalError
from .gwo import GwoConfig, optimize

logger = logging.getLogger(__name__)

ROTATION_BOUND_RAD = 0.1
TRANSLATION_BOUND_MM = 10.0


@dataclass(frozen=True)
class RigidTransform:
    r: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float).reshape(3, 3)
        t = np.asarray(self.t, dtype=float).reshape(3)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_rotvec(cls, rotvec, t):
        return cls(Rotation.from_rotvec(np.asarray(rotvec, float)).as_matrix(), t)

    @classmethod
    def from_matrix(cls, m):
        """From a 3x4 ``[R | T]`` or 4x4 homogeneous matrix."""
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def is_proper(self, tol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.r.T @ self.r, np.eye(3), atol=tol) and abs(np.linalg.det(self.r) - 1) < tol
        )

    def apply(self, points):
        return np.asarray(points, dtype=float) @ self.r.T + self.t

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self`` after ``other``."""
        return RigidTransform(self.r @ other.r, self.r @ other.t + self.t)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.r.T, -self.r.T @ self.t)

    def as_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.r
        m[:3, 3] = self.t
        return m

    def rotvec(self):
        return Rotation.from_matrix(self.r).as_rotvec()

    def to_dict(self):
        return {"r": self.r.tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d):
        if "matrix" in d:
            return cls.from_matrix(d["matrix"])
        if "rotvec" in d:
            return cls.from_rotvec(d["rotvec"], d["t"])
        return cls(d["r"], d["t"])


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InputError("focal lengths must be positive", field="fx/fy")

    @classmethod
    def from_matrix(cls, k):
        k = np.asarray(k, dtype=float)
        return cls(k[0, 0], k[1, 1], k[0, 2], k[1, 2])

    def project(self, points):
        pts = np.asarray(points, dtype=float)
        if np.any(pts[:, 2] <= 0):
            raise InputError("point behind the camera (z <= 0)", field="corners")
        return np.column_stack(
            [self.fx * pts[:, 0] / pts[:, 2] + self.cx, self.fy * pts[:, 1] / pts[:, 2] + self.cy]
        )


@dataclass
class CalibrationResult:
    transform: RigidTransform
    rms_alignment_error: float
    reprojection_error: float
    iterations: int
    icp_fitness: float
    gwo_fitness: float
    icp_trace: np.ndarray
    gwo_trace: np.ndarray

    def to_dict(self):
        return {
            "transform": self.transform.to_dict(),
            "rms_alignment_error_mm": self.rms_alignment_error,
            "reprojection_error_mm": self.reprojection_error,
            "icp_iterations": self.iterations,
            "icp_fitness_mm2": self.icp_fitness,
            "gwo_fitness_mm2": self.gwo_fitness,
        }


# Fixtures from the reference hardware: TOF and polarization camera intrinsics,
# and the reported TOF -> polarization extrinsics (rotation printed to 4 decimals,
# so it is projected onto SO(3) before use).
K_TOF = np.array([[456.4448, 0.0, 336.2882], [0.0, 457.1441, 252.9748], [0.0, 0.0, 1.0]])
K_POL = np.array([[1846.2992, 0.0, 604.0391], [0.0, 1846.9653, 518.9741], [0.0, 0.0, 1.0]])
_REPORTED_RT = np.array(
    [
        [1.0, 0.0007, 0.007, -91.0947],
        [-0.0007, 1.0, -0.0016, 16.5543],
        [-0.007, 0.0016, 1.0, -22.8737],
    ]
)


def nearest_rotation(m) -> np.ndarray:
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def reported_extrinsics() -> RigidTransform:
    return RigidTransform(nearest_rotation(_REPORTED_RT[:, :3]), _REPORTED_RT[:, 3])


def _points(cloud, name):
    pts = np.asarray(cloud, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InputError(f"expected an (N, 3) array, got shape {pts.shape}", field=name)
    if not np.all(np.isfinite(pts)):
        raise InputError("cloud contains non-finite coordinates", field=name)
    return pts


def alignment_error(p, q, x: RigidTransform) -> float:
    """Mean squared residual ``|q_i - (R p_i + T)|^2`` over corresponded pairs (mm^2)."""
    p = _points(p, "p")
    q = _points(q, "q")
    if p.shape != q.shape:
        raise InputError(f"p has {len(p)} points but q has {len(q)}", field="q")
    if len(p) == 0:
        raise InputError("empty clouds", field="p")
    res = q - x.apply(p)
    return float(np.mean(np.sum(res * res, axis=1)))


def best_rigid_transform(p, q) -> RigidTransform:
    """Closed-form least-squares rigid fit of corresponded points (Kabsch / Arun)."""
    p = _points(p, "p")
    q = _points(q, "q")
    if p.shape != q.shape:
        raise InputError(f"p has {len(p)} points but q has {len(q)}", field="q")
    if len(p) < 3:
        raise DegenerateGeometryError("need at least 3 corresponded points", field="p")
    cp = p.mean(axis=0)
    cq = q.mean(axis=0)
    pc = p - cp
    qc = q - cq
    scale = max(np.abs(pc).max(), np.abs(qc).max(), 1e-300)
    sv_p = np.linalg.svd(pc / scale, compute_uv=False)
    if sv_p[1] < 1e-9 * max(sv_p[0], 1e-300) * np.sqrt(len(p)):
        raise DegenerateGeometryError("source points are collinear or coincident", field="p")
    h = pc.T @ qc
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(r, cq - r @ cp)


def icp(p, q, init: RigidTransform | None = None, max_iter: int = 50, tol: float = 1e-10,
        mode: str = "corresponded"):
    """Iterative closest point.

    ``corresponded`` treats index i of both clouds as the same point, so it
    converges in one step; ``nearest`` re-matches each transformed source
    point to its nearest target point every iteration.

    Returns ``(transform, trace)`` where ``trace[0]`` is the error at ``init``.
    """
    p = _points(p, "p")
    q = _points(q, "q")
    if len(p) == 0 or len(q) == 0:
        raise InputError("empty clouds", field="p")
    x = init or RigidTransform.identity()
    if mode == "corresponded":
        if p.shape != q.shape:
            raise InputError("corresponded mode needs equal-length clouds", field="q")
        match = lambda moved: q  # noqa: E731
    elif mode == "nearest":
        tree = cKDTree(q)

        def match(moved):
            _, idx = tree.query(moved)
            return q[idx]
    else:
        raise InputError(f"unknown ICP mode {mode!r}", field="mode")

    matched = match(x.apply(p))
    err = alignment_error(p, matched, x)
    trace = [err]
    for _ in range(max_iter):
        x_new = best_rigid_transform(p, matched)
        matched_new = match(x_new.apply(p))
        err_new = alignment_error(p, matched_new, x_new)
        # refitting and re-matching can each only lower the error; guard rounding
        if err_new > err:
            break
        improvement = err - err_new
        x, matched, err = x_new, matched_new, err_new
        trace.append(err)
        if improvement < tol:
            break
    return x, np.asarray(trace)


def _perturbed(seed: RigidTransform, delta):
    """Seed refined by a 6-vector ``(rotvec, dt)`` applied on the target side."""
    dr = Rotation.from_rotvec(delta[:3]).as_matrix()
    return RigidTransform(dr @ seed.r, seed.t + delta[3:])


def gwo_refine(p, q, seed_transform: RigidTransform, cfg: GwoConfig | None = None,
               rot_bound: float = ROTATION_BOUND_RAD, trans_bound: float = TRANSLATION_BOUND_MM):
    """Polish a transform by minimizing the alignment error with the grey wolf optimizer.

    The search space is a correction ``(rotvec, dt)`` within
    ``+-rot_bound`` rad and ``+-trans_bound`` mm of the seed. The seed itself is
    returned when the optimizer finds nothing better.

    Returns ``(transform, fitness, trace)``.
    """
    p = _points(p, "p")
    q = _points(q, "q")
    seed_fit = alignment_error(p, q, seed_transform)
    bounds = np.array([rot_bound] * 3 + [trans_bound] * 3)
    if cfg is None:
        cfg = GwoConfig(dim=6, lower=-bounds, upper=bounds, pop_size=20, max_iter=100)
    else:
        cfg = GwoConfig(**{**cfg.__dict__, "dim": 6, "lower": -bounds, "upper": bounds})

    # residual as a function of the correction, vectorized over the cloud
    moved = seed_transform.apply(p)
    centroid = moved.mean(axis=0)
    local = moved - centroid
    target = q - centroid

    def fitness(delta):
        dr = Rotation.from_rotvec(delta[:3]).as_matrix()
        res = target - (local @ dr.T + (dr @ centroid - centroid) + delta[3:])
        return float(np.mean(np.einsum("ij,ij->i", res, res)))

    result = optimize(fitness, cfg)
    candidate = _perturbed(seed_transform, result.best)
    cand_fit = alignment_error(p, q, candidate)
    if cand_fit < seed_fit:
        return candidate, cand_fit, result.trace
    return seed_transform, seed_fit, result.trace


def chessboard_corners_world(rows: int, cols: int, square_mm: float) -> np.ndarray:
    """Inner corners of a ``rows x cols`` square board on the z = 0 plane."""
    if rows < 2 or cols < 2:
        raise InputError("board needs at least 2 squares per side", field="rows/cols")
    if square_mm <= 0:
        raise InputError("square size must be positive", field="square_mm")
    ii, jj = np.meshgrid(np.arange(rows - 1), np.arange(cols - 1), indexing="ij")
    pts = np.column_stack([ii.ravel() * square_mm, jj.ravel() * square_mm, np.zeros(ii.size)])
    return pts


def reprojection_error(transform: RigidTransform, k: Intrinsics, corners_3d, corners_observed_px) -> float:
    """Mean reprojection distance, converted to mm at each corner's depth.

    ``corners_3d`` are in the source frame; they are mapped by ``transform``
    and projected with ``k``. Pixel distances are scaled by ``z / f``.
    """
    pts = transform.apply(_points(corners_3d, "corners_3d"))
    obs = np.asarray(corners_observed_px, dtype=float)
    if obs.shape != (len(pts), 2):
        raise InputError("observations must be (N, 2) pixels matching the corners", field="observed")
    proj = k.project(pts)
    d = proj - obs
    mm = np.hypot(d[:, 0] * pts[:, 2] / k.fx, d[:, 1] * pts[:, 2] / k.fy)
    return float(mm.mean())


def rotation_angle_deg(a: RigidTransform, b: RigidTransform) -> float:
    """Angle of the relative rotation between two transforms."""
    # the rotvec norm stays accurate near zero, unlike arccos of the trace
    rel = nearest_rotation(a.r @ b.r.T)
    return float(np.degrees(Rotation.from_matrix(rel).magnitude()))


def joint_calibrate(corners_tof, corners_pol, init: RigidTransform, cfg: GwoConfig | None = None,
                    intrinsics: Intrinsics | None = None, icp_max_iter: int = 50) -> CalibrationResult:
    """Stack all board poses, register them by ICP and polish with the optimizer.

    Args:
        corners_tof: per-pose (N, 3) corner clouds in the TOF frame.
        corners_pol: per-pose (N, 3) corner clouds in the polarization frame,
            index-corresponded with ``corners_tof``.
        init: initial TOF -> polarization transform.
        cfg: optimizer settings (bounds are overridden).
        intrinsics: polarization camera used for the reprojection error;
            defaults to the reference hardware fixture.
    """
    if len(corners_tof) != len(corners_pol):
        raise InputError(
            f"{len(corners_tof)} TOF poses but {len(corners_pol)} polarization poses", field="corners_pol"
        )
    if len(corners_tof) == 0:
        raise InputError("at least one pose pair is needed", field="corners_tof")
    for i, (a, b) in enumerate(zip(corners_tof, corners_pol)):
        if np.shape(a) != np.shape(b):
            raise InputError(f"pose {i}: grid sizes {np.shape(a)} and {np.shape(b)} differ", field="corners_pol")
    p = np.vstack([_points(c, "corners_tof") for c in corners_tof])
    q = np.vstack([_points(c, "corners_pol") for c in corners_pol])

    x_icp, icp_trace = icp(p, q, init, max_iter=icp_max_iter, mode="corresponded")
    icp_fit = alignment_error(p, q, x_icp)
    x_gwo, gwo_fit, gwo_trace = gwo_refine(p, q, x_icp, cfg)
    if not np.isfinite(gwo_fit):
        raise NumericalError("alignment error is not finite", stage="calibrate")
    logger.info("calibration: icp %.6g mm^2 -> gwo %.6g mm^2", icp_fit, gwo_fit)

    k = intrinsics or Intrinsics.from_matrix(K_POL)
    observed = k.project(q)
    reproj = reprojection_error(x_gwo, k, p, observed)
    return CalibrationResult(
        transform=x_gwo,
        rms_alignment_error=float(np.sqrt(gwo_fit)),
        reprojection_error=reproj,
        iterations=len(icp_trace) - 1,
        icp_fitness=icp_fit,
        gwo_fitness=gwo_fit,
        icp_trace=icp_trace,
        gwo_trace=gwo_trace,
    )


def reproject_depth(depth, transform: RigidTransform, pixel_pitch: float) -> np.ndarray:
    """Move an orthographic depth map into another camera frame.

    Each valid pixel becomes the point ``(col * pitch, row * pitch, z)``, is
    mapped by ``transform`` and splatted onto the same grid, keeping the
    nearest surface. Pixels that receive no point become NaN.
    """
    z = np.asarray(depth, dtype=float)
    rows, cols = np.indices(z.shape)
    ok = np.isfinite(z) & (z > 0)
    pts = np.column_stack([cols[ok] * pixel_pitch, rows[ok] * pixel_pitch, z[ok]])
    moved = transform.apply(pts)
    c = np.rint(moved[:, 0] / pixel_pitch).astype(int)
    r = np.rint(moved[:, 1] / pixel_pitch).astype(int)
    inside = (r >= 0) & (r < z.shape[0]) & (c >= 0) & (c < z.shape[1]) & (moved[:, 2] > 0)
    out = np.full(z.shape, np.inf)
    np.minimum.at(out, (r[inside], c[inside]), moved[inside, 2])
    out[~np.isfinite(out)] = np.nan
    return out
