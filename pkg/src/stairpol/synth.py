"""Synthetic scenes and sensor models used as ground truth.

Depth maps are orthographic: pixel (row, col) looks along +z at lateral
position ``(col * pitch, row * pitch)`` mm. Polarization rendering follows the
diffuse model of :mod:`stairpol.polarimetry` with a ``rho / 2`` channel
modulation, so the mean-normalized Stokes pipeline recovers ``rho`` exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .errors import InputError
from .normal_fields import ReferenceNormalField
from .polarimetry import DEFAULT_REFRACTIVE_INDEX, PolarRaw, zenith_to_dop
from .registration import RigidTransform, chessboard_corners_world

SCENE_KINDS = ("vplate", "staircase", "plane", "analytic")


@dataclass
class SceneSpec:
    kind: str = "vplate"
    rows: int = 256
    cols: int = 256
    pixel_pitch: float = 0.8
    distance_mm: float = 500.0
    # vplate
    opening_deg: float = 90.0
    # staircase: profile seen from a camera looking down by view_pitch_deg
    steps: int = 4
    rise_mm: float = 150.0
    run_mm: float = 300.0
    view_pitch_deg: float = 45.0
    # analytic: amplitude * sin(x / wavelength) * cos(y / wavelength)
    amplitude_mm: float = 10.0
    wavelength_mm: float = 30.0

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise InputError(f"kind must be one of {SCENE_KINDS}", field="kind")
        for name in ("rows", "cols"):
            if getattr(self, name) < 2:
                raise InputError("grid must be at least 2x2", field=name)
        for name in ("pixel_pitch", "distance_mm", "rise_mm", "run_mm", "wavelength_mm"):
            if not getattr(self, name) > 0:
                raise InputError("must be positive", field=name)
        if not 0 < self.opening_deg < 180:
            raise InputError("V-plate opening must lie in (0, 180) degrees", field="opening_deg")
        if not 0 < self.view_pitch_deg <= 90:
            raise InputError("view pitch must lie in (0, 90] degrees", field="view_pitch_deg")
        if self.steps < 1:
            raise InputError("need at least one step", field="steps")

    def to_dict(self):
        return asdict(self)


@dataclass
class GroundTruth:
    """Mutually consistent oracle bundle for one scene.

    ``azimuth`` is the full-range normal azimuth in [0, 2*pi); ``height`` is
    ``depth - distance``.
    """

    spec: SceneSpec
    height: np.ndarray
    depth: np.ndarray
    normals: ReferenceNormalField
    zenith: np.ndarray
    azimuth: np.ndarray
    cloud: np.ndarray = field(repr=False)

    @property
    def slopes(self):
        return -self.normals.nx, -self.normals.ny


def _grid(spec):
    y, x = np.indices((spec.rows, spec.cols), dtype=float)
    return x * spec.pixel_pitch, y * spec.pixel_pitch


def _vplate(spec, x, y):
    # faces lean back by half the opening from the optical axis; fold between
    # the two central columns so no pixel sits on the crease
    slope = np.tan(np.radians(90.0 - spec.opening_deg / 2.0))
    xc = (spec.cols / 2.0 - 0.5) * spec.pixel_pitch
    h = -slope * np.abs(x - xc)
    dhdx = -slope * np.sign(x - xc)
    return h, dhdx, np.zeros_like(h)


def staircase_profile(spec):
    """Vertices ``(s, d)`` of the stair outline in the image row direction.

    ``s`` is the image coordinate (mm) and ``d`` the depth offset; consecutive
    vertices alternate riser / tread. The outline is centred on ``s = 0``.
    """
    a = np.radians(spec.view_pitch_deg)
    e = np.array([np.sin(a), np.cos(a)])     # image-up direction in (u, w)
    d = np.array([np.cos(a), -np.sin(a)])    # viewing direction in (u, w)
    pts = [(0.0, 0.0)]
    for k in range(spec.steps):
        pts.append((k * spec.run_mm, (k + 1) * spec.rise_mm))
        pts.append(((k + 1) * spec.run_mm, (k + 1) * spec.rise_mm))
    uw = np.asarray(pts)
    s = uw @ e
    dep = uw @ d
    s -= 0.5 * (s[0] + s[-1])
    dep -= 0.5 * (dep.min() + dep.max())
    return s, dep


def _staircase(spec, x, y):
    s_v, d_v = staircase_profile(spec)
    a = np.radians(spec.view_pitch_deg)
    tread_slope = np.cos(a) / np.sin(a)
    # image rows run against the image-up direction; extend with floor/landing
    s_img = (spec.rows - 1) / 2.0 * spec.pixel_pitch - y
    far = 1e6
    s_ext = np.concatenate([[s_v[0] - far], s_v, [s_v[-1] + far]])
    d_ext = np.concatenate([[d_v[0] - far * tread_slope], d_v, [d_v[-1] + far * tread_slope]])
    h = np.interp(s_img, s_ext, d_ext)
    seg = np.clip(np.searchsorted(s_ext, s_img, side="right") - 1, 0, len(s_ext) - 2)
    ds = np.diff(s_ext)
    dd = np.diff(d_ext)
    with np.errstate(divide="ignore", invalid="ignore"):
        seg_slope = np.where(ds > 0, dd / np.where(ds > 0, ds, 1.0), 0.0)
    # d(depth)/d(row) = -d(depth)/ds
    dhdy = -seg_slope[seg]
    return h, np.zeros_like(h), dhdy


def _analytic(spec, x, y):
    k = 1.0 / spec.wavelength_mm
    a = spec.amplitude_mm
    h = a * np.sin(k * x) * np.cos(k * y)
    return h, a * k * np.cos(k * x) * np.cos(k * y), -a * k * np.sin(k * x) * np.sin(k * y)


def make_scene(spec: SceneSpec) -> GroundTruth:
    x, y = _grid(spec)
    if spec.kind == "vplate":
        h, dhdx, dhdy = _vplate(spec, x, y)
    elif spec.kind == "staircase":
        h, dhdx, dhdy = _staircase(spec, x, y)
    elif spec.kind == "analytic":
        h, dhdx, dhdy = _analytic(spec, x, y)
    else:
        h = np.zeros_like(x)
        dhdx = np.zeros_like(x)
        dhdy = np.zeros_like(x)
    depth = spec.distance_mm + h
    if np.any(depth <= 0):
        raise InputError("scene extends behind the camera; increase distance_mm", field="distance_mm")
    nx, ny = -dhdx, -dhdy
    normals = ReferenceNormalField(nx=nx, ny=ny, nz=np.ones_like(nx), valid=np.ones(nx.shape, bool))
    zenith = np.arctan(np.hypot(nx, ny))
    azimuth = np.mod(np.arctan2(ny, nx), 2 * np.pi)
    cloud = np.column_stack([x.ravel(), y.ravel(), depth.ravel()])
    return GroundTruth(spec, h, depth, normals, zenith, azimuth, cloud)


def render_polarization(gt: GroundTruth, n: float = DEFAULT_REFRACTIVE_INDEX, i_un: float = 1.0) -> PolarRaw:
    """Four polarizer channels of a diffuse surface under unpolarized light."""
    theta = np.asarray(gt.zenith, dtype=float)
    grazing = ~(theta < np.pi / 2)
    rho = np.zeros_like(theta)
    rho[~grazing] = zenith_to_dop(theta[~grazing], n)
    phi = gt.azimuth
    chans = [
        np.where(grazing, i_un, i_un * (1.0 + 0.5 * rho * np.cos(2.0 * (np.radians(ang) - phi))))
        for ang in (0.0, 45.0, 90.0, 135.0)
    ]
    return PolarRaw(*chans)


def add_channel_noise(raw: PolarRaw, rel_sigma: float, seed: int, i_ref: float | None = None) -> PolarRaw:
    """Additive Gaussian noise of ``rel_sigma * i_ref`` per channel, clipped at 0."""
    rng = np.random.default_rng(seed)
    ref = float(np.mean(raw.i0)) if i_ref is None else i_ref
    chans = [np.clip(c + rng.normal(0.0, rel_sigma * ref, c.shape), 0.0, None) for c in raw.channels()]
    return PolarRaw(*chans)


def degrade_depth(depth, sigma_mm: float = 0.0, holes=None, seed: int = 0, blob_px: float = 4.0):
    """Noisy copy of a depth map with invalidated (zero) hole regions.

    Args:
        holes: ``None``, a fraction in (0, 1) of pixels to knock out as smooth
            random blobs, or a list of ``(row0, col0, row1, col1)`` rectangles
            (end-exclusive).
    """
    if sigma_mm < 0:
        raise InputError("sigma must be >= 0", field="sigma_mm")
    rng = np.random.default_rng(seed)
    z = np.asarray(depth, dtype=float).copy()
    if sigma_mm > 0:
        z += rng.normal(0.0, sigma_mm, z.shape)
    mask = hole_pattern(z.shape, holes, rng, blob_px)
    z[mask] = 0.0
    return z


def hole_pattern(shape, holes, rng, blob_px: float = 4.0):
    mask = np.zeros(shape, dtype=bool)
    if holes is None:
        return mask
    if isinstance(holes, (int, float)):
        frac = float(holes)
        if not 0 <= frac < 1:
            raise InputError("hole fraction must lie in [0, 1)", field="holes")
        count = int(round(frac * mask.size))
        if count == 0:
            return mask
        field_ = ndimage.gaussian_filter(rng.normal(size=shape), blob_px, mode="wrap")
        idx = np.argsort(field_, axis=None, kind="stable")[-count:]
        mask.flat[idx] = True
        return mask
    for r0, c0, r1, c1 in holes:
        mask[r0:r1, c0:c1] = True
    return mask


def random_rotation(rng, max_angle_rad: float) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle_rad)
    return Rotation.from_rotvec(axis * angle).as_matrix()


def make_calibration_fixture(truth: RigidTransform, poses: int = 20, rows: int = 12, cols: int = 9,
                             square_mm: float = 10.0, noise_mm: float = 0.0, seed: int = 0):
    """Corresponded board-corner clouds seen by two rigidly mounted cameras.

    Camera A (TOF) sees the posed board; camera B (polarization) sees the same
    corners mapped by ``truth``. Independent isotropic noise is added to each.

    Returns ``(pairs, truth)`` with ``pairs`` a list of ``(tof, pol)`` arrays.
    """
    if poses < 1:
        raise InputError("need at least one pose", field="poses")
    rng = np.random.default_rng(seed)
    board = chessboard_corners_world(rows, cols, square_mm)
    board = board - board.mean(axis=0)
    pairs = []
    for _ in range(poses):
        r = random_rotation(rng, np.radians(40.0))
        t = np.array([rng.uniform(-100, 100), rng.uniform(-80, 80), rng.uniform(400.0, 800.0)])
        tof = board @ r.T + t
        pol = truth.apply(tof)
        if noise_mm > 0:
            tof = tof + rng.normal(0.0, noise_mm, tof.shape)
            pol = pol + rng.normal(0.0, noise_mm, pol.shape)
        pairs.append((tof, pol))
    return pairs, truth


def perturb_transform(x: RigidTransform, angle_rad: float, offset_mm: float, rng) -> RigidTransform:
    """Rotate by exactly ``angle_rad`` about a random axis and shift by ``offset_mm``."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    dr = Rotation.from_rotvec(axis * angle_rad).as_matrix()
    return RigidTransform(dr @ x.r, x.t + offset_mm * direction)


# --- point clouds for staircase classification -----------------------------

@dataclass
class StairCloudSpec:
    kind: str = "upstairs"          # upstairs | downstairs | floor_wall
    steps: int = 4
    rise_mm: float = 150.0
    run_mm: float = 300.0
    width_mm: float = 1000.0
    noise_mm: float = 0.0
    image_size: tuple = (288, 216)
    fov_deg: tuple = (60.0, 45.0)
    # camera depression below horizontal and distance to the stair centre
    depression_deg: tuple | None = None
    distance_mm: tuple | None = None

    def pose_ranges(self):
        defaults = {"upstairs": ((24.0, 30.0), (1800.0, 2400.0)),
                    "downstairs": ((45.0, 65.0), (1800.0, 2400.0)),
                    "floor_wall": ((30.0, 40.0), (1800.0, 2200.0))}
        if self.kind not in defaults:
            raise InputError(f"unknown stair cloud kind {self.kind!r}", field="kind")
        dep, dist = defaults[self.kind]
        return tuple(self.depression_deg or dep), tuple(self.distance_mm or dist)


def _stair_faces(steps, rise, run, width):
    """Axis-aligned rectangles ``(axis, value, lo, hi)`` in world (u, v, w)."""
    half = width / 2.0
    faces = []
    for k in range(steps):
        faces.append((0, k * run, np.array([-np.inf, -half, k * rise]), np.array([np.inf, half, (k + 1) * rise])))
        faces.append((2, (k + 1) * rise, np.array([k * run, -half, -np.inf]),
                      np.array([(k + 1) * run, half, np.inf])))
    return faces


def _cast(origin, dirs, faces):
    best_t = np.full(len(dirs), np.inf)
    best_n = np.zeros(len(dirs), dtype=int)
    for i, (axis, value, lo, hi) in enumerate(faces):
        da = dirs[:, axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (value - origin[axis]) / da
        hit = origin + t[:, None] * dirs
        ok = (t > 1e-9) & np.isfinite(t)
        for ax in range(3):
            if ax != axis:
                ok &= (hit[:, ax] >= lo[ax]) & (hit[:, ax] <= hi[ax])
        closer = ok & (t < best_t)
        best_t[closer] = t[closer]
        best_n[closer] = i
    return best_t, best_n


def _look_rotation(forward, up=np.array([0.0, 0.0, 1.0])):
    """World -> camera rotation for a camera with +z along ``forward``."""
    f = forward / np.linalg.norm(forward)
    x = np.cross(f, up)
    x /= np.linalg.norm(x)
    y = np.cross(f, x)
    return np.vstack([x, y, f])


def make_stair_cloud(spec: StairCloudSpec, seed: int = 0, random_pose: bool = True):
    """Ray-cast a depth-camera cloud of a staircase ROI.

    Returns ``(points, gravity, label)`` with points in the camera frame (mm)
    and gravity as a unit vector in the same frame. ``label`` is the scene the
    cloud shows (``"Upstairs"``, ``"Downstairs"`` or ``"Unknown"``).
    """
    rng = np.random.default_rng(seed)
    dep_range, dist_range = spec.pose_ranges()
    depression = np.radians(rng.uniform(*dep_range) if random_pose else np.mean(dep_range))
    dist = rng.uniform(*dist_range) if random_pose else np.mean(dist_range)
    steps, rise, run, width = spec.steps, spec.rise_mm, spec.run_mm, spec.width_mm
    top_u, top_w = steps * run, steps * rise
    centre = np.array([top_u / 2.0, 0.0, top_w / 2.0])
    if spec.kind == "upstairs":
        faces = _stair_faces(steps, rise, run, width)
        origin = centre + dist * np.array([-np.cos(depression), 0.0, np.sin(depression)])
        label = "Upstairs"
    elif spec.kind == "downstairs":
        faces = _stair_faces(steps, rise, run, width)
        origin = centre + dist * np.array([np.cos(depression), 0.0, np.sin(depression)])
        label = "Downstairs"
    elif spec.kind == "floor_wall":
        # a floor strip and a wall behind it; the wall takes about a third
        half = width / 2.0
        depth_u = 2.0 * run * steps
        faces = [
            (2, 0.0, np.array([0.0, -half, -np.inf]), np.array([depth_u, half, np.inf])),
            (0, depth_u, np.array([-np.inf, -half, 0.0]), np.array([np.inf, half, 1.5 * top_w])),
        ]
        centre = np.array([depth_u * 0.6, 0.0, 0.4 * top_w])
        origin = centre + dist * np.array([-np.cos(depression), 0.0, np.sin(depression)])
        label = "Unknown"
    else:
        raise InputError(f"unknown stair cloud kind {spec.kind!r}", field="kind")

    forward = centre - origin
    if random_pose:
        yaw = np.radians(rng.uniform(-15.0, 15.0))
        forward = Rotation.from_rotvec([0.0, 0.0, yaw]).apply(forward)
    world_to_cam = _look_rotation(forward)
    if random_pose:
        roll = Rotation.from_rotvec([0.0, 0.0, np.radians(rng.uniform(-20.0, 20.0))]).as_matrix()
        world_to_cam = roll @ world_to_cam

    w, h = spec.image_size
    fx, fy = np.radians(spec.fov_deg[0]) / 2, np.radians(spec.fov_deg[1]) / 2
    px = np.tan(np.linspace(-fx, fx, w))
    py = np.tan(np.linspace(-fy, fy, h))
    gx, gy = np.meshgrid(px, py)
    dirs_cam = np.column_stack([gx.ravel(), gy.ravel(), np.ones(gx.size)])
    dirs_world = dirs_cam @ world_to_cam
    t, _ = _cast(origin, dirs_world, faces)
    hit = np.isfinite(t)
    pts_world = origin + t[hit, None] * dirs_world[hit]
    pts = (pts_world - origin) @ world_to_cam.T
    if spec.noise_mm > 0:
        pts = pts + rng.normal(0.0, spec.noise_mm, pts.shape)
    gravity = world_to_cam @ np.array([0.0, 0.0, -1.0])
    return pts, gravity, label
