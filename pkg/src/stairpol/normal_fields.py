"""Polarization and depth-derived normal fields, and azimuth ambiguity correction.

All normals use the camera-facing ``nz = 1`` form. For a depth surface
``z(x, y)`` the normal is ``(-dz/dx, -dz/dy, 1)``, so slopes are recovered as
``(p, q) = (-nx, -ny)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InputError
from .polarimetry import AzimuthField, ZenithField

GRAZING_MARGIN = 1e-6


@dataclass(frozen=True)
class PolarizationNormalField:
    nx: np.ndarray
    ny: np.ndarray
    valid: np.ndarray

    @property
    def nz(self):
        return np.ones_like(self.nx)

    @property
    def tan_zenith(self):
        return np.hypot(self.nx, self.ny)


@dataclass(frozen=True)
class ReferenceNormalField:
    nx: np.ndarray
    ny: np.ndarray
    nz: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class GradientField:
    p: np.ndarray
    q: np.ndarray
    valid: np.ndarray

    @property
    def shape(self):
        return self.p.shape


@dataclass(frozen=True)
class CorrectionResult:
    """Output of the two-reference correction.

    ``source`` holds 1 where the binocular reference decided the sign, 2 where
    the TOF reference did, and 0 where no reference was usable.
    """

    normals: PolarizationNormalField
    signs: np.ndarray
    source: np.ndarray

    @property
    def uncorrected(self):
        return self.source == 0


def _same_shape(*named):
    shape = None
    for name, arr in named:
        if shape is None:
            shape = np.shape(arr)
        elif np.shape(arr) != shape:
            raise InputError(f"shape {np.shape(arr)} does not match {shape}", field=name)


def depth_valid(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.isfinite(z) & (z > 0)


def polar_normals(theta: ZenithField, phi: AzimuthField) -> PolarizationNormalField:
    _same_shape(("theta", theta.theta), ("phi", phi.phi))
    th = np.asarray(theta.theta, dtype=float)
    valid = np.asarray(theta.valid, dtype=bool) & (th < np.pi / 2 - GRAZING_MARGIN)
    # zero DoP gives theta = 0 and an undefined angle; the normal is still (0, 0, 1)
    valid &= np.asarray(phi.valid, dtype=bool) | (th == 0)
    t = np.where(valid, np.tan(np.where(valid, th, 0.0)), 0.0)
    ang = np.asarray(phi.phi, dtype=float)
    return PolarizationNormalField(nx=t * np.cos(ang), ny=t * np.sin(ang), valid=valid)


def _axis_gradient(z, axis, spacing):
    """Central differences inside, one-sided at the two ends of ``axis``."""
    z = np.moveaxis(z, axis, 0)
    g = np.empty_like(z)
    if z.shape[0] < 2:
        g[...] = 0.0
    else:
        g[1:-1] = (z[2:] - z[:-2]) / (2.0 * spacing)
        g[0] = (z[1] - z[0]) / spacing
        g[-1] = (z[-1] - z[-2]) / spacing
    return np.moveaxis(g, 0, axis)


def depth_gradients(z, spacing: float = 1.0):
    """``(dz/dx, dz/dy)`` with x along columns and y along rows."""
    z = np.asarray(z, dtype=float)
    return _axis_gradient(z, 1, spacing), _axis_gradient(z, 0, spacing)


_CROSS = ndimage.generate_binary_structure(2, 1)


def depth_to_normals(depth, pixel_pitch: float = 1.0) -> ReferenceNormalField:
    """Reference normals of a depth map (mm) by finite differences.

    Invalid depth (non-finite or <= 0) invalidates its own pixel and its
    4-neighbourhood, since every stencil touching it would be contaminated.
    """
    z = np.asarray(depth, dtype=float)
    if z.ndim != 2:
        raise InputError("depth map must be 2-D", field="depth")
    ok = depth_valid(z)
    if not ok.any():
        raise InputError("depth map has no valid pixels", field="depth")
    if min(z.shape) < 2:
        raise InputError("depth map must be at least 2x2", field="depth")
    filled = np.where(ok, z, 0.0)
    dzdx, dzdy = depth_gradients(filled, pixel_pitch)
    bad = ndimage.binary_dilation(~ok, structure=_CROSS)
    valid = ~bad
    nx = np.where(valid, -dzdx, 0.0)
    ny = np.where(valid, -dzdy, 0.0)
    return ReferenceNormalField(nx=nx, ny=ny, nz=np.ones_like(nx), valid=valid)


def smooth_depth(depth, sigma_px: float) -> np.ndarray:
    """Gaussian smoothing that ignores invalid pixels (normalized convolution).

    Invalid pixels stay invalid (NaN). ``sigma_px <= 0`` returns a copy.
    """
    z = np.asarray(depth, dtype=float)
    ok = depth_valid(z)
    out = np.where(ok, z, np.nan)
    if sigma_px <= 0:
        return out
    num = ndimage.gaussian_filter(np.where(ok, z, 0.0), sigma_px, mode="nearest")
    den = ndimage.gaussian_filter(ok.astype(float), sigma_px, mode="nearest")
    with np.errstate(invalid="ignore", divide="ignore"):
        sm = num / den
    return np.where(ok, sm, np.nan)


def hole_mask(depth, mode: str = "morphology", canny_sigma: float = 1.0) -> np.ndarray:
    """Pixels where the binocular reference cannot be trusted.

    ``morphology`` (default): invalid pixels dilated by one pixel (8-connected),
    then closed with a 3x3 element. ``canny`` additionally dilates the edges of
    the validity map found by a Canny detector, which only matters for
    real captures where holes are bordered by unreliable depth.
    """
    ok = depth_valid(depth)
    invalid = ~ok
    if invalid.all():
        return np.ones_like(invalid)
    if not invalid.any():
        return np.zeros_like(invalid)
    square = np.ones((3, 3), dtype=bool)
    holes = ndimage.binary_dilation(invalid, structure=square)
    if mode == "canny":
        from skimage import feature

        edges = feature.canny(ok.astype(float), sigma=canny_sigma)
        holes |= ndimage.binary_dilation(edges, structure=square)
    elif mode != "morphology":
        raise InputError(f"unknown hole mode {mode!r}", field="mode")
    # border_value=0 would erode the image frame away; pad instead
    padded = np.pad(holes, 1, mode="edge")
    return ndimage.binary_closing(padded, structure=square)[1:-1, 1:-1]


def resolve_signs(nx_p, ny_p, nx_ref, ny_ref) -> np.ndarray:
    """Closed-form per-pixel argmin of the xy residual over sign in {-1, +1}.

    Ties (zero dot product) resolve to +1.
    """
    dot = nx_p * nx_ref + ny_p * ny_ref
    return np.where(dot >= 0, 1, -1).astype(np.int8)


def disambiguate(np_field: PolarizationNormalField, nref, region=None):
    """Flip the xy part of polarization normals that disagree with a reference.

    Returns the corrected field and the sign raster. Pixels outside ``region``
    or invalid in either input keep their value with sign +1.
    """
    _same_shape(("np", np_field.nx), ("nref", nref.nx))
    if region is None:
        region = np.ones(np_field.nx.shape, dtype=bool)
    region = np.asarray(region, dtype=bool)
    _same_shape(("np", np_field.nx), ("region", region))
    # reference normals may come with any positive nz; compare their xy slopes
    rx = nref.nx / nref.nz
    ry = nref.ny / nref.nz
    use = region & np_field.valid & nref.valid
    lam = np.ones(np_field.nx.shape, dtype=np.int8)
    lam[use] = resolve_signs(np_field.nx[use], np_field.ny[use], rx[use], ry[use])
    corrected = PolarizationNormalField(
        nx=np_field.nx * lam, ny=np_field.ny * lam, valid=np_field.valid.copy()
    )
    return corrected, lam


def combine_correction(np_field, nb, nt, holes) -> CorrectionResult:
    """Binocular reference outside the holes, TOF reference inside them.

    Pixels outside the holes whose binocular normal is nevertheless invalid
    also fall back to the TOF reference; pixels usable by neither are left
    as they are and reported through ``source == 0``.
    """
    holes = np.asarray(holes, dtype=bool)
    _same_shape(("np", np_field.nx), ("nb", nb.nx), ("nt", nt.nx), ("holes", holes))
    by_binocular = ~holes & nb.valid
    stage1, lam1 = disambiguate(np_field, nb, by_binocular)
    stage2, lam2 = disambiguate(stage1, nt, ~by_binocular)
    source = np.zeros(holes.shape, dtype=np.uint8)
    source[by_binocular & np_field.valid] = 1
    source[~by_binocular & nt.valid & np_field.valid] = 2
    return CorrectionResult(normals=stage2, signs=lam1 * lam2, source=source)


def normals_to_gradients(nf: PolarizationNormalField) -> GradientField:
    return GradientField(p=-np.asarray(nf.nx, float), q=-np.asarray(nf.ny, float), valid=nf.valid.copy())


def reference_to_gradients(nref: ReferenceNormalField) -> GradientField:
    return GradientField(p=-nref.nx / nref.nz, q=-nref.ny / nref.nz, valid=nref.valid.copy())


def rotate_normals(nref: ReferenceNormalField, rotation) -> ReferenceNormalField:
    """Express reference normals in another camera frame (rotation only).

    Normals that end up facing away from the camera are invalidated.
    """
    r = np.asarray(rotation, dtype=float)
    n = np.stack([nref.nx, nref.ny, nref.nz], axis=-1) @ r.T
    nz = n[..., 2]
    valid = nref.valid & (nz > 1e-9)
    safe = np.where(valid, nz, 1.0)
    return ReferenceNormalField(
        nx=np.where(valid, n[..., 0] / safe, 0.0),
        ny=np.where(valid, n[..., 1] / safe, 0.0),
        nz=np.ones_like(nz),
        valid=valid,
    )
