"""Stokes parameters, degree/angle of polarization and the diffuse Fresnel model.

Conventions: ``s0`` is the *mean* of the four polarizer channels, while ``s1``
and ``s2`` are plain differences, so fully modulated light has a DoP of 2.0.
The zenith lookup is calibrated through the same forward model, so only
absolute DoP values depend on this normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

DEFAULT_REFRACTIVE_INDEX = 1.5

# Pixels whose zenith is this close to grazing are treated as a tangent blow-up.
_BISECT_TOL = 1e-10
_BISECT_MAX_ITER = 200


@dataclass(frozen=True)
class PolarRaw:
    """Four co-registered polarizer channels (0, 45, 90, 135 degrees)."""

    i0: np.ndarray
    i45: np.ndarray
    i90: np.ndarray
    i135: np.ndarray

    def __post_init__(self):
        shape = None
        for name in ("i0", "i45", "i90", "i135"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 2 or arr.size == 0:
                raise InputError("channel must be a non-empty 2-D raster", field=name)
            if shape is None:
                shape = arr.shape
            elif arr.shape != shape:
                raise InputError(f"shape {arr.shape} does not match i0 shape {shape}", field=name)
            if not np.all(np.isfinite(arr)):
                raise InputError("channel contains non-finite values", field=name)
            if np.any(arr < 0):
                raise InputError("channel contains negative intensities", field=name)
            object.__setattr__(self, name, arr)

    @property
    def shape(self):
        return self.i0.shape

    def channels(self):
        return self.i0, self.i45, self.i90, self.i135

    def scaled(self, factor: float) -> "PolarRaw":
        return PolarRaw(*(c * factor for c in self.channels()))


@dataclass(frozen=True)
class StokesImage:
    s0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray


@dataclass(frozen=True)
class DopImage:
    rho: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class AzimuthField:
    """Raw polarization angle in [0, pi); the true azimuth is phi or phi + pi."""

    phi: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class ZenithField:
    theta: np.ndarray
    clamped: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class FusionWeights:
    dop_weight: float
    i_weight: float

    def __post_init__(self):
        for name in ("dop_weight", "i_weight"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise InputError("fusion weight must be finite and >= 0", field=name)
            object.__setattr__(self, name, v)


def compute_stokes(raw: PolarRaw) -> StokesImage:
    i0, i45, i90, i135 = raw.channels()
    return StokesImage(
        s0=(i0 + i45 + i90 + i135) / 4.0,
        s1=i0 - i90,
        s2=i45 - i135,
    )


def compute_dop(stokes: StokesImage) -> DopImage:
    """Degree of polarization; pixels with ``s0 == 0`` are flagged invalid."""
    s0 = np.asarray(stokes.s0, dtype=float)
    valid = s0 > 0
    rho = np.zeros_like(s0)
    mag = np.hypot(stokes.s1, stokes.s2)
    np.divide(mag, s0, out=rho, where=valid)
    return DopImage(rho=rho, valid=valid)


def compute_azimuth(stokes: StokesImage) -> AzimuthField:
    s1 = np.asarray(stokes.s1, dtype=float)
    s2 = np.asarray(stokes.s2, dtype=float)
    phi = 0.5 * np.arctan2(s2, s1)
    phi = np.mod(phi, np.pi)
    # mod can round a tiny negative up to exactly pi
    phi[phi >= np.pi] = 0.0
    valid = (s1 != 0) | (s2 != 0)
    return AzimuthField(phi=phi, valid=valid)


def _check_index(n: float) -> float:
    n = float(n)
    if not np.isfinite(n) or n <= 1.0:
        raise InputError(f"refractive index must be > 1, got {n}", field="n")
    return n


def _dop_model(theta, n):
    s2 = np.sin(theta) ** 2
    num = (n - 1.0 / n) ** 2 * s2
    den = 2.0 + 2.0 * n * n - (n + 1.0 / n) ** 2 * s2 + 4.0 * np.cos(theta) * np.sqrt(n * n - s2)
    return num / den


def zenith_to_dop(theta, n: float = DEFAULT_REFRACTIVE_INDEX):
    """Diffuse-reflection DoP as a function of zenith angle.

    Accepts scalars or arrays. Raises :class:`InputError` for ``theta`` outside
    ``[0, pi/2]`` or ``n <= 1``.
    """
    n = _check_index(n)
    th = np.asarray(theta, dtype=float)
    if np.any(~np.isfinite(th)) or np.any(th < 0) or np.any(th > np.pi / 2):
        raise InputError("zenith angle must lie in [0, pi/2]", field="theta")
    out = _dop_model(th, n)
    return float(out) if out.ndim == 0 else out


def max_dop(n: float = DEFAULT_REFRACTIVE_INDEX) -> float:
    return zenith_to_dop(np.pi / 2, n)


def dop_to_zenith(dop: DopImage, n: float = DEFAULT_REFRACTIVE_INDEX) -> ZenithField:
    """Invert the diffuse model per pixel by vectorized bisection.

    The model is monotone on [0, pi/2], so bisection always converges; DoP
    above the grazing maximum is clamped to pi/2 and flagged.
    """
    n = _check_index(n)
    rho = np.asarray(dop.rho, dtype=float)
    valid = np.asarray(dop.valid, dtype=bool) & np.isfinite(rho)
    target = np.where(valid, rho, 0.0)
    rho_max = max_dop(n)
    clamped = valid & (target >= rho_max)

    lo = np.zeros_like(target)
    hi = np.full_like(target, np.pi / 2)
    active = valid & ~clamped & (target > 0)
    for _ in range(_BISECT_MAX_ITER):
        if not np.any(hi[active] - lo[active] > _BISECT_TOL):
            break
        mid = 0.5 * (lo + hi)
        below = _dop_model(mid, n) < target
        lo = np.where(active & below, mid, lo)
        hi = np.where(active & ~below, mid, hi)
    theta = np.where(active, 0.5 * (lo + hi), 0.0)
    theta[clamped] = np.pi / 2
    return ZenithField(theta=theta, clamped=clamped, valid=valid)


def fuse_images(dop: DopImage, intensity, w: FusionWeights) -> np.ndarray:
    intensity = np.asarray(intensity, dtype=float)
    rho = np.asarray(dop.rho, dtype=float)
    if intensity.shape != rho.shape:
        raise InputError(
            f"intensity shape {intensity.shape} does not match DoP shape {rho.shape}",
            field="intensity",
        )
    return w.dop_weight * rho + w.i_weight * intensity


def rms_contrast(image) -> float:
    """Standard deviation over mean; 0 for a zero-mean image."""
    arr = np.asarray(image, dtype=float)
    if arr.size == 0:
        raise InputError("image is empty", field="image")
    mean = arr.mean()
    if mean == 0:
        return 0.0
    return float(arr.std() / mean)


def intensity_image(raw: PolarRaw) -> np.ndarray:
    """Unpolarized intensity (the ``s0`` raster)."""
    return compute_stokes(raw).s0
