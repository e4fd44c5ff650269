"""Least-squares surface recovery from a gradient field in the Fourier domain.

The solver works with the spectrum of the central-difference operator
(``j*sin(w)/h`` rather than ``j*w``), which makes it the exact pseudo-inverse
of :func:`regenerate_gradients` on the (padded) grid. Non-periodic input is
extended by even mirroring of the surface, i.e. the x-slope is mirrored with
a sign flip across vertical seams and the y-slope across horizontal ones;
border slopes are first rescaled to the reflected stencil.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .normal_fields import GradientField, depth_gradients

FILL_MAX_ITER = 500
FILL_TOL = 1e-8


@dataclass(frozen=True)
class HeightMap:
    """Relative height, zero mean; same length unit as ``spacing``."""

    z: np.ndarray

    @property
    def shape(self):
        return self.z.shape


def fill_invalid(values, valid, max_iter: int = FILL_MAX_ITER, tol: float = FILL_TOL):
    """Fill invalid pixels by repeated averaging of their 4-neighbours.

    Valid pixels are fixed. Stops after ``max_iter`` sweeps or when the
    largest update falls below ``tol``.
    """
    values = np.asarray(values, dtype=float)
    valid = np.asarray(valid, dtype=bool)
    if valid.all():
        return values.copy()
    if not valid.any():
        raise InputError("no valid samples to fill from", field="valid")
    out = np.where(valid, values, values[valid].mean())
    holes = ~valid
    for _ in range(max_iter):
        padded = np.pad(out, 1, mode="edge")
        avg = 0.25 * (padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:])
        delta = np.abs(avg[holes] - out[holes]).max()
        out[holes] = avg[holes]
        if delta < tol:
            break
    return out


def _mirror_pad(p, q):
    """Extend slopes to 2H x 2W consistently with an even-mirrored surface."""
    p_top = np.hstack([p, -p[:, ::-1]])
    p_ext = np.vstack([p_top, p_top[::-1, :]])
    q_top = np.hstack([q, q[:, ::-1]])
    q_ext = np.vstack([q_top, -q_top[::-1, :]])
    return p_ext, q_ext


def _halve_border(p, q):
    """Map one-sided border slopes onto the reflected central-difference stencil.

    On an even-mirrored surface the central difference at the first sample is
    ``(z1 - z0) / 2h``, half the one-sided slope the data carries there.
    """
    p = p.copy()
    q = q.copy()
    if p.shape[1] > 1:
        p[:, [0, -1]] *= 0.5
    if q.shape[0] > 1:
        q[[0, -1], :] *= 0.5
    return p, q


def _derivative_symbols(shape, spacing):
    rows, cols = shape
    wx = 2.0 * np.pi * np.fft.fftfreq(cols)
    wy = 2.0 * np.pi * np.fft.fftfreq(rows)
    dx = 1j * np.sin(wx)[None, :] / spacing
    dy = 1j * np.sin(wy)[:, None] / spacing
    return dx, dy


def _solve_periodic(p, q, spacing):
    dx, dy = _derivative_symbols(p.shape, spacing)
    denom = np.abs(dx) ** 2 + np.abs(dy) ** 2
    num = np.conj(dx) * np.fft.fft2(p) + np.conj(dy) * np.fft.fft2(q)
    # DC and the Nyquist rows/columns are invisible to central differences
    null = denom < 1e-12 * denom.max() if denom.max() > 0 else np.ones_like(denom, bool)
    zhat = np.zeros_like(num)
    np.divide(num, denom, out=zhat, where=~null)
    return np.real(np.fft.ifft2(zhat))


def integrate(g: GradientField, spacing: float = 1.0, boundary: str = "mirror") -> HeightMap:
    """Integrable least-squares height from slopes ``p = dz/dx``, ``q = dz/dy``.

    Args:
        g: gradient field; invalid pixels are gap-filled first.
        spacing: pixel pitch, so that the result is in the same unit.
        boundary: ``"mirror"`` for general input, ``"periodic"`` when the
            field is known to wrap around.
    """
    p = np.asarray(g.p, dtype=float)
    q = np.asarray(g.q, dtype=float)
    if p.ndim != 2 or p.size == 0:
        raise InputError("gradient field must be a non-empty 2-D raster", field="p")
    if q.shape != p.shape:
        raise InputError(f"q shape {q.shape} does not match p shape {p.shape}", field="q")
    valid = np.asarray(g.valid, dtype=bool) & np.isfinite(p) & np.isfinite(q)
    if not valid.any():
        raise InputError("gradient field has no valid pixels", field="valid")
    p = fill_invalid(np.where(valid, p, 0.0), valid)
    q = fill_invalid(np.where(valid, q, 0.0), valid)

    rows, cols = p.shape
    if boundary == "mirror":
        p, q = _halve_border(p, q)
        z = _solve_periodic(*_mirror_pad(p, q), spacing)[:rows, :cols]
    elif boundary == "periodic":
        z = _solve_periodic(p, q, spacing)
    else:
        raise InputError(f"unknown boundary mode {boundary!r}", field="boundary")
    return HeightMap(z=z - z.mean())


def regenerate_gradients(h, spacing: float = 1.0, boundary: str = "mirror") -> GradientField:
    """Central-difference slopes of a height map.

    ``mirror`` uses the stencil of :func:`stairpol.normal_fields.depth_to_normals`
    (one-sided at the border); ``periodic`` wraps around. Either way the result
    is exactly reproduced by :func:`integrate` with the same boundary mode.
    """
    z = np.asarray(h.z if isinstance(h, HeightMap) else h, dtype=float)
    if boundary == "periodic":
        p = (np.roll(z, -1, axis=1) - np.roll(z, 1, axis=1)) / (2 * spacing)
        q = (np.roll(z, -1, axis=0) - np.roll(z, 1, axis=0)) / (2 * spacing)
    elif boundary == "mirror":
        p, q = depth_gradients(z, spacing)
    else:
        raise InputError(f"unknown boundary mode {boundary!r}", field="boundary")
    return GradientField(p=p, q=q, valid=np.ones(z.shape, dtype=bool))


def curl(g: GradientField, spacing: float = 1.0) -> np.ndarray:
    """Discrete ``dq/dx - dp/dy`` (zero for an integrable field)."""
    dqdx = np.gradient(np.asarray(g.q, float), spacing, axis=1)
    dpdy = np.gradient(np.asarray(g.p, float), spacing, axis=0)
    return dqdx - dpdy
