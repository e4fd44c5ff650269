import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stairpol.errors import InputError
from stairpol.integration import HeightMap, curl, fill_invalid, integrate, regenerate_gradients
from stairpol.normal_fields import GradientField


def gfield(p, q, valid=None):
    return GradientField(p=p, q=q, valid=np.ones(p.shape, bool) if valid is None else valid)


def test_zero_field_gives_flat_surface():
    h = integrate(gfield(np.zeros((16, 16)), np.zeros((16, 16))))
    np.testing.assert_allclose(h.z, 0.0, atol=1e-14)


def test_periodic_sinusoid_rmse():
    n = 64
    y, x = np.mgrid[0:n, 0:n] * (2 * np.pi / n)
    z = np.sin(x) * np.cos(y)
    p = np.cos(x) * np.cos(y) * (2 * np.pi / n)
    q = -np.sin(x) * np.sin(y) * (2 * np.pi / n)
    h = integrate(gfield(p, q), boundary="periodic")
    rmse = np.sqrt(np.mean((h.z - (z - z.mean())) ** 2))
    # the central-difference symbol introduces an O(h^2) amplitude error
    assert rmse / np.ptp(z) < 0.01


@pytest.mark.parametrize("boundary", ["mirror", "periodic"])
def test_integration_is_exact_inverse_of_regeneration(boundary):
    rng = np.random.default_rng(5)
    rows, cols = 24, 31
    y, x = np.mgrid[0:rows, 0:cols].astype(float)
    z = 0.02 * x**2 - 0.5 * y + np.sin(x / 3) + 0.1 * rng.normal(size=(rows, cols))
    if boundary == "periodic":
        z = np.sin(2 * np.pi * x / cols) + np.cos(4 * np.pi * y / rows)
    g = regenerate_gradients(HeightMap(z - z.mean()), spacing=0.7, boundary=boundary)
    h = integrate(g, spacing=0.7, boundary=boundary)
    g2 = regenerate_gradients(h, spacing=0.7, boundary=boundary)
    np.testing.assert_allclose(g2.p, g.p, atol=1e-9)
    np.testing.assert_allclose(g2.q, g.q, atol=1e-9)
    np.testing.assert_allclose(integrate(g2, 0.7, boundary).z, h.z, atol=1e-9)


def test_plane_recovered_exactly():
    y, x = np.mgrid[0:20, 0:30].astype(float)
    z = 2 * x - 3 * y
    h = integrate(gfield(np.full(z.shape, 2.0), np.full(z.shape, -3.0)))
    np.testing.assert_allclose(h.z, z - z.mean(), atol=1e-9)


def test_spacing_scales_height():
    y, x = np.mgrid[0:10, 0:10].astype(float)
    h = integrate(gfield(np.ones((10, 10)), np.zeros((10, 10))), spacing=0.5)
    np.testing.assert_allclose(h.z, 0.5 * x - (0.5 * x).mean(), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.floats(-5, 5), c=st.floats(-5, 5))
def test_linearity(seed, k, c):
    rng = np.random.default_rng(seed)
    g1 = gfield(*rng.normal(size=(2, 8, 9)))
    g2 = gfield(*rng.normal(size=(2, 8, 9)))
    combo = gfield(k * g1.p + c * g2.p, k * g1.q + c * g2.q)
    np.testing.assert_allclose(integrate(combo).z, k * integrate(g1).z + c * integrate(g2).z, atol=1e-9)


def test_curl_of_regenerated_field_small_and_of_rotation_large():
    y, x = np.mgrid[0:16, 0:16].astype(float)
    g = regenerate_gradients(x**2 + x * y)
    assert np.abs(curl(g)[2:-2, 2:-2]).max() < 1e-9
    rot = gfield(-(y - 8), x - 8)
    np.testing.assert_allclose(curl(rot), 2.0)


def test_fill_invalid_harmonic():
    v = np.arange(10, dtype=float)[None, :].repeat(5, axis=0)
    valid = np.ones_like(v, bool)
    valid[:, 3:7] = False
    out = fill_invalid(np.where(valid, v, 0.0), valid, max_iter=5000, tol=1e-12)
    # a linear ramp is harmonic, so averaging restores it
    np.testing.assert_allclose(out, v, atol=1e-6)
    with pytest.raises(InputError):
        fill_invalid(v, np.zeros_like(valid))


def test_integrate_with_invalid_pixels():
    y, x = np.mgrid[0:20, 0:20].astype(float)
    valid = np.ones((20, 20), bool)
    valid[8:12, 8:12] = False
    p = np.where(valid, 1.0, np.nan)
    q = np.where(valid, 0.0, np.nan)
    h = integrate(gfield(p, q, valid))
    np.testing.assert_allclose(h.z, x - x.mean(), atol=1e-5)


def test_integrate_errors():
    with pytest.raises(InputError):
        integrate(gfield(np.zeros((3, 3)), np.zeros((3, 4))))
    with pytest.raises(InputError):
        integrate(gfield(np.zeros((3, 3)), np.zeros((3, 3)), np.zeros((3, 3), bool)))
    with pytest.raises(InputError):
        integrate(gfield(np.zeros((3, 3)), np.zeros((3, 3))), boundary="dirichlet")
