import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elg.filtering import MIN_SAMPLES, calderon_filter, spline_densify
from elg.forward import rigid_modes
from elg.geometry import EllipseCurve, sample_boundary
from elg.kernels import kernel_constants, kelvin_matrix, traction_kernel
from elg.potentials import apply_single_layer, assemble_operators

ELLIPSE = EllipseCurve((0.0, 0.0), 10.0, 7.0)


def test_min_samples():
    assert MIN_SAMPLES == 8
    t = np.arange(7) / 7
    with pytest.raises(ValueError):
        spline_densify(np.zeros((1, 7, 2)), t, 64)


def test_unsorted_parameters_rejected():
    t = np.arange(8) / 8
    with pytest.raises(ValueError):
        spline_densify(np.zeros((1, 8, 2)), t[::-1], 64)


# [DERIVED] interpolation error of a periodic cubic spline on a smooth function
def test_spline_densify_sine():
    R, P = 32, 512
    t = np.arange(R) / R
    f = lambda s: np.stack([np.sin(2 * np.pi * s), np.cos(4 * np.pi * s)], -1)
    dense = spline_densify(f(t)[None], t, P)[0]
    assert np.abs(dense - f(np.arange(P) / P)).max() <= 1e-3


def test_spline_copies_node_values():
    rng = np.random.default_rng(0)
    t = np.arange(16) / 16
    v = rng.standard_normal((3, 16, 2))
    dense = spline_densify(v, t, 256)
    np.testing.assert_array_equal(dense[:, ::16], v)


def test_spline_partial_aperture():
    t = 0.75 * np.arange(16) / 15
    v = np.ones((1, 16, 2))
    dense = spline_densify(v, t, 128)
    np.testing.assert_allclose(dense, 1.0, atol=1e-12)


@settings(deadline=None, max_examples=20)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_spline_linear(a, b):
    rng = np.random.default_rng(1)
    t = np.arange(12) / 12
    u, v = rng.standard_normal((2, 1, 12, 2))
    np.testing.assert_allclose(spline_densify(a * u + b * v, t, 96),
                               a * spline_densify(u, t, 96) + b * spline_densify(v, t, 96), atol=1e-10)


@pytest.fixture(scope="module")
def setup():
    bd = sample_boundary(ELLIPSE, 400)
    k = kernel_constants(1.0, 1.0)
    return bd, k


# [DERIVED] Somigliana on the boundary: for an exterior-source field, (K - I/2) u = S[traction]
def test_filter_of_exterior_source_field(setup):
    bd, k = setup
    z = np.array([13.0, 8.0])
    u = kelvin_matrix(bd.nodes - z, k)[:, :, 0]
    g = traction_kernel(z, bd.nodes, bd.normals, k)[:, 0, :]
    out = calderon_filter(u[None], bd, k, bd.t)
    ref = apply_single_layer(bd, k, g)
    assert np.linalg.norm(out.Y[0] - ref) <= 1e-6 * np.linalg.norm(ref)


def test_filter_annihilates_rigid_motions(setup):
    bd, k = setup
    out = calderon_filter(rigid_modes(bd.nodes), bd, k, np.array([0.0, 0.3, 0.77]))
    np.testing.assert_allclose(out.Y, 0.0, atol=1e-10)


def test_filter_zero_linear_and_ops_path(setup):
    bd, k = setup
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((2, 2, bd.P, 2))
    t = np.arange(32) / 32
    np.testing.assert_array_equal(calderon_filter(np.zeros((1, bd.P, 2)), bd, k, t).Y, 0.0)
    f = lambda v: calderon_filter(v, bd, k, t).Y
    np.testing.assert_allclose(f(2 * a - b), 2 * f(a) - f(b), atol=1e-10)
    ops = assemble_operators(bd, k)
    np.testing.assert_allclose(calderon_filter(a, bd, k, t, ops=ops).Y, f(a), atol=1e-11)


def test_filter_layouts(setup):
    bd, k = setup
    rng = np.random.default_rng(3)
    out = calderon_filter(rng.standard_normal((3, bd.P, 2)), bd, k, np.arange(8) / 8)
    Ymat = out.as_matrix()
    assert Ymat.shape == (16, 3)
    assert Ymat[1 * 8 + 5, 2] == out.Y[2, 5, 1]
    v = out.as_vector()
    assert v[2 * 16 + 1 * 8 + 5] == out.Y[2, 5, 1]


def test_filter_shape_mismatch(setup):
    bd, k = setup
    with pytest.raises(ValueError):
        calderon_filter(np.zeros((1, 100, 2)), bd, k, [0.0])
