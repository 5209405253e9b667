import warnings

import numpy as np
import pytest

from elg.forward import rigid_modes
from elg.geometry import EllipseCurve, KiteCurve, sample_boundary
from elg.kernels import kernel_constants, kelvin_matrix, traction_kernel
from elg.potentials import (NearBoundaryWarning, adjoint_layer_matrix, apply_double_layer,
                            apply_single_layer, assemble_operators, double_layer_matrix,
                            eval_double_layer, eval_single_layer, eval_single_layer_gradient, from_vec,
                            single_layer_matrix, to_vec)

ELLIPSE = EllipseCurve((0.0, 0.0), 10.0, 7.0)


def smooth_density(t, seed=0, modes=4):
    rng = np.random.default_rng(seed)
    out = np.zeros((len(t), 2))
    for m in range(modes):
        c = rng.standard_normal((2, 2))
        out += c[0] * np.cos(2 * np.pi * m * t)[:, None] + c[1] * np.sin(2 * np.pi * m * t)[:, None]
    return out


@pytest.fixture(scope="module")
def ops128():
    return assemble_operators(sample_boundary(ELLIPSE, 128), kernel_constants(1.0, 1.0))


def test_blocked_layout_round_trip():
    phi = np.arange(10.0).reshape(5, 2)
    v = to_vec(phi)
    np.testing.assert_array_equal(v[:5], phi[:, 0])
    np.testing.assert_array_equal(from_vec(v, 5), phi)


# [TRIVIAL] construction through the quadrature weights
def test_adjointness(ops128):
    rng = np.random.default_rng(0)
    for _ in range(5):
        phi, psi = rng.standard_normal((2, 256))
        lhs = ops128.inner(ops128.K @ phi, psi)
        rhs = ops128.inner(phi, ops128.Kstar @ psi)
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


# [DERIVED] the assembled adjoint rows agree with the transposed-kernel construction
def test_adjoint_rows_match_adjoint_matrix(ops128):
    np.testing.assert_allclose(adjoint_layer_matrix(ops128.bd, ops128.k), ops128.Kstar, atol=1e-12)


# [DERIVED] rigid motions are interior elastic fields with zero traction, so K psi = psi / 2
def test_rigid_motions_in_calderon_kernel(ops128):
    for psi in rigid_modes(ops128.bd.nodes):
        v = to_vec(psi)
        np.testing.assert_allclose(ops128.calderon() @ v, 0.0, atol=1e-12)


# [DERIVED] refinement oracle for the disk spectrum
def test_disk_spectrum_refinement_stable():
    k = kernel_constants(1.0, 1.0)
    disk = EllipseCurve((0.0, 0.0), 1.0, 1.0)
    ev = [np.sort(np.linalg.eigvals(double_layer_matrix(sample_boundary(disk, P), k)).real)
          for P in (64, 128)]
    for lam in ev[0]:
        assert np.min(np.abs(ev[1] - lam)) <= 1e-3
    # the largest eigenvalue is 1/2 (rigid motions), the spectrum lies in (-1/2, 1/2]
    assert ev[1].max() == pytest.approx(0.5, abs=1e-10)
    assert ev[1].min() > -0.5


# [DERIVED] self-convergence of the Nyström rules on a smooth density
@pytest.mark.parametrize("curve", [ELLIPSE, KiteCurve((0.5, 0.0), 3.0)])
def test_operator_self_convergence(curve):
    k = kernel_constants(1.0, 1.0)
    res = {}
    for P in (256, 512):
        bd = sample_boundary(curve, P)
        phi = smooth_density(bd.t)
        res[P] = (apply_single_layer(bd, k, phi), apply_double_layer(bd, k, phi))
    for a, b in zip(res[256], res[512]):
        assert np.linalg.norm(a - b[::2]) <= 1e-8 * np.linalg.norm(b)


def test_apply_matches_assembled(ops128):
    phi = smooth_density(ops128.bd.t, seed=2)
    np.testing.assert_allclose(to_vec(apply_single_layer(ops128.bd, ops128.k, phi)), ops128.S @ to_vec(phi),
                               atol=1e-13)
    np.testing.assert_allclose(to_vec(apply_double_layer(ops128.bd, ops128.k, phi)), ops128.K @ to_vec(phi),
                               atol=1e-13)


# [DERIVED] the single layer of an exterior point source reproduced by Somigliana's identity
def test_somigliana_identity_interior():
    k = kernel_constants(1.0, 1.0)
    bd = sample_boundary(ELLIPSE, 400)
    z = np.array([14.0, 9.0])
    u = kelvin_matrix(bd.nodes - z, k)[:, :, 0]
    tr = traction_kernel(z, bd.nodes, bd.normals, k)[:, 0, :]
    x = np.array([[1.0, 2.0], [-4.0, -1.0], [6.0, 0.5]])
    # u = D[u] - S[traction] inside, with the traction kernel convention used here
    got = eval_double_layer(bd, u, x, k) - eval_single_layer(bd, tr, x, k)
    ref = kelvin_matrix(x - z, k)[:, :, 0]
    np.testing.assert_allclose(got, ref, rtol=1e-9, atol=1e-12)


def test_constant_density_interior_value():
    k = kernel_constants(1.0, 1.0)
    bd = sample_boundary(ELLIPSE, 400)
    c = np.array([0.3, -1.2])
    x = np.array([[0.0, 0.0], [5.0, 3.0], [-7.0, -2.0]])
    np.testing.assert_allclose(eval_double_layer(bd, np.tile(c, (bd.P, 1)), x, k), np.tile(c, (3, 1)),
                               atol=1e-12)


# [DERIVED] limit approach along the inward normal; linear extrapolation of the first-order distance term
def test_double_layer_jump_relation():
    k = kernel_constants(1.0, 1.0)
    bd = sample_boundary(ELLIPSE, 2000)
    phi = smooth_density(bd.t, seed=5)
    limit = apply_double_layer(bd, k, phi) + 0.5 * phi
    hb = bd.length / bd.P
    # D[phi] approaches the limit linearly in the standoff, so remove the first-order term
    for q in (0, 333, 1250):
        d5, d10 = (eval_double_layer(bd, phi, (bd.nodes[q] - s * hb * bd.normals[q])[None], k,
                                     upsample=True)[0] for s in (5, 10))
        assert np.linalg.norm(2 * d5 - d10 - limit[q]) <= 0.01 * np.linalg.norm(limit[q])
        # raw errors shrink with the standoff
        assert np.linalg.norm(d5 - limit[q]) < np.linalg.norm(d10 - limit[q])


def test_layer_potentials_linear_and_zero():
    k = kernel_constants(1.0, 1.0)
    bd = sample_boundary(ELLIPSE, 200)
    x = np.array([[0.5, 0.5], [2.0, -3.0]])
    z = np.zeros((bd.P, 2))
    np.testing.assert_array_equal(eval_double_layer(bd, z, x, k), 0.0)
    np.testing.assert_array_equal(eval_single_layer(bd, z, x, k), 0.0)
    a, b = smooth_density(bd.t, 1), smooth_density(bd.t, 2)
    for ev in (eval_single_layer, eval_double_layer):
        np.testing.assert_allclose(ev(bd, 2 * a - 3 * b, x, k), 2 * ev(bd, a, x, k) - 3 * ev(bd, b, x, k),
                                   atol=1e-12)


# [DERIVED] two-sided limit: the single layer is continuous across the curve
def test_single_layer_continuity():
    k = kernel_constants(1.0, 1.0)
    bd = sample_boundary(ELLIPSE, 1000)
    phi = smooth_density(bd.t, 3)
    hb = bd.length / bd.P
    q = 123
    inside = eval_single_layer(bd, phi, (bd.nodes[q] - 0.5 * hb * bd.normals[q])[None], k, upsample=True)
    outside = eval_single_layer(bd, phi, (bd.nodes[q] + 0.5 * hb * bd.normals[q])[None], k, upsample=True)
    on = apply_single_layer(bd, k, phi)[q]
    scale = np.abs(on).max()
    assert np.abs(inside - outside).max() <= hb * scale
    assert np.abs(inside[0] - on).max() <= hb * scale


def test_near_boundary_warning():
    k = kernel_constants(1.0, 1.0)
    bd = sample_boundary(ELLIPSE, 200)
    x = (bd.nodes[0] - 1e-2 * bd.normals[0])[None]
    with pytest.warns(NearBoundaryWarning):
        eval_double_layer(bd, smooth_density(bd.t), x, k)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        eval_double_layer(bd, smooth_density(bd.t), x, k, upsample=True)


# [DERIVED] finite differences of the single-layer potential
def test_single_layer_gradient_fd():
    k = kernel_constants(1.0, 1.0)
    bd = sample_boundary(ELLIPSE, 400)
    phi = smooth_density(bd.t, 4)
    x = np.array([[1.0, -2.0], [4.0, 3.0]])
    J = eval_single_layer_gradient(bd, phi, x, k)
    h = 1e-5
    for l in range(2):
        e = np.zeros(2)
        e[l] = h
        fd = (eval_single_layer(bd, phi, x + e, k) - eval_single_layer(bd, phi, x - e, k)) / (2 * h)
        np.testing.assert_allclose(J[:, :, l], fd, rtol=1e-6, atol=1e-9)


def test_single_layer_matrix_symmetric_weighted(ops128):
    # S_ij w_j is symmetric up to the weights since Gamma is symmetric and even
    W = np.tile(ops128.bd.jac, 2)
    A = ops128.S / W[None, :]
    np.testing.assert_allclose(A, A.T, atol=1e-12)
    assert single_layer_matrix(ops128.bd, ops128.k).shape == (256, 256)
