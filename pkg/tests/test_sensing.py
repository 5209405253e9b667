import warnings

import numpy as np
import pytest

from elg.geometry import InteriorGrid, interior_grid, make_phantom
from elg.kernels import kernel_constants, lambda_block
from elg.sensing import (SensingError, assemble_Pi, assemble_Pi_tilde, dump_matrix, load_matrix,
                         step_two_weights, svd_preconditioner)


@pytest.fixture(scope="module")
def small():
    ph = make_phantom("sparse-disks")
    grid = interior_grid(ph, 1.0)
    t = np.arange(16) / 16
    pts = ph.boundary.point(t)
    return ph, grid, pts, kernel_constants(1.0, 1.0)


def test_shape(small):
    _, grid, pts, k = small
    Pi = assemble_Pi(pts, grid, k)
    assert Pi.matrix.shape == (32, 5 * grid.L)
    assert (Pi.R, Pi.L) == (16, grid.L)


# [DERIVED] entries re-evaluated one pair at a time
def test_entries(small):
    _, grid, pts, k = small
    Pi = assemble_Pi(pts, grid, k).matrix
    R, L, h = len(pts), grid.L, grid.h
    rng = np.random.default_rng(0)
    for _ in range(20):
        r, l, p, q = rng.integers(R), rng.integers(L), rng.integers(2), rng.integers(5)
        ref = h * h * lambda_block(pts[r], grid.points[l], k)[p, q]
        assert Pi[p * R + r, q * L + l] == pytest.approx(ref, rel=1e-13, abs=1e-16)


# [DERIVED] reflection through x2 = 0: Gamma is even, so the divergence column flips its second component
def test_mirror_symmetry(small):
    _, _, _, k = small
    x, y = np.array([3.0, 2.0]), np.array([-1.0, 0.5])
    R = np.diag([1.0, -1.0])
    A = lambda_block(x, y, k)
    B = lambda_block(R @ x, R @ y, k)
    np.testing.assert_allclose(B[:, 0], R @ A[:, 0], atol=1e-14)


def test_too_close_rejected(small):
    ph, grid, _, k = small
    with pytest.raises(SensingError):
        assemble_Pi(grid.points[:1] + 0.01, grid, k)
    empty = InteriorGrid(points=np.zeros((0, 2)), ij=np.zeros((0, 2), int), h=1.0, labels=np.zeros(0, int))
    with pytest.raises(SensingError):
        assemble_Pi(np.array([[10.0, 0.0]]), empty, k)


def test_dump_round_trip(tmp_path):
    a = np.random.default_rng(0).standard_normal((7, 5))
    dump_matrix(tmp_path / "m.bin", a)
    raw = (tmp_path / "m.bin").read_bytes()
    assert np.frombuffer(raw[:16], "<i8").tolist() == [7, 5]
    np.testing.assert_array_equal(load_matrix(tmp_path / "m.bin"), a)


# [DERIVED] singular values of P Pi are s / sqrt(s^2 + theta)
def test_preconditioner_singular_values(small):
    _, grid, pts, k = small
    Pi = assemble_Pi(pts, grid, k).matrix
    pre = svd_preconditioner(Pi, 1e-2)
    s = np.linalg.svd(Pi, compute_uv=False)
    assert pre.theta == pytest.approx(1e-2 * s[0] ** 2)
    got = np.linalg.svd(pre.apply(Pi), compute_uv=False)
    np.testing.assert_allclose(np.sort(got), np.sort(s / np.sqrt(s ** 2 + pre.theta)), rtol=1e-8)


def test_preconditioner_whitens_with_zero_theta(small):
    _, grid, pts, k = small
    Pi = assemble_Pi(pts, grid, k).matrix
    pre = svd_preconditioner(Pi, 0.0)
    A = pre.apply(Pi)
    np.testing.assert_allclose(A @ A.T, np.eye(len(A)), atol=1e-8)


def test_preconditioner_rank_deficient_zero_theta():
    with pytest.raises(SensingError):
        svd_preconditioner(np.diag([1.0, 1.0, 1.0, 0.0]) @ np.eye(4, 10), 0.0)
    assert svd_preconditioner(np.eye(4, 2), 1e-2).P.shape == (4, 4)


def test_step_two_weights():
    div = np.array([[1.0]])
    E = np.array([[[[1.0, 2.0], [2.0, 3.0]]]])
    np.testing.assert_array_equal(step_two_weights(div, E)[0, 0], [1, 2, 4, 4, 6])


# [DERIVED] re-association: Pi~ Z equals Pi X when X_m = weights_m * Z on the support
def test_pi_tilde_reassociation(small):
    ph, grid, pts, k = small
    rng = np.random.default_rng(5)
    sel = rng.choice(grid.L, 12, replace=False)
    M = 3
    div = rng.standard_normal((M, 12))
    E = rng.standard_normal((M, 12, 2, 2))
    E = E + np.swapaxes(E, -1, -2)
    Pt = assemble_Pi_tilde(grid.points[sel], div, E, pts, k, grid.h)
    assert Pt.matrix.shape == (M * 2 * 16, 5 * 12)
    np.testing.assert_allclose(np.linalg.norm(Pt.matrix, axis=0), 1.0)
    Z = rng.standard_normal(5 * 12)
    w = step_two_weights(div, E)  # (M, 12, 5)
    Pi = assemble_Pi(pts, grid, k).matrix
    Y = Pt.unnormalized() @ Z
    for m in range(M):
        X = np.zeros((5, grid.L))
        X[:, sel] = (w[m] * Z.reshape(5, 12).T).T
        np.testing.assert_allclose(Y[m * 32:(m + 1) * 32], Pi @ X.ravel(), rtol=1e-12, atol=1e-14)


def test_pi_tilde_zero_columns(small, caplog):
    _, grid, pts, k = small
    div = np.array([[1.0, 0.0]])
    E = np.zeros((1, 2, 2, 2))
    E[0, 0] = [[1.0, 0.5], [0.5, -1.0]]
    Pt = assemble_Pi_tilde(grid.points[:2], div, E, pts, k, grid.h)
    assert len(Pt.zero_columns) == 5  # every column of the second point
    np.testing.assert_array_equal(Pt.matrix[:, Pt.zero_columns], 0.0)
    with pytest.raises(SensingError):
        assemble_Pi_tilde(grid.points[:2], np.zeros((1, 2)), np.zeros((1, 2, 2, 2)), pts, k, grid.h)
    with pytest.raises(SensingError):
        assemble_Pi_tilde(grid.points[:2], np.array([[np.nan, 1.0]]), np.zeros((1, 2, 2, 2)), pts, k, grid.h)
