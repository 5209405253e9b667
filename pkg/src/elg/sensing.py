"""Sensing matrices of the two reconstruction steps and the SVD preconditioner."""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .geometry import InteriorGrid
from .kernels import KernelConstants, lambda_block, vec_colmajor

log = logging.getLogger(__name__)

N_COMPONENTS = 5  # 1 divergence + 4 strain entries


class SensingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SensingMatrix:
    matrix: np.ndarray  # (2R, 5L), row p*R + r, column q*L + l
    h: float
    points: np.ndarray

    @property
    def R(self) -> int:
        return len(self.points)

    @property
    def L(self) -> int:
        return self.matrix.shape[1] // N_COMPONENTS


def _pi_blocks(points, ypts, k, h):
    lam = lambda_block(points[:, None, :], ypts[None, :, :], k)  # (R, L, 2, 5)
    return h * h * lam


def assemble_Pi(points, grid: InteriorGrid, k: KernelConstants,
                min_distance: float | None = None) -> SensingMatrix:
    """Midpoint-rule sensing matrix ``[Pi_pq]_{r l} = h^2 [Lambda(x_r, y_l)]_{pq}``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if grid.L == 0:
        raise SensingError("interior grid is empty")
    min_distance = 0.25 if min_distance is None else min_distance
    d = np.linalg.norm(points[:, None, :] - grid.points[None, :, :], axis=-1)
    if d.min() < min_distance:
        raise SensingError(f"grid point within {d.min():.3g} mm of a measurement point")
    lam = _pi_blocks(points, grid.points, k, grid.h)
    R, L = lam.shape[:2]
    mat = lam.transpose(2, 0, 3, 1).reshape(2 * R, N_COMPONENTS * L)
    return SensingMatrix(matrix=mat, h=grid.h, points=points)


def dump_matrix(path, a: np.ndarray) -> None:
    """Binary dump: two little-endian int64 dims, then row-major float64 entries."""
    a = np.ascontiguousarray(a, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<qq", *a.shape))
        fh.write(a.tobytes())


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        rows, cols = struct.unpack("<qq", fh.read(16))
        return np.frombuffer(fh.read(), dtype="<f8").reshape(rows, cols).copy()


@dataclass(frozen=True, eq=False)
class Preconditioner:
    P: np.ndarray
    theta: float
    sigma: np.ndarray

    def apply(self, a: np.ndarray) -> np.ndarray:
        return self.P @ a


def svd_preconditioner(Pi, theta_scale: float = 1e-2) -> Preconditioner:
    """``P = (Sigma^2 + theta I)^(-1/2) V^T`` with ``theta = theta_scale * sigma_max^2``."""
    A = Pi.matrix if isinstance(Pi, SensingMatrix) else np.asarray(Pi)
    try:
        V, s, _ = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SensingError(f"SVD failed: {exc}") from exc
    if V.shape[1] < A.shape[0]:  # fewer columns than rows: pad with zero singular values
        V, s, _ = np.linalg.svd(A, full_matrices=True)
        s = np.concatenate([s, np.zeros(A.shape[0] - len(s))])
    theta = theta_scale * s[0] ** 2
    den = s ** 2 + theta
    if np.any(den <= 0):
        raise SensingError("preconditioner undefined: zero singular value with theta = 0")
    return Preconditioner(P=(V / np.sqrt(den)[None, :]).T, theta=float(theta), sigma=s)


@dataclass(frozen=True, eq=False)
class StepTwoMatrix:
    matrix: np.ndarray  # normalised, (2RM, 5L~)
    norms: np.ndarray  # column norms before normalisation (0 for zero columns)

    @property
    def zero_columns(self) -> np.ndarray:
        return np.flatnonzero(self.norms == 0)

    def unnormalized(self) -> np.ndarray:
        return self.matrix * self.norms[None, :]


def step_two_weights(div, strain) -> np.ndarray:
    """``(M, L~, 5)`` column weights ``[div u, 2 vec(E(u))]``."""
    div = np.asarray(div, dtype=float)
    return np.concatenate([div[..., None], 2.0 * vec_colmajor(np.asarray(strain, dtype=float))], -1)


def assemble_Pi_tilde(support_points, div, strain, points, k: KernelConstants,
                      h: float) -> StepTwoMatrix:
    """Step-two matrix with rows ordered by excitation, component, point; columns normalised.

    ``div`` is ``(M, L~)`` and ``strain`` ``(M, L~, 2, 2)`` at the support points.
    """
    ypts = np.atleast_2d(np.asarray(support_points, dtype=float))
    points = np.atleast_2d(np.asarray(points, dtype=float))
    w = step_two_weights(div, strain)
    if not np.all(np.isfinite(w)) or w.shape[1] != len(ypts):
        raise SensingError("estimated fields are missing or non-finite at support points")
    lam = _pi_blocks(points, ypts, k, h)  # (R, L~, 2, 5)
    R, L = lam.shape[:2]
    M = w.shape[0]
    full = np.einsum("rlpq,mlq->mprql", lam, w).reshape(M * 2 * R, N_COMPONENTS * L)
    norms = np.linalg.norm(full, axis=0)
    if np.all(norms == 0):
        raise SensingError("every column of the step-two matrix vanishes (no strain in the fields)")
    zero = norms == 0
    if np.any(zero):
        log.warning("%d zero columns in the step-two matrix kept unnormalised", int(zero.sum()))
    safe = np.where(zero, 1.0, norms)
    return StepTwoMatrix(matrix=full / safe[None, :], norms=np.where(zero, 0.0, norms))
