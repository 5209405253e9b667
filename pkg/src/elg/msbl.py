"""Step one: block-tied multiple sparse Bayesian learning and support identification."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

N_BLOCKS = 5
ZETA_REL_FLOOR = 1e-10


class MsblError(RuntimeError):
    pass


@dataclass
class MsblState:
    g: np.ndarray
    zeta: float
    k: int = 0
    X: np.ndarray | None = None
    history: list = field(default_factory=list)

    def active_blocks(self, n_blocks: int = N_BLOCKS) -> int:
        L = len(self.g) // n_blocks
        return int(np.count_nonzero(self.g[:L]))


def msbl_solve(Pi, Y, iters: int = 50, rho: float = 1e-3, n_blocks: int = N_BLOCKS,
               log_stream=None):
    """Modified M-SBL with hyperparameters tied across the ``n_blocks`` column blocks.

    ``Pi`` is ``(J, n_blocks * L)`` with column ``q * L + l``; ``Y`` is ``(J, M)``.
    Returns the estimate and the final state. Per-iteration diagnostics are
    written as JSON lines to ``log_stream`` when given.
    """
    Pi = np.asarray(Pi, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    J, K = Pi.shape
    M = Y.shape[1]
    if M == 0:
        raise MsblError("no measurement vectors")
    if Y.shape[0] != J or K % n_blocks:
        raise MsblError(f"inconsistent shapes {Pi.shape} and {Y.shape}")
    L = K // n_blocks
    smax = np.linalg.norm(Pi, 2)
    state = MsblState(g=np.ones(K), zeta=10.0 * smax ** 2)
    X = np.zeros((K, M))
    eye = np.eye(J)
    for it in range(1, iters + 1):
        g = state.g
        C = (Pi * g[None, :]) @ Pi.T
        # relative floor so rank-deficient Pi G Pi^T stays factorizable on noiseless data
        C += max(state.zeta, ZETA_REL_FLOOR * np.trace(C) / J) * eye
        try:
            cf = sla.cho_factor(C, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise MsblError(f"iteration {it}: covariance not positive definite") from exc
        FY = sla.cho_solve(cf, Y, check_finite=False)
        X = g[:, None] * (Pi.T @ FY)
        FPi = sla.cho_solve(cf, Pi, check_finite=False)
        quad = np.einsum("jk,jk->k", Pi, FPi)  # pi_k^T F pi_k
        trF = float(np.trace(sla.cho_solve(cf, eye, check_finite=False)))
        if not (np.all(np.isfinite(X)) and np.isfinite(trF)):
            raise MsblError(f"iteration {it}: non-finite intermediate")
        num = (X ** 2).reshape(n_blocks, L, M).sum(axis=(0, 2))
        den = M * quad.reshape(n_blocks, L).sum(axis=0)
        gl = np.zeros(L)
        ok = den > 1e-30
        gl[ok] = np.sqrt(num[ok] / den[ok])
        gmax = gl.max()
        if gmax > 0:
            gl[gl / gmax < rho] = 0.0
        state.g = np.tile(gl, n_blocks)
        resid = float(np.linalg.norm(Y - Pi @ X) ** 2)
        zeta = np.sqrt(resid / (M * trF))
        # keep the noise parameter positive so F stays defined on null data
        state.zeta = float(zeta) if zeta > 0 else 1e-14 * smax ** 2
        state.k = it
        rec = {"iter": it, "zeta": state.zeta, "active": int(np.count_nonzero(gl)),
               "residual": np.sqrt(resid)}
        state.history.append(rec)
        if log_stream is not None:
            log_stream.write(json.dumps(rec) + "\n")
    state.X = X
    return X, state


@dataclass(frozen=True, eq=False)
class SupportEstimate:
    indices: np.ndarray
    psi: np.ndarray
    xi: float
    empty: bool


def row_power(X, n_blocks: int = N_BLOCKS) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    L = X.shape[0] // n_blocks
    return np.sqrt((X ** 2).reshape(n_blocks, L, -1).sum(axis=(0, 2)))


def select_support(psi, xi: float = 0.0) -> SupportEstimate:
    psi = np.asarray(psi, dtype=float)
    pmax = psi.max() if len(psi) else 0.0
    if pmax <= 0:
        return SupportEstimate(np.array([], dtype=int), psi, xi, True)
    idx = np.flatnonzero(psi / pmax > xi)
    return SupportEstimate(idx, psi, xi, len(idx) == 0)


def identify_support(X, xi: float = 0.0, n_blocks: int = N_BLOCKS) -> SupportEstimate:
    """Grid indices whose tied row power exceeds ``xi`` times the maximum."""
    return select_support(row_power(X, n_blocks), xi)
