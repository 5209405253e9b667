"""Nyström discretisation of elastic layer potentials on closed curves.

Densities are ``(P, 2)`` arrays. Operator matrices act on the blocked
vector ``[phi[:, 0], phi[:, 1]]`` of length ``2P``; use :func:`to_vec` and
:func:`from_vec` to convert.

Singular integrals use the periodic trapezoid rule with analytic diagonal
corrections: the logarithmic part of the single layer is integrated with a
corrected self term, and the Cauchy part of the double layer gets its smooth
limit plus a spectral derivative correction. Both are far more accurate than
dropping the self term and converge spectrally on smooth curves.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import DiscretizedBoundary, sample_boundary
from .kernels import (KernelConstants, grad_kelvin, kelvin_matrix, traction_kernel)

_E = np.array([[0.0, 1.0], [-1.0, 0.0]])
NEAR_FACTOR = 3.0


class NearBoundaryWarning(UserWarning):
    pass


def to_vec(phi) -> np.ndarray:
    return np.asarray(phi, dtype=float).T.ravel()


def from_vec(v, P: int) -> np.ndarray:
    return np.asarray(v).reshape(2, P).T


def blocked(m4: np.ndarray) -> np.ndarray:
    """``(P, Q, 2, 2)`` kernel blocks -> ``(2P, 2Q)`` blocked matrix."""
    P, Q = m4.shape[:2]
    return m4.transpose(2, 0, 3, 1).reshape(2 * P, 2 * Q)


@dataclass(frozen=True, eq=False)
class BoundaryOperatorSet:
    S: np.ndarray
    K: np.ndarray
    Kstar: np.ndarray
    bd: DiscretizedBoundary
    k: KernelConstants

    def inner(self, phi, psi) -> float:
        """Quadrature inner product on the boundary of two blocked vectors."""
        w = np.tile(self.bd.jac, 2)
        return float(np.sum(w * phi * psi))

    def calderon(self) -> np.ndarray:
        """Blocked matrix of ``-I/2 + K``."""
        return self.K - 0.5 * np.eye(2 * self.bd.P)


_CHUNK = 256


def _circulant_derivative_column(P: int) -> np.ndarray:
    """First column ``c`` of the spectral d/dt matrix, ``D[p, q] = c[(p - q) % P]``."""
    k = np.fft.fftfreq(P, d=1.0 / P)
    if P % 2 == 0:
        k[P // 2] = 0.0
    return np.real(np.fft.ifft(2j * np.pi * k))


def _rows_derivative(P: int, rows) -> np.ndarray:
    c = _circulant_derivative_column(P)
    rows = np.asarray(rows)
    return c[(rows[:, None] - np.arange(P)[None, :]) % P]


def _pairs(bd: DiscretizedBoundary, rows):
    """Differences ``x_p - x_q`` for p in rows, with a dummy unit vector where p == q."""
    d = bd.nodes[rows, None, :] - bd.nodes[None, :, :]
    local = np.arange(len(rows))
    d[local, rows] = (1.0, 0.0)  # replaced by the diagonal rule of each caller
    return d


def _log_weights(P: int) -> np.ndarray:
    """Circulant weights ``R_j`` integrating ``ln|2 sin(pi s)| f(s)`` exactly for trigonometric f."""
    j = np.arange(P)
    m = np.arange(1, P // 2)
    R = -(np.cos(2 * np.pi * np.outer(j, m) / P) / m).sum(axis=1) / P
    return R - (-1.0) ** j / P ** 2


def single_layer_rows(bd: DiscretizedBoundary, k: KernelConstants, rows) -> np.ndarray:
    """``(n, P, 2, 2)`` blocks of the single layer for target nodes ``rows``.

    The logarithm is split as ``ln|2 sin(pi (t - t_p))|`` plus a smooth
    remainder; the first part uses product weights, the rest the trapezoid rule.
    """
    rows = np.asarray(rows)
    P = bd.P
    local = np.arange(len(rows))
    d = _pairs(bd, rows)
    G = kelvin_matrix(d, k)  # alpha ln r I - beta d d^T / r^2, off the diagonal
    lag = (np.arange(P)[None, :] - rows[:, None]) % P
    with np.errstate(divide="ignore"):
        logsin = np.log(np.abs(2 * np.sin(np.pi * lag / P)))
    logsin[local, rows] = 0.0
    smooth = -logsin
    smooth[local, rows] = np.log(bd.speed[rows] / (2 * np.pi))
    tau = bd.tangents[rows]
    G[local, rows] = -k.beta * tau[:, :, None] * tau[:, None, :]
    # G now holds alpha (ln r - ln|2 sin|) on the off-diagonal; fix the self entries
    G[..., 0, 0] += k.alpha * smooth
    G[..., 1, 1] += k.alpha * smooth
    w = G / P
    R = _log_weights(P)[lag]
    w[..., 0, 0] += k.alpha * R
    w[..., 1, 1] += k.alpha * R
    return w * bd.speed[None, :, None, None]


def _dl_diagonal(bd: DiscretizedBoundary, k: KernelConstants, rows) -> np.ndarray:
    """Smooth limit of the double-layer kernel times ``|x'|`` at the self node, per unit t."""
    tau = bd.tangents[rows]
    ks = -0.5 * bd.curvature[rows] * bd.speed[rows]
    q = np.einsum("pi,pi->p", bd.d1[rows], bd.d2[rows]) / bd.speed[rows] ** 2
    diag = (k.b * tau[:, :, None] * tau[:, None, :]) * ks[:, None, None]
    diag[:, 0, 0] += k.a * ks
    diag[:, 1, 1] += k.a * ks
    diag += (-0.5 * k.a * q)[:, None, None] * _E
    return diag


def double_layer_rows(bd: DiscretizedBoundary, k: KernelConstants, rows) -> np.ndarray:
    """``(n, P, 2, 2)`` blocks of K (principal value) for target nodes ``rows``."""
    rows = np.asarray(rows)
    P = bd.P
    M = traction_kernel(_pairs(bd, rows), 0.0, bd.normals[None, :, :], k)
    M *= bd.jac[None, :, None, None]
    M[np.arange(len(rows)), rows] = _dl_diagonal(bd, k, rows) / P
    # the Cauchy part -a/s of the kernel contributes -a * dphi/dt at the self node
    M += (-k.a / P) * _rows_derivative(P, rows)[:, :, None, None] * _E
    return M


def adjoint_rows(bd: DiscretizedBoundary, k: KernelConstants, rows) -> np.ndarray:
    """``(n, P, 2, 2)`` blocks of K* for target nodes ``rows``; equals the W-adjoint of K."""
    rows = np.asarray(rows)
    P = bd.P
    # kernel T(x_q, x_p, nu_p)^T, written through the difference x_q - x_p = -(x_p - x_q)
    T = traction_kernel(-_pairs(bd, rows), 0.0, bd.normals[rows, None, :], k)
    M = np.swapaxes(T, -1, -2) * bd.jac[None, :, None, None]
    M[np.arange(len(rows)), rows] = np.swapaxes(_dl_diagonal(bd, k, rows), -1, -2) / P
    D = _rows_derivative(P, rows) * bd.jac[None, :] / bd.jac[rows, None]
    M += (-k.a / P) * D[:, :, None, None] * _E
    return M


def _assemble(fn, bd, k):
    P = bd.P
    out = np.empty((2 * P, 2 * P))
    for s in range(0, P, _CHUNK):
        rows = np.arange(s, min(s + _CHUNK, P))
        blk = fn(bd, k, rows)
        for i in range(2):
            for j in range(2):
                out[i * P + rows, j * P:(j + 1) * P] = blk[:, :, i, j]
    return out


def _apply(fn, bd, k, phi):
    phi = np.asarray(phi, dtype=float)
    out = np.empty(phi.shape)
    for s in range(0, bd.P, _CHUNK):
        rows = np.arange(s, min(s + _CHUNK, bd.P))
        out[rows] = np.einsum("pqij,qj...->pi...", fn(bd, k, rows), phi)
    return out


def single_layer_matrix(bd: DiscretizedBoundary, k: KernelConstants) -> np.ndarray:
    return _assemble(single_layer_rows, bd, k)


def double_layer_matrix(bd: DiscretizedBoundary, k: KernelConstants) -> np.ndarray:
    return _assemble(double_layer_rows, bd, k)


def adjoint_layer_matrix(bd: DiscretizedBoundary, k: KernelConstants) -> np.ndarray:
    return _assemble(adjoint_rows, bd, k)


def apply_single_layer(bd, k, phi):
    """``S phi`` at the nodes without storing the matrix; ``phi`` is ``(P, 2[, M])``."""
    return _apply(single_layer_rows, bd, k, phi)


def apply_double_layer(bd, k, phi):
    """``K phi`` at the nodes without storing the matrix; ``phi`` is ``(P, 2[, M])``."""
    return _apply(double_layer_rows, bd, k, phi)


def adjoint_matrix(K: np.ndarray, bd: DiscretizedBoundary) -> np.ndarray:
    """``W^-1 K^T W``: the exact adjoint under the quadrature inner product."""
    w = np.tile(bd.jac, 2)
    return (K.T * w[None, :]) / w[:, None]


def assemble_operators(bd: DiscretizedBoundary, k: KernelConstants) -> BoundaryOperatorSet:
    if bd.P % 2:
        raise ValueError("operator assembly needs an even node count")
    K = double_layer_matrix(bd, k)
    return BoundaryOperatorSet(S=single_layer_matrix(bd, k), K=K, Kstar=adjoint_matrix(K, bd),
                               bd=bd, k=k)


# ---------------------------------------------------------------------------
# cross-curve blocks (source curve ``src`` to target nodes on another curve)


def single_layer_block(src: DiscretizedBoundary, targets, k: KernelConstants) -> np.ndarray:
    """Blocked ``(2T, 2P)`` matrix of the single layer from ``src`` evaluated at targets."""
    x = np.asarray(targets, dtype=float)
    G = kelvin_matrix(x[:, None, :] - src.nodes[None, :, :], k)
    return blocked(G * src.jac[None, :, None, None])


def traction_block(src: DiscretizedBoundary, targets, normals, k: KernelConstants) -> np.ndarray:
    """Blocked matrix of the traction, at targets with given normals, of the single layer on ``src``."""
    x = np.asarray(targets, dtype=float)
    T = traction_kernel(src.nodes[None, :, :], x[:, None, :], np.asarray(normals)[:, None, :], k)
    return blocked(np.swapaxes(T, -1, -2) * src.jac[None, :, None, None])


# ---------------------------------------------------------------------------
# potentials at off-boundary points


def _node_spacing(bd: DiscretizedBoundary) -> float:
    return float(bd.jac.max())


def _min_distance(bd, x):
    d = x[:, None, :] - bd.nodes[None, :, :]
    return np.sqrt(np.einsum("qpk,qpk->qp", d, d).min(axis=1))


def _fourier_resample(phi: np.ndarray, n: int) -> np.ndarray:
    """Trigonometric interpolation of periodic nodal values onto n uniform nodes."""
    P = len(phi)
    if n == P:
        return phi
    c = np.fft.rfft(phi, axis=0)
    if P % 2 == 0:
        c[-1] *= 0.5  # split the Nyquist mode symmetrically
    return np.fft.irfft(c, n=n, axis=0) * (n / P)


def _refined(bd: DiscretizedBoundary, phi, factor: int):
    if factor == 1 or bd.curve is None:
        return bd, phi
    fine = sample_boundary(bd.curve, bd.P * factor)
    return fine, _fourier_resample(phi, fine.P)


def _upsample_factor(bd, dist, cap=64):
    h = _node_spacing(bd)
    need = NEAR_FACTOR * 1.5 * h / max(dist, 1e-300)
    f = 1
    while f < need and f < cap:
        f *= 2
    return f


def _evaluate(bd, phi, x, kernel, upsample):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    phi = np.asarray(phi, dtype=float)
    out = np.zeros((len(x), 2))
    if len(x) == 0:
        return out
    dist = _min_distance(bd, x)
    h = _node_spacing(bd)
    near = dist < NEAR_FACTOR * h
    if np.any(near) and not (upsample and bd.curve is not None):
        warnings.warn(f"{int(near.sum())} evaluation point(s) within {NEAR_FACTOR} node "
                      "spacings of the boundary; quadrature accuracy degraded",
                      NearBoundaryWarning, stacklevel=3)
    groups = {}
    for n, dd in enumerate(dist):
        f = _upsample_factor(bd, dd) if (upsample and near[n]) else 1
        groups.setdefault(f, []).append(n)
    for f, ids in groups.items():
        fb, fphi = _refined(bd, phi, f)
        for s in range(0, len(ids), 256):
            sel = ids[s:s + 256]
            out[sel] = kernel(fb, fphi, x[sel])
    return out


def _sl_kernel(k):
    def f(bd, phi, x):
        G = kelvin_matrix(x[:, None, :] - bd.nodes[None, :, :], k)
        return np.einsum("qpij,pj,p->qi", G, phi, bd.jac)
    return f


def _dl_kernel(k):
    def f(bd, phi, x):
        T = traction_kernel(x[:, None, :], bd.nodes[None, :, :], bd.normals[None, :, :], k)
        return np.einsum("qpij,pj,p->qi", T, phi, bd.jac)
    return f


def eval_single_layer(bd: DiscretizedBoundary, phi, x, k: KernelConstants,
                      upsample: bool = False) -> np.ndarray:
    """``S[phi](x)`` at off-boundary points; ``upsample`` refines the rule near the curve."""
    return _evaluate(bd, phi, x, _sl_kernel(k), upsample)


def eval_double_layer(bd: DiscretizedBoundary, phi, x, k: KernelConstants,
                      upsample: bool = False) -> np.ndarray:
    """``D[phi](x)`` at off-boundary points; warns when a point is too close to the curve."""
    return _evaluate(bd, phi, x, _dl_kernel(k), upsample)


def eval_single_layer_gradient(bd: DiscretizedBoundary, phi, x, k: KernelConstants,
                               upsample: bool = True) -> np.ndarray:
    """``J[..., i, l] = d/dx_l S[phi]_i(x)``."""
    def f(b, ph, pts):
        G = grad_kelvin(pts[:, None, :], b.nodes[None, :, :], k)
        return -np.einsum("qpijl,pj,p->qil", G, ph, b.jac).reshape(len(pts), 4)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.zeros((len(x), 4))
    if len(x):
        dist = _min_distance(bd, x)
        groups = {}
        for n, dd in enumerate(dist):
            fct = _upsample_factor(bd, dd) if upsample else 1
            groups.setdefault(fct, []).append(n)
        for fct, ids in groups.items():
            fb, fphi = _refined(bd, phi, fct)
            for s in range(0, len(ids), 256):
                sel = ids[s:s + 256]
                out[sel] = f(fb, fphi, x[sel])
    return out.reshape(len(x), 2, 2)
