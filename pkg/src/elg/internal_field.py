"""Interior displacement estimate from boundary data and step-one sources.

    u(x) = U(x) + D[(u - U)|boundary](x) - h^2 sum_l Lambda(x, y_l) X(y_l)

evaluated on the support and a one-cell halo, followed by finite-difference
divergence and strain on the same lattice.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .forward import BackgroundField
from .geometry import DiscretizedBoundary, InteriorGrid
from .kernels import KernelConstants, lambda_block
from .potentials import eval_double_layer

log = logging.getLogger(__name__)

_NEIGHBOURS = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass(frozen=True, eq=False)
class InternalFieldEstimate:
    ij: np.ndarray  # (L~, 2) lattice indices of the support
    points: np.ndarray  # (L~, 2)
    u: np.ndarray  # (M, L~, 2) displacement at the support
    div: np.ndarray  # (M, L~)
    strain: np.ndarray  # (M, L~, 2, 2)
    flags: dict = field(default_factory=dict)


def support_sources(X, support: np.ndarray, L: int, n_blocks: int = 5) -> np.ndarray:
    """``(M, L~, 5)`` source values at the support rows of an ``(5L, M)`` estimate."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X.reshape(n_blocks, L, -1)[:, support, :].transpose(2, 1, 0)


def volume_term(x, ypts, Xs, k: KernelConstants, h: float) -> np.ndarray:
    """``h^2 sum_l Lambda(x, y_l) X(y_l)`` with the coincident cell left out; ``(M, n, 2)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.zeros((Xs.shape[0], len(x), 2))
    if len(ypts) == 0:
        return out
    for s in range(0, len(x), 256):
        xs = x[s:s + 256]
        diff = xs[:, None, :] - ypts[None, :, :]
        self_cell = np.all(np.abs(diff) < 1e-9 * h, axis=-1)
        # coincident pairs get a dummy offset and zero weight
        yy = np.where(self_cell[..., None], xs[:, None, :] + h, ypts[None, :, :])
        lam = lambda_block(xs[:, None, :], yy, k)
        lam[self_cell] = 0.0
        out[:, s:s + 256] = h * h * np.einsum("nlpq,mlq->mnp", lam, Xs)
    return out


def estimate_displacement(x, bd: DiscretizedBoundary, perturbation, background: BackgroundField,
                          ypts, Xs, k: KernelConstants, h: float) -> np.ndarray:
    """Displacement ``(M, n, 2)`` at interior points ``x``.

    ``perturbation`` is ``(M, P, 2)`` boundary data of ``u - U`` at the nodes of
    ``bd``; ``Xs`` is ``(M, L~, 5)`` at the support points ``ypts``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    perturbation = np.asarray(perturbation, dtype=float)
    out = background.at(x)
    for m in range(out.shape[0]):
        out[m] += eval_double_layer(bd, perturbation[m], x, k, upsample=True)
    return out - volume_term(x, ypts, Xs, k, h)


def halo(ij_support, grid: InteriorGrid):
    """Support lattice indices plus their 4-neighbours that are grid points.

    Returns ``(ij_all, n_clipped)`` with the support first.
    """
    index = grid.index_of()
    seen = {tuple(map(int, p)) for p in ij_support}
    extra, clipped = [], set()
    for i, j in ij_support:
        for di, dj in _NEIGHBOURS:
            q = (int(i) + di, int(j) + dj)
            if q in seen:
                continue
            if q in index:
                seen.add(q)
                extra.append(q)
            else:
                clipped.add(q)
    ij_all = np.concatenate([np.asarray(ij_support, dtype=int).reshape(-1, 2),
                             np.asarray(extra, dtype=int).reshape(-1, 2)])
    return ij_all, len(clipped)


def lattice_jacobian(ij_all, u_all, n_targets: int, h: float):
    """Finite-difference Jacobian ``(M, n_targets, 2, 2)``, ``J[i, l] = d u_i / d x_l``.

    Central differences where both neighbours exist, otherwise second-order
    one-sided stencils, falling back to first order and finally to zero.
    """
    u_all = np.asarray(u_all, dtype=float)
    where = {tuple(map(int, p)): n for n, p in enumerate(ij_all)}
    M = u_all.shape[0]
    J = np.zeros((M, n_targets, 2, 2))
    counts = {"central": 0, "one_sided": 0, "first_order": 0, "missing": 0}
    isolated = []
    for t in range(n_targets):
        i, j = map(int, ij_all[t])
        nmiss = 0
        for a in range(2):
            step = (1, 0) if a == 0 else (0, 1)

            def at(s):
                return where.get((i + s * step[0], j + s * step[1]))

            p1, m1 = at(1), at(-1)
            if p1 is not None and m1 is not None:
                d = (u_all[:, p1] - u_all[:, m1]) / (2 * h)
                counts["central"] += 1
            else:
                s = 1 if p1 is not None else -1
                n1 = p1 if p1 is not None else m1
                n2 = at(2 * s)
                if n1 is None:
                    d = np.zeros((M, 2))
                    counts["missing"] += 1
                    nmiss += 1
                elif n2 is not None:
                    d = s * (-3 * u_all[:, t] + 4 * u_all[:, n1] - u_all[:, n2]) / (2 * h)
                    counts["one_sided"] += 1
                else:
                    d = s * (u_all[:, n1] - u_all[:, t]) / h
                    counts["first_order"] += 1
            J[:, t, :, a] = d
        if nmiss == 2:
            isolated.append(t)
    return J, counts, isolated


def internal_fields(grid: InteriorGrid, support: np.ndarray, X, bd: DiscretizedBoundary,
                    perturbation, background: BackgroundField, k: KernelConstants
                    ) -> InternalFieldEstimate:
    """Displacement, divergence and strain at the support points of ``grid``."""
    support = np.asarray(support, dtype=int)
    if len(support) == 0:
        raise ValueError("empty support")
    ij_sup = grid.ij[support]
    ypts = grid.points[support]
    Xs = support_sources(X, support, grid.L)
    ij_all, n_clipped = halo(ij_sup, grid)
    x_all = grid.lattice_points(ij_all)
    u_all = estimate_displacement(x_all, bd, perturbation, background, ypts, Xs, k, grid.h)
    J, counts, isolated = lattice_jacobian(ij_all, u_all, len(support), grid.h)
    if isolated:
        log.warning("%d isolated support points: derivatives set to zero", len(isolated))
    strain = 0.5 * (J + np.swapaxes(J, -1, -2))
    div = np.trace(J, axis1=-2, axis2=-1)
    flags = dict(counts, isolated=list(map(int, isolated)), halo_clipped=n_clipped,
                 halo_points=int(len(ij_all) - len(support)))
    return InternalFieldEstimate(ij=ij_sup, points=ypts, u=u_all[:, :len(support)], div=div,
                                 strain=strain, flags=flags)
