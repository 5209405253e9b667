"""Boundary-data densification and the Calderón filter ``(-I/2 + K)``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .forward import trig_interpolate
from .geometry import DiscretizedBoundary
from .kernels import KernelConstants
from .potentials import BoundaryOperatorSet, apply_double_layer, from_vec, to_vec

MIN_SAMPLES = 8


@dataclass(frozen=True, eq=False)
class FilteredData:
    Y: np.ndarray  # (M, R, 2) filtered data at the measurement parameters
    dense: np.ndarray  # (M, P, 2) densified input
    filtered_dense: np.ndarray  # (M, P, 2) filtered data at the nodes

    def as_matrix(self) -> np.ndarray:
        """Stack to the ``(2R, M)`` layout with row ``p * R + r``."""
        M, R, _ = self.Y.shape
        return self.Y.transpose(2, 1, 0).reshape(2 * R, M)

    def as_vector(self) -> np.ndarray:
        """Stack to a ``2RM`` vector ordered by excitation, then component, then point."""
        return self.Y.transpose(0, 2, 1).ravel()


def spline_densify(values, t, P: int) -> np.ndarray:
    """Periodic cubic spline in the boundary parameter through ``(M, R, 2)`` samples.

    Returns ``(M, P, 2)`` values at ``t_p = p / P``. A partial aperture is
    closed by the periodic spline across the unmeasured arc.
    """
    values = np.asarray(values, dtype=float)
    t = np.asarray(t, dtype=float)
    if len(t) < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples to densify, got {len(t)}")
    if np.any(np.diff(t) <= 0) or t[-1] - t[0] >= 1.0:
        raise ValueError("sample parameters must be strictly increasing within one period")
    tt = np.append(t, t[0] + 1.0)
    vv = np.concatenate([values, values[:, :1]], axis=1)
    spline = CubicSpline(tt, vv, axis=1, bc_type="periodic")
    tp = np.arange(P) / P
    # evaluate on the spline's own period window
    out = spline(t[0] + np.mod(tp - t[0], 1.0))
    pos = t * P
    hit = np.isclose(pos, np.round(pos), rtol=0, atol=1e-9)
    out[:, np.round(pos[hit]).astype(int) % P] = values[:, hit]
    return out


def calderon_filter(dense, bd: DiscretizedBoundary, k: KernelConstants, eval_t,
                    ops: BoundaryOperatorSet | None = None) -> FilteredData:
    """Apply ``-I/2 + K`` on the boundary nodes and sample the result at ``eval_t``."""
    dense = np.asarray(dense, dtype=float)
    M, P, _ = dense.shape
    if P != bd.P or (ops is not None and ops.bd.P != P):
        raise ValueError(f"dense samples have {P} nodes but the boundary has {bd.P}")
    if ops is not None:
        Kv = np.stack([from_vec(ops.K @ to_vec(dense[m]), P) for m in range(M)])
    else:
        Kv = np.moveaxis(apply_double_layer(bd, k, np.moveaxis(dense, 0, -1)), -1, 0)
    filt = Kv - 0.5 * dense
    Y = np.moveaxis(trig_interpolate(np.moveaxis(filt, 0, -1), np.asarray(eval_t)), -1, 0)
    return FilteredData(Y=Y, dense=dense, filtered_dense=filt)
