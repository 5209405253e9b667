"""Kelvin matrix of 2D isotropic elastostatics and the kernels derived from it.

Every function is vectorised over leading axes: ``x`` and ``y`` broadcast
against each other and the kernel indices are appended as trailing axes.
Lengths are in mm and moduli in GPa; nothing is rescaled internally.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_COINCIDENT_TOL = 1e-300


@dataclass(frozen=True)
class KernelConstants:
    lam: float
    mu: float
    alpha: float
    beta: float
    a: float
    b: float

    @property
    def div_coeff(self) -> float:
        """Coefficient ``beta - alpha`` (equal to ``a / mu``) of the divergence kernel."""
        return self.beta - self.alpha


def kernel_constants(lam: float, mu: float) -> KernelConstants:
    if not (mu > 0 and lam + 2 * mu > 0):
        raise ValueError(f"Lamé pair ({lam}, {mu}) violates strong convexity")
    den = 4 * np.pi * mu * (lam + 2 * mu)
    alpha = (lam + 3 * mu) / den
    beta = (lam + mu) / den
    a = -mu / (2 * np.pi * (lam + 2 * mu))
    b = -(lam + mu) / (np.pi * (lam + 2 * mu))
    return KernelConstants(float(lam), float(mu), float(alpha), float(beta), float(a), float(b))


def _diff(x, y):
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r2 = np.einsum("...i,...i->...", d, d)
    if np.any(r2 <= _COINCIDENT_TOL):
        raise ValueError("kernel evaluated at coincident points")
    return d, r2


def kelvin_matrix(x, k: KernelConstants) -> np.ndarray:
    """Gamma(x) = alpha ln|x| I - beta x x^T / |x|^2."""
    x = np.asarray(x, dtype=float)
    d, r2 = _diff(x, 0.0)
    out = -k.beta * d[..., :, None] * d[..., None, :] / r2[..., None, None]
    logr = 0.5 * np.log(r2)
    out[..., 0, 0] += k.alpha * logr
    out[..., 1, 1] += k.alpha * logr
    return out


def traction_kernel(x, y, nu, k: KernelConstants) -> np.ndarray:
    """Conormal derivative in ``y`` of the columns of Gamma(x - y).

    Entry ``[i, j]`` is the j-th traction component, at ``y`` with normal
    ``nu``, of the displacement field ``Gamma(x - .) e_i``; hence the double
    layer of a density ``phi`` is ``sum_j T[i, j] phi_j``.
    """
    d, r2 = _diff(x, y)
    nu = np.broadcast_to(np.asarray(nu, dtype=float), d.shape)
    dn = np.einsum("...i,...i->...", d, nu) / r2
    ddt = d[..., :, None] * d[..., None, :] / r2[..., None, None]
    out = (k.b * ddt) * dn[..., None, None]
    out[..., 0, 0] += k.a * dn
    out[..., 1, 1] += k.a * dn
    # -a (nu_j d_i - nu_i d_j) / r^2 is antisymmetric: only the (0,1) entry is independent
    anti = -k.a * (nu[..., 1] * d[..., 0] - nu[..., 0] * d[..., 1]) / r2
    out[..., 0, 1] += anti
    out[..., 1, 0] -= anti
    return out


def grad_kelvin(x, y, k: KernelConstants) -> np.ndarray:
    """``G[..., i, j, l] = d/dy_l gamma_ij(x - y)``."""
    d, r2 = _diff(x, y)
    e = np.eye(2)
    dd = d / r2[..., None]
    out = -2 * k.beta * np.einsum("...i,...j,...l->...ijl", dd, d, dd)
    out += -k.alpha * np.einsum("ij,...l->...ijl", e, dd)
    out += k.beta * np.einsum("il,...j->...ijl", e, dd)
    out += k.beta * np.einsum("jl,...i->...ijl", e, dd)
    return out


def div_kelvin(x, y, k: KernelConstants) -> np.ndarray:
    """Divergence in ``y`` of Gamma(x - y): ``(beta - alpha) (x - y) / |x - y|^2``."""
    d, r2 = _diff(x, y)
    return k.div_coeff * d / r2[..., None]


def strain_kelvin(x, y, k: KernelConstants) -> np.ndarray:
    """Strain in ``y`` of the columns of Gamma(x - y), symmetric in the last two axes."""
    d, r2 = _diff(x, y)
    e = np.eye(2)
    dd = d / r2[..., None]
    half = 0.5 * k.div_coeff
    out = -2 * k.beta * np.einsum("...i,...j,...l->...ijl", dd, d, dd)
    out += half * np.einsum("ij,...l->...ijl", e, dd)
    out += half * np.einsum("il,...j->...ijl", e, dd)
    out += k.beta * np.einsum("jl,...i->...ijl", e, dd)
    return out


def lambda_block(x, y, k: KernelConstants) -> np.ndarray:
    """Row-block kernel with row ``i = [div_i, vec(E[i])]`` (vec stacks columns)."""
    div = div_kelvin(x, y, k)
    strain = strain_kelvin(x, y, k)
    # column-major vec of the 2x2 slice: (0,0), (1,0), (0,1), (1,1)
    vec = np.swapaxes(strain, -1, -2).reshape(strain.shape[:-2] + (4,))
    return np.concatenate([div[..., None], vec], axis=-1)


def vec_colmajor(m: np.ndarray) -> np.ndarray:
    return np.swapaxes(m, -1, -2).reshape(m.shape[:-2] + (4,))
