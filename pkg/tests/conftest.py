import functools

import numpy as np
import pytest

from elg.forward import DEFAULT_SOURCES, SourceConfig, solve_transmission
from elg.geometry import make_phantom
from elg.kernels import kernel_constants


@pytest.fixture
def k1():
    return kernel_constants(1.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def default_sources():
    return SourceConfig(np.array(DEFAULT_SOURCES, dtype=float))


@functools.lru_cache(maxsize=None)
def sparse_solution(P: int):
    """Forward solve of the sparse-disks phantom, shared across test modules."""
    return solve_transmission(make_phantom("sparse-disks"), default_sources(), P)


def one_disk_phantom(lam: float = 2.0, mu: float = 2.0):
    """The middle unit disk of the sparse phantom on its own."""
    return make_phantom("sparse-disks", {"inclusions": [
        {"shape": "disk", "center": [0.0, -2.0], "radius": 1.0, "lam": lam, "mu": mu}]},
        allow_matched=True)


@functools.lru_cache(maxsize=None)
def one_disk_solution(P: int, lam: float = 2.0, mu: float = 2.0):
    ph = one_disk_phantom(lam, mu)
    return solve_transmission(ph, default_sources(), P)


def planted_mmv(seed: int, M: int, J: int = 40, L: int = 40, active: int = 5):
    """Random unit-column ``(J, 5L)`` matrix and noiseless data from ``active`` tied rows."""
    rng = np.random.default_rng(seed)
    Pi = rng.standard_normal((J, 5 * L))
    Pi /= np.linalg.norm(Pi, axis=0)
    support = np.sort(rng.choice(L, active, replace=False))
    X = np.zeros((5 * L, M))
    for q in range(5):
        X[q * L + support] = rng.standard_normal((active, M))
    return Pi, Pi @ X, support


def l1_ball_oracle(A, Y, eta):
    """min ||z||_1 s.t. ||Y - A z|| <= eta by SLSQP on the split z = p - q, p, q >= 0."""
    from scipy.optimize import minimize
    n = A.shape[1]
    cons = {"type": "ineq", "fun": lambda w: eta ** 2 - np.sum((Y - A @ (w[:n] - w[n:])) ** 2)}
    z0 = np.linalg.lstsq(A, Y, rcond=None)[0]
    w0 = np.concatenate([np.maximum(z0, 0), np.maximum(-z0, 0)])
    res = minimize(lambda w: w.sum(), w0, jac=lambda w: np.ones_like(w), bounds=[(0, None)] * (2 * n),
                   constraints=[cons], method="SLSQP", options={"ftol": 1e-14, "maxiter": 1000})
    return res.x[:n] - res.x[n:]
