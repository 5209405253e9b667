"""Forward simulation: background fields, the transmission solve and boundary measurements."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .geometry import DiscretizedBoundary, Phantom, contains, distance_to_curve, sample_boundary
from .kernels import KernelConstants, grad_kelvin, kelvin_matrix, kernel_constants, traction_kernel
from .potentials import (_CHUNK, adjoint_rows, apply_single_layer, double_layer_rows,
                         eval_single_layer, eval_single_layer_gradient, single_layer_rows)

log = logging.getLogger(__name__)

DEFAULT_SOURCES = ((12.0, 11.0), (9.0, -11.0), (-1.0, 8.0), (-50.0, 0.0))
MEASUREMENT_CONFIGS = ("R100", "R32", "R16", "R16p")
MIN_INCLUSION_NODES = 64


class ForwardError(RuntimeError):
    pass


@dataclass(frozen=True)
class SourceConfig:
    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[1] != 2 or len(pts) == 0:
            raise ValueError("sources must be a non-empty list of 2D points")
        object.__setattr__(self, "points", pts)

    @property
    def M(self) -> int:
        return len(self.points)

    def check_outside(self, phantom: Phantom) -> None:
        a, b = phantom.semi_axes
        r = (self.points[:, 0] / a) ** 2 + (self.points[:, 1] / b) ** 2
        if np.any(r <= 1.0):
            raise ValueError("every source point must lie strictly outside the background domain")


def rigid_modes(x) -> np.ndarray:
    """``(3, n, 2)`` values of the rigid displacements (1,0), (0,1), (x2,-x1)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.zeros((3,) + x.shape)
    out[0, :, 0] = 1.0
    out[1, :, 1] = 1.0
    out[2, :, 0] = x[:, 1]
    out[2, :, 1] = -x[:, 0]
    return out


def rigid_motion(coef, x) -> np.ndarray:
    return np.einsum("c,cnk->nk", np.asarray(coef, dtype=float), rigid_modes(x))


def rigid_projection(bd: DiscretizedBoundary, v) -> np.ndarray:
    """Coefficients of the quadrature L2 projection of nodal fields ``v`` onto rigid motions.

    ``v`` has shape ``(..., P, 2)``; the result has shape ``(..., 3)``.
    """
    psi = rigid_modes(bd.nodes)
    gram = np.einsum("cpk,dpk,p->cd", psi, psi, bd.jac)
    rhs = np.einsum("...pk,cpk,p->...c", v, psi, bd.jac)
    return np.linalg.solve(gram, rhs[..., None])[..., 0] if rhs.ndim > 1 else np.linalg.solve(gram, rhs)


@dataclass(frozen=True, eq=False)
class BackgroundField:
    sources: SourceConfig
    k: KernelConstants
    coef: np.ndarray  # (M, 3) rigid correction making U orthogonal to rigid motions
    U: np.ndarray  # (M, P, 2) at the nodes
    g: np.ndarray  # (M, P, 2) tractions at the nodes

    def at(self, x) -> np.ndarray:
        """``(M, n, 2)`` values of every U_m at arbitrary points."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty((self.sources.M, len(x), 2))
        for m, z in enumerate(self.sources.points):
            out[m] = kelvin_matrix(x - z, self.k)[..., :, 0] + rigid_motion(self.coef[m], x)
        return out

    def gradient_at(self, x) -> np.ndarray:
        """``(M, n, 2, 2)`` Jacobians ``d U_i / d x_l``; rigid parts only add skew terms."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty((self.sources.M, len(x), 2, 2))
        for m, z in enumerate(self.sources.points):
            # d/dx gamma(x - z) = -d/dz gamma(x - z)
            out[m] = -grad_kelvin(x, z, self.k)[..., :, 0, :]
            out[m, :, 0, 1] += self.coef[m, 2]
            out[m, :, 1, 0] -= self.coef[m, 2]
        return out


def background_field(src: SourceConfig, bd: DiscretizedBoundary, k: KernelConstants) -> BackgroundField:
    M = src.M
    U = np.empty((M, bd.P, 2))
    g = np.empty((M, bd.P, 2))
    for m, z in enumerate(src.points):
        if np.min(np.linalg.norm(bd.nodes - z, axis=1)) < 1e-9:
            raise ValueError("source point lies on the boundary")
        U[m] = kelvin_matrix(bd.nodes - z, k)[..., :, 0]
        # traction at x of Gamma(x - z) e_1 = row 0 of the traction kernel T(z, x, nu_x)
        g[m] = traction_kernel(z, bd.nodes, bd.normals, k)[..., 0, :]
    coef = -rigid_projection(bd, U)
    for m in range(M):
        U[m] += rigid_motion(coef[m], bd.nodes)
    return BackgroundField(src, k, coef, U, g)


# ---------------------------------------------------------------------------
# transmission problem


@dataclass(frozen=True, eq=False)
class _Inclusion:
    bd: DiscretizedBoundary
    k_in: KernelConstants
    index: int


@dataclass(frozen=True, eq=False)
class FieldSamples:
    """Result of a forward solve, nodal on the outer boundary, with interior evaluation."""

    phantom: Phantom
    bd: DiscretizedBoundary
    k: KernelConstants
    background: BackgroundField
    u: np.ndarray  # (M, P, 2) total field on the outer boundary
    perturbation: np.ndarray  # (M, P, 2) u - U, orthogonal to rigid motions
    rigid_shift: np.ndarray  # (M, 3) rigid motion removed from u
    inclusions: tuple = ()
    phi: tuple = ()  # per active inclusion, (M, P_n, 2) interior densities
    psi: tuple = ()
    eta: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def U(self):
        return self.background.U

    @property
    def g(self):
        return self.background.g

    @property
    def M(self) -> int:
        return self.u.shape[0]

    def _inside_which(self, x):
        lab = np.full(len(x), -1, dtype=int)
        for n, inc in enumerate(self.inclusions):
            lab[contains(inc.bd.curve, x) & (lab < 0)] = n
        return lab

    def _located(self, x):
        """Labels, and points on an interface moved a quarter node spacing inside."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lab = self._inside_which(x)
        for n, inc in enumerate(self.inclusions):
            sel = np.flatnonzero(lab == n)
            if len(sel) == 0:
                continue
            d = np.linalg.norm(x[sel, None, :] - inc.bd.nodes[None, :, :], axis=-1)
            on = distance_to_curve(inc.bd.curve, x[sel]) < 1e-9
            if np.any(on):
                near = d[on].argmin(axis=1)
                x = x.copy()
                x[sel[on]] -= 0.25 * float(inc.bd.jac.max()) * inc.bd.normals[near]
        return x, lab

    def interior_field(self, x) -> np.ndarray:
        """Total displacement ``(M, n, 2)`` at points inside the background domain."""
        x, lab = self._located(x)
        out = np.empty((self.M, len(x), 2))
        for m in range(self.M):
            outside = lab < 0
            if np.any(outside):
                xo = x[outside]
                v = eval_single_layer(self.bd, self.eta[m], xo, self.k, upsample=True) \
                    if self.eta is not None else self.background.at(xo)[m]
                for n, inc in enumerate(self.inclusions):
                    v = v + eval_single_layer(inc.bd, self.psi[n][m], xo, self.k, upsample=True)
                out[m, outside] = v
            for n, inc in enumerate(self.inclusions):
                sel = lab == n
                if np.any(sel):
                    out[m, sel] = eval_single_layer(inc.bd, self.phi[n][m], x[sel], inc.k_in,
                                                    upsample=True)
            out[m] -= rigid_motion(self.rigid_shift[m], x)
        return out

    def interior_gradient(self, x) -> np.ndarray:
        """Jacobian ``(M, n, 2, 2)`` of the total displacement at interior points."""
        x, lab = self._located(x)
        out = np.empty((self.M, len(x), 2, 2))
        for m in range(self.M):
            outside = lab < 0
            if np.any(outside):
                xo = x[outside]
                if self.eta is not None:
                    v = eval_single_layer_gradient(self.bd, self.eta[m], xo, self.k)
                else:
                    v = self.background.gradient_at(xo)[m]
                for n, inc in enumerate(self.inclusions):
                    v = v + eval_single_layer_gradient(inc.bd, self.psi[n][m], xo, self.k)
                out[m, outside] = v
            for n, inc in enumerate(self.inclusions):
                sel = lab == n
                if np.any(sel):
                    out[m, sel] = eval_single_layer_gradient(inc.bd, self.phi[n][m], x[sel], inc.k_in)
            out[m, :, 0, 1] -= self.rigid_shift[m, 2]
            out[m, :, 1, 0] += self.rigid_shift[m, 2]
        return out


def inclusion_nodes(P: int, len_inclusion: float, len_outer: float) -> int:
    n = int(np.ceil(P * len_inclusion / len_outer))
    n += n % 2
    return max(MIN_INCLUSION_NODES, n)


def _put(A, blk, r0, Pr, rows, c0, Pc, sign=1.0):
    """Scatter ``(n, Pc, 2, 2)`` kernel blocks for target rows into the blocked system matrix."""
    for i in range(2):
        for j in range(2):
            A[r0 + i * Pr + rows, c0 + j * Pc:c0 + (j + 1) * Pc] += sign * blk[:, :, i, j]


def _cross_single(src, x, k):
    G = kelvin_matrix(x[:, None, :] - src.nodes[None, :, :], k)
    return G * src.jac[None, :, None, None]


def _cross_traction(src, x, nu, k):
    T = traction_kernel(src.nodes[None, :, :], x[:, None, :], nu[:, None, :], k)
    return np.swapaxes(T, -1, -2) * src.jac[None, :, None, None]


def _chunks(P):
    for s in range(0, P, _CHUNK):
        yield np.arange(s, min(s + _CHUNK, P))


def solve_transmission(phantom: Phantom, src: SourceConfig, P: int, *,
                       inclusion_P: int | None = None, drop_matched: bool = True) -> FieldSamples:
    """Solve the layer-potential transmission system for every excitation.

    One ``(phi_n, psi_n)`` density pair is stacked per inclusion and a single
    ``eta`` lives on the outer boundary. The three-dimensional null space of
    the system (rigid motions) is removed by a rank-3 deflation of the outer
    Neumann block, and the rigid part of ``u - U`` is projected out afterwards.
    Inclusions whose parameters equal the background are dropped when
    ``drop_matched`` is set, since they do not scatter.
    """
    phantom.check(allow_matched=True)
    src.check_outside(phantom)
    k0 = kernel_constants(phantom.lam0, phantom.mu0)
    bd = sample_boundary(phantom.boundary, P)
    bg = background_field(src, bd, k0)
    len_outer = bd.length

    incs = []
    for n, inc in enumerate(phantom.inclusions):
        if drop_matched and inc.lam == phantom.lam0 and inc.mu == phantom.mu0:
            continue
        Pn = inclusion_P or inclusion_nodes(P, inc.curve.arc_length(), len_outer)
        incs.append(_Inclusion(sample_boundary(inc.curve, Pn), kernel_constants(inc.lam, inc.mu), n))

    if not incs:
        # nothing scatters: the total field is the background field exactly
        zero = np.zeros_like(bg.U)
        return FieldSamples(phantom=phantom, bd=bd, k=k0, background=bg, u=bg.U.copy(), perturbation=zero,
                            rigid_shift=np.zeros((src.M, 3)), diagnostics={"unknowns": 0})

    sizes = [2 * inc.bd.P for inc in incs for _ in range(2)] + [2 * P]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    N = int(offs[-1])
    log.info("transmission system: %d unknowns, %d active inclusions", N, len(incs))
    A = np.zeros((N, N))
    phi_off = [int(offs[2 * n]) for n in range(len(incs))]
    psi_off = [int(offs[2 * n + 1]) for n in range(len(incs))]
    eta_off = int(offs[-2])

    for n, inc in enumerate(incs):
        b, Pn = inc.bd, inc.bd.P
        r1, r2 = phi_off[n], psi_off[n]  # row blocks: continuity, traction balance
        for rows in _chunks(Pn):
            x, nu = b.nodes[rows], b.normals[rows]
            _put(A, single_layer_rows(b, inc.k_in, rows), r1, Pn, rows, phi_off[n], Pn)
            _put(A, single_layer_rows(b, k0, rows), r1, Pn, rows, psi_off[n], Pn, -1.0)
            _put(A, _cross_single(bd, x, k0), r1, Pn, rows, eta_off, P, -1.0)
            _put(A, adjoint_rows(b, inc.k_in, rows), r2, Pn, rows, phi_off[n], Pn)
            _put(A, adjoint_rows(b, k0, rows), r2, Pn, rows, psi_off[n], Pn, -1.0)
            _put(A, _cross_traction(bd, x, nu, k0), r2, Pn, rows, eta_off, P, -1.0)
            for j, other in enumerate(incs):
                if j == n:
                    continue
                Pj = other.bd.P
                _put(A, _cross_single(other.bd, x, k0), r1, Pn, rows, psi_off[j], Pj, -1.0)
                _put(A, _cross_traction(other.bd, x, nu, k0), r2, Pn, rows, psi_off[j], Pj, -1.0)
        idx = np.arange(2 * Pn)
        A[r2 + idx, phi_off[n] + idx] -= 0.5
        A[r2 + idx, psi_off[n] + idx] -= 0.5
    for rows in _chunks(P):
        x, nu = bd.nodes[rows], bd.normals[rows]
        _put(A, adjoint_rows(bd, k0, rows), eta_off, P, rows, eta_off, P)
        for j, other in enumerate(incs):
            _put(A, _cross_traction(other.bd, x, nu, k0), eta_off, P, rows, psi_off[j], other.bd.P)
    idx = np.arange(2 * P)
    A[eta_off + idx, eta_off + idx] -= 0.5

    # rank-3 deflation with W-orthonormal rigid modes
    w = np.tile(bd.jac, 2)
    modes = np.stack([np.concatenate([r[:, 0], r[:, 1]]) for r in rigid_modes(bd.nodes)], 1)
    q, _ = np.linalg.qr(modes * np.sqrt(w)[:, None])
    psi_hat = q / np.sqrt(w)[:, None]
    defl = psi_hat @ (psi_hat * w[:, None]).T

    rhs = np.zeros((N, src.M))
    rhs[eta_off:] = np.concatenate([bg.g[:, :, 0], bg.g[:, :, 1]], axis=1).T

    blk = A[eta_off:, eta_off:].copy()
    A[eta_off:, eta_off:] += defl
    anorm = np.linalg.norm(A, 1)
    try:
        lu = sla.lu_factor(A, overwrite_a=True, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ForwardError(f"transmission system factorization failed: {exc}") from exc
    rcond = _rcond(lu, anorm)
    if not np.isfinite(rcond) or rcond < 1e-14:
        raise ForwardError(f"transmission system is numerically singular (rcond {rcond:.2e})")
    sol = sla.lu_solve(lu, rhs, check_finite=False)
    del lu

    eta = sol[eta_off:]
    defl_part = defl @ eta
    resid_outer = blk @ eta + sum(
        _apply_cross_traction(incs[j].bd, bd, k0, sol[psi_off[j]:psi_off[j] + 2 * incs[j].bd.P])
        for j in range(len(incs))) - rhs[eta_off:]
    rel_resid = float(np.linalg.norm(resid_outer) / max(np.linalg.norm(rhs), 1e-300))
    log.info("rcond %.3e, outer residual %.3e, deflated component %.3e", rcond, rel_resid,
             np.linalg.norm(defl_part))

    def nodal(v, Pn):
        return np.stack([v[:Pn].T, v[Pn:].T], axis=-1)  # (M, Pn, 2)

    eta_n = nodal(eta, P)
    u = apply_single_layer(bd, k0, np.moveaxis(eta_n, 0, -1))  # (P, 2, M)
    phis, psis = [], []
    for n, inc in enumerate(incs):
        Pn = inc.bd.P
        ph = nodal(sol[phi_off[n]:phi_off[n] + 2 * Pn], Pn)
        ps = nodal(sol[psi_off[n]:psi_off[n] + 2 * Pn], Pn)
        phis.append(ph)
        psis.append(ps)
        for rows in _chunks(P):
            u[rows] += np.einsum("pqij,qjm->pim", _cross_single(inc.bd, bd.nodes[rows], k0),
                                 np.moveaxis(ps, 0, -1))
    u = np.moveaxis(u, -1, 0)
    pert = u - bg.U
    shift = rigid_projection(bd, pert)
    for m in range(src.M):
        pert[m] -= rigid_motion(shift[m], bd.nodes)
    diagnostics = {"unknowns": N, "rcond": rcond, "outer_residual": rel_resid,
                   "inclusion_nodes": [inc.bd.P for inc in incs]}
    return FieldSamples(phantom=phantom, bd=bd, k=k0, background=bg, u=u - np.einsum(
        "mc,cpk->mpk", shift, rigid_modes(bd.nodes)), perturbation=pert, rigid_shift=shift,
        inclusions=tuple(incs), phi=tuple(phis), psi=tuple(psis), eta=eta_n,
        diagnostics=diagnostics)


def _apply_cross_traction(src, bd, k, dens):
    Ps = src.P
    out = np.zeros((2 * bd.P,) + dens.shape[1:])
    d = np.stack([dens[:Ps], dens[Ps:]], axis=1)  # (Ps, 2, M)
    for rows in _chunks(bd.P):
        v = np.einsum("pqij,qjm->pim", _cross_traction(src, bd.nodes[rows], bd.normals[rows], k), d)
        out[rows] = v[:, 0]
        out[bd.P + rows] = v[:, 1]
    return out


def _rcond(lu, anorm) -> float:
    lapack = sla.get_lapack_funcs("gecon", (lu[0],))
    rc, info = lapack(lu[0], anorm, norm="1")
    return float(rc) if info == 0 else float("nan")


# ---------------------------------------------------------------------------
# measurements


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    config: str
    t: np.ndarray  # (R,) boundary parameters
    points: np.ndarray  # (R, 2)
    values: np.ndarray  # (M, R, 2) samples of u - U
    snr_db: float = float("inf")
    seed: int | None = None

    @property
    def R(self) -> int:
        return len(self.t)

    @property
    def M(self) -> int:
        return self.values.shape[0]


def measurement_parameters(config: str) -> np.ndarray:
    if config == "R16p":
        # 16 points over three quarters of the parameter circle (angle 3*pi/2)
        return 0.75 * np.arange(16) / 15
    if config in MEASUREMENT_CONFIGS:
        R = int(config[1:])
        return np.arange(R) / R
    raise ValueError(f"unknown measurement configuration {config!r}; known: {MEASUREMENT_CONFIGS}")


def trig_interpolate(values: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Evaluate the trigonometric interpolant of uniform periodic samples (axis 0) at ``t``.

    Values at parameters that coincide with a node are copied exactly.
    """
    P = values.shape[0]
    c = np.fft.fft(values, axis=0) / P
    k = np.fft.fftfreq(P, d=1.0 / P)
    if P % 2 == 0:
        c[P // 2] *= 0.5
        c = np.concatenate([c, c[P // 2:P // 2 + 1]], axis=0)
        k = np.concatenate([k, [P // 2]])
        k[P // 2] = -P // 2
    phase = np.exp(2j * np.pi * np.outer(t, k))
    out = np.real(np.tensordot(phase, c, axes=(1, 0)))
    pos = np.asarray(t) * P
    hit = np.isclose(pos, np.round(pos), rtol=0, atol=1e-9)
    if np.any(hit):
        out[hit] = values[np.round(pos[hit]).astype(int) % P]
    return out


def measure(fs: FieldSamples, config: str) -> MeasurementSet:
    t = measurement_parameters(config)
    pts = fs.bd.curve.point(t)
    vals = np.moveaxis(trig_interpolate(np.moveaxis(fs.perturbation, 0, -1), t), -1, 0)
    return MeasurementSet(config=config, t=t, points=pts, values=vals)


def add_noise(ms: MeasurementSet, snr_db: float, seed: int) -> MeasurementSet:
    """Add white Gaussian noise at the given SNR, per excitation; ``inf`` leaves data unchanged."""
    if np.isinf(snr_db) and snr_db > 0:
        return replace(ms, snr_db=float(snr_db), seed=seed)
    rng = np.random.default_rng(seed)
    R = ms.R
    norms = np.linalg.norm(ms.values.reshape(ms.M, -1), axis=1)
    sigma = norms * 10.0 ** (-snr_db / 20.0) / np.sqrt(2 * R)
    noise = rng.standard_normal(ms.values.shape) * sigma[:, None, None]
    return replace(ms, values=ms.values + noise, snr_db=float(snr_db), seed=seed)
