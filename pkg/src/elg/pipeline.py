"""Experiment configuration, the forward and reconstruction stages, metrics and outputs."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .csalsa import csalsa_solve, default_zeta, fields_from_Z
from .filtering import calderon_filter, spline_densify
from .forward import (DEFAULT_SOURCES, MEASUREMENT_CONFIGS, FieldSamples, MeasurementSet,
                      SourceConfig, add_noise, background_field, measure, solve_transmission)
from .geometry import EllipseCurve, InteriorGrid, Phantom, interior_grid, make_phantom, sample_boundary
from .internal_field import internal_fields
from .kernels import kernel_constants
from .msbl import identify_support, msbl_solve
from .sensing import assemble_Pi, assemble_Pi_tilde, svd_preconditioner

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


class EmptySupportError(RuntimeError):
    """Step one selected no grid point; carries the partial result."""

    def __init__(self, result):
        super().__init__("step one identified an empty support")
        self.result = result


@dataclass
class MsblParams:
    iters: int = 50
    rho: float = 1e-3
    theta_scale: float = 1e-2
    xi: float = 0.0


@dataclass
class CsalsaParams:
    zeta: float | None = None  # None: table default for the phantom and configuration
    tau_scale: float = 0.1
    eta_scale: float = 0.3
    max_iter: int = 2000
    tol: float = 1e-4


def _dataclass_from(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    known = set(cls.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return cls(**d)


@dataclass
class ExperimentConfig:
    phantom: str = "sparse-disks"
    phantom_overrides: dict = field(default_factory=dict)
    sources: list = field(default_factory=lambda: [list(z) for z in DEFAULT_SOURCES])
    measurement: str = "R32"
    P: int | None = None  # None: 2000 for sparse-disks, 5000 otherwise
    h: float = 1.0 / 3.0
    snr_db: float = 40.0
    seed: int = 0
    msbl: MsblParams = field(default_factory=MsblParams)
    csalsa: CsalsaParams = field(default_factory=CsalsaParams)

    @property
    def boundary_nodes(self) -> int:
        if self.P is not None:
            return int(self.P)
        return 2000 if self.phantom == "sparse-disks" else 5000

    @property
    def zeta(self) -> float:
        z = self.csalsa.zeta
        return default_zeta(self.phantom, self.measurement) if z is None else float(z)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__) - {"phantom"}
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        ph = d.pop("phantom", "sparse-disks")
        if isinstance(ph, dict):
            ph = dict(ph)
            if "id" not in ph:
                raise ConfigError("phantom object needs an 'id'")
            d["phantom_overrides"] = {**d.get("phantom_overrides", {}), **{k: v for k, v in ph.items() if k != "id"}}
            ph = ph["id"]
        d["phantom"] = str(ph)
        if "msbl" in d:
            d["msbl"] = _dataclass_from(MsblParams, d["msbl"], "msbl")
        if "csalsa" in d:
            d["csalsa"] = _dataclass_from(CsalsaParams, d["csalsa"], "csalsa")
        if "snr_db" in d:
            d["snr_db"] = math.inf if d["snr_db"] in (None, "inf") else float(d["snr_db"])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.measurement not in MEASUREMENT_CONFIGS:
            raise ConfigError(f"unknown measurement configuration {self.measurement!r}")
        if not self.h > 0:
            raise ConfigError("grid spacing h must be positive")
        if self.P is not None and (int(self.P) < 16 or int(self.P) % 2):
            raise ConfigError("P must be even and >= 16")
        if not self.sources:
            raise ConfigError("at least one source point is required")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["snr_db"] = None if math.isinf(self.snr_db) else self.snr_db
        return d

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def make_phantom(self) -> Phantom:
        return make_phantom(self.phantom, self.phantom_overrides, allow_matched=True)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            return ExperimentConfig.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# forward stage


def solve_config(cfg: ExperimentConfig) -> FieldSamples:
    phantom = cfg.make_phantom()
    return solve_transmission(phantom, SourceConfig(np.asarray(cfg.sources, dtype=float)),
                              cfg.boundary_nodes)


def forward_record(fs: FieldSamples, cfg: ExperimentConfig) -> dict:
    """Sample, add noise and package a solved forward problem as a forward-data record."""
    ms = add_noise(measure(fs, cfg.measurement), cfg.snr_db, cfg.seed)
    ph = fs.phantom
    return {
        "schema": SCHEMA_VERSION,
        "phantom_id": ph.name,
        "background": {"semi_axes": list(ph.semi_axes), "lam0": ph.lam0, "mu0": ph.mu0, "d0": ph.d0},
        "sources": [list(map(float, z)) for z in fs.background.sources.points],
        "measurement_config": ms.config,
        "measurement_t": ms.t.tolist(),
        "measurement_points": ms.points.tolist(),
        "P": fs.bd.P,
        "snr_db": None if math.isinf(ms.snr_db) else ms.snr_db,
        "seed": ms.seed,
        "data": ms.values.tolist(),
        # the round-off level outer residual is only logged, it is not reproducible bit for bit
        "diagnostics": {k: _sig(v) for k, v in fs.diagnostics.items()
                        if k not in ("inclusion_nodes", "outer_residual")},
    }


def _sig(v, digits: int = 6):
    # solver diagnostics vary in the last bits with the BLAS thread schedule
    return float(f"{v:.{digits}g}") if isinstance(v, float) else v


def run_forward(cfg: ExperimentConfig) -> dict:
    return forward_record(solve_config(cfg), cfg)


def write_json(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1, allow_nan=False)
        fh.write("\n")


_FORWARD_KEYS = {"phantom_id", "background", "sources", "measurement_config", "measurement_t",
                 "measurement_points", "P", "snr_db", "seed", "data"}


def check_forward_record(rec: dict) -> None:
    missing = _FORWARD_KEYS - set(rec)
    if missing:
        raise ConfigError(f"forward-data file lacks keys {sorted(missing)}")
    data = np.asarray(rec["data"], dtype=float)
    R = len(rec["measurement_points"])
    if data.shape != (len(rec["sources"]), R, 2):
        raise ConfigError(f"data has shape {data.shape}, expected {(len(rec['sources']), R, 2)}")


# ---------------------------------------------------------------------------
# reconstruction stage


@dataclass(eq=False)
class ReconstructionResult:
    config: dict
    config_hash: str
    seed: int | None
    grid: InteriorGrid
    psi: np.ndarray  # (L,)
    support: np.ndarray  # (L~,) grid indices
    lam: np.ndarray | None = None  # (L~,)
    mu: np.ndarray | None = None
    metrics: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    complete: bool = True

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.grid.L, dtype=bool)
        m[self.support] = True
        return m

    def to_record(self) -> dict:
        ij = self.grid.ij[self.support].tolist()
        return _json_safe({
            "config": {"settings": self.config, "hash": self.config_hash, "seed": self.seed},
            "support": {"h": self.grid.h, "columns": ["i", "j"], "ij": self.grid.ij.tolist(),
                        "mask": self.mask.astype(int).tolist()},
            "psi": {"columns": ["i", "j"], "ij": self.grid.ij.tolist(), "values": self.psi.tolist()},
            "lambda_map": {"columns": ["i", "j"], "ij": ij,
                           "values": None if self.lam is None else self.lam.tolist()},
            "mu_map": {"columns": ["i", "j"], "ij": ij,
                       "values": None if self.mu is None else self.mu.tolist()},
            "metrics": self.metrics,
            "diagnostics": dict(self.diagnostics, complete=self.complete),
        })


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if not np.isfinite(obj) else float(obj)
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    return obj


def run_reconstruct(rec: dict, cfg: ExperimentConfig, log_stream=None) -> ReconstructionResult:
    """Two-step reconstruction using only the forward-data record.

    Raises :class:`EmptySupportError` (holding the partial result) when step
    one selects nothing.
    """
    check_forward_record(rec)
    t0 = time.perf_counter()
    bg = rec["background"]
    k0 = kernel_constants(bg["lam0"], bg["mu0"])
    outer = EllipseCurve((0.0, 0.0), *map(float, bg["semi_axes"]))
    bd = sample_boundary(outer, int(rec["P"]))
    t = np.asarray(rec["measurement_t"], dtype=float)
    points = np.asarray(rec["measurement_points"], dtype=float)
    data = np.asarray(rec["data"], dtype=float)
    src = SourceConfig(np.asarray(rec["sources"], dtype=float))
    diag = {}

    dense = spline_densify(data, t, bd.P)
    filt = calderon_filter(dense, bd, k0, t)
    Ymat = filt.as_matrix()

    domain = Phantom(name=rec["phantom_id"], semi_axes=tuple(bg["semi_axes"]), lam0=bg["lam0"],
                     mu0=bg["mu0"], d0=bg["d0"])
    grid = interior_grid(domain, cfg.h)
    Pi = assemble_Pi(points, grid, k0)
    pre = svd_preconditioner(Pi, cfg.msbl.theta_scale)
    X, state = msbl_solve(pre.apply(Pi.matrix), pre.apply(Ymat), iters=cfg.msbl.iters,
                          rho=cfg.msbl.rho, log_stream=log_stream)
    sup = identify_support(X, cfg.msbl.xi)
    diag.update(L=grid.L, R=len(t), M=src.M, msbl_zeta=state.zeta,
                msbl_active=state.active_blocks(), support_size=int(len(sup.indices)),
                theta=pre.theta)
    result = ReconstructionResult(config=cfg.to_dict(), config_hash=cfg.hash(), seed=rec["seed"],
                                  grid=grid, psi=sup.psi, support=sup.indices, diagnostics=diag)
    log.info("step one: %d of %d grid points selected", len(sup.indices), grid.L)
    if sup.empty:
        result.complete = False
        raise EmptySupportError(result)

    background = background_field(src, bd, k0)
    est = internal_fields(grid, sup.indices, X, bd, dense, background, k0)
    S2 = assemble_Pi_tilde(est.points, est.div, est.strain, points, k0, grid.h)
    Yt = filt.Y.transpose(0, 2, 1).ravel()
    cs = csalsa_solve(S2.matrix, Yt, cfg.zeta, tau_scale=cfg.csalsa.tau_scale,
                      eta_scale=cfg.csalsa.eta_scale, max_iter=cfg.csalsa.max_iter,
                      tol=cfg.csalsa.tol, log_stream=log_stream)
    maps = fields_from_Z(cs.Z, S2.norms, bg["lam0"], bg["mu0"])
    result.lam, result.mu = maps.lam, maps.mu
    diag.update(csalsa_iterations=cs.iterations, csalsa_converged=cs.converged,
                csalsa_residual=cs.residual, csalsa_eta=cs.eta, csalsa_tau=cs.tau, zeta=cs.zeta,
                zero_columns=int(len(S2.zero_columns)), stencils=est.flags)
    log.info("reconstruction finished in %.1f s", time.perf_counter() - t0)
    return result


# ---------------------------------------------------------------------------
# metrics and outputs


def dilate(grid: InteriorGrid, mask: np.ndarray) -> np.ndarray:
    """One-cell (8-neighbour) dilation of a boolean mask over the grid."""
    index = grid.index_of()
    out = mask.copy()
    for i, j in grid.ij[mask]:
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                n = index.get((int(i) + di, int(j) + dj))
                if n is not None:
                    out[n] = True
    return out


def jaccard(grid: InteriorGrid, support_mask, truth_mask) -> float:
    """``|S & dilate(T)| / |S | T|``: 1 for S = T, 0 for supports away from the truth."""
    S = np.asarray(support_mask, dtype=bool)
    T = np.asarray(truth_mask, dtype=bool)
    union = np.count_nonzero(S | T)
    if union == 0:
        return 1.0
    return np.count_nonzero(S & dilate(grid, T)) / union


def compute_metrics(result: ReconstructionResult, labels: np.ndarray, phantom: Phantom) -> dict:
    """Support Jaccard, per-inclusion mean maps, relative errors and ordering."""
    grid = result.grid
    labels = np.asarray(labels)
    mask = result.mask
    out = {"jaccard": jaccard(grid, mask, labels >= 0)}
    lam_means, mu_means, lam_err, mu_err = [], [], [], []
    pos = {int(g): n for n, g in enumerate(result.support)}
    for n, inc in enumerate(phantom.inclusions):
        region = dilate(grid, labels == n) & mask
        sel = [pos[int(g)] for g in np.flatnonzero(region)]
        if result.lam is None or not sel:
            lam_means.append(math.nan)
            mu_means.append(math.nan)
        else:
            lam_means.append(float(np.mean(result.lam[sel])))
            mu_means.append(float(np.mean(result.mu[sel])))
        lam_err.append(abs(lam_means[-1] - inc.lam) / abs(inc.lam))
        mu_err.append(abs(mu_means[-1] - inc.mu) / abs(inc.mu))
    mu_arr = np.array(mu_means)
    order = [int(i) for i in np.argsort(-np.nan_to_num(mu_arr, nan=-np.inf), kind="stable")]
    out.update(lambda_means=lam_means, mu_means=mu_means, lambda_rel_error=lam_err,
               mu_rel_error=mu_err, mu_order=order,
               truth_mu=[inc.mu for inc in phantom.inclusions],
               truth_lambda=[inc.lam for inc in phantom.inclusions])
    return out


def emit_outputs(result: ReconstructionResult, out_dir) -> dict:
    """Write ``result.json`` and the ``psi``, ``lambda`` and ``mu`` CSV grids."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec = result.to_record()
    write_json(rec, out / "result.json")
    pts = result.grid.points
    _write_csv(out / "psi.csv", pts, result.psi)
    if result.lam is not None:
        _write_csv(out / "lambda.csv", pts[result.support], result.lam)
        _write_csv(out / "mu.csv", pts[result.support], result.mu)
    return rec


def _write_csv(path, pts, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "value"])
        for (x, y), v in zip(pts, values):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])


def load_result(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def run_pipeline(cfg: ExperimentConfig, fs: FieldSamples | None = None,
                 log_stream=None) -> tuple[dict, ReconstructionResult]:
    """Forward stage, reconstruction, and metrics against the configured phantom.

    A precomputed solve ``fs`` for the same phantom and sources can be passed
    to reuse it across measurement configurations and seeds.
    """
    fs = solve_config(cfg) if fs is None else fs
    rec = forward_record(fs, cfg)
    phantom = cfg.make_phantom()
    truth = interior_grid(phantom, cfg.h)
    try:
        result = run_reconstruct(rec, cfg, log_stream=log_stream)
    except EmptySupportError as exc:
        exc.result.metrics = compute_metrics(exc.result, truth.labels, phantom)
        raise
    result.metrics = compute_metrics(result, truth.labels, phantom)
    return rec, result
