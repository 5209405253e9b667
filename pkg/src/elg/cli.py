"""Command line entry point: ``elg {forward,reconstruct,pipeline,phantoms}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .csalsa import CsalsaError
from .forward import ForwardError
from .geometry import PhantomError, make_phantom, phantom_names
from .msbl import MsblError
from .pipeline import (ConfigError, EmptySupportError, ExperimentConfig, compute_metrics, emit_outputs,
                       load_config, run_forward, run_pipeline, run_reconstruct, write_json)
from .sensing import SensingError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_EMPTY = 0, 2, 3, 4

log = logging.getLogger("elg")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _stream(args):
    return sys.stderr if args.verbose else None


def cmd_phantoms(args) -> int:
    for name in phantom_names():
        ph = make_phantom(name)
        if args.verbose:
            print(json.dumps(ph.to_dict()))
        else:
            print(f"{name}: {len(ph.inclusions)} inclusion(s)")
    return EXIT_OK


def cmd_forward(args) -> int:
    cfg = _config(args)
    rec = run_forward(cfg)
    out = Path(args.out)
    write_json(rec, out if out.suffix == ".json" else out / "forward.json")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg = _config(args)
    try:
        with open(args.forward) as fh:
            rec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read forward-data file {args.forward}: {exc}") from exc
    try:
        result = run_reconstruct(rec, cfg, log_stream=_stream(args))
    except EmptySupportError as exc:
        emit_outputs(exc.result, args.out)
        raise
    if args.truth:
        from .geometry import interior_grid
        ph = cfg.make_phantom()
        result.metrics = compute_metrics(result, interior_grid(ph, cfg.h).labels, ph)
    emit_outputs(result, args.out)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    try:
        rec, result = run_pipeline(cfg, log_stream=_stream(args))
    except EmptySupportError as exc:
        emit_outputs(exc.result, out)
        raise
    write_json(rec, out / "forward.json")
    emit_outputs(result, out)
    log.info("metrics: %s", json.dumps(result.to_record()["metrics"]))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment configuration (JSON)")
    common.add_argument("--seed", type=int, help="override the noise seed")
    common.add_argument("--verbose", "-v", action="store_true",
                        help="log progress and per-iteration diagnostics to stderr")
    p = argparse.ArgumentParser(prog="elg", description="Elastic inclusion imaging from sparse boundary data.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("phantoms", parents=[common], help="list the phantom catalog")
    f = sub.add_parser("forward", parents=[common], help="simulate boundary measurements")
    f.add_argument("--out", required=True, help="output file (.json) or directory")
    r = sub.add_parser("reconstruct", parents=[common], help="two-step reconstruction from a forward file")
    r.add_argument("forward", help="forward-data JSON file")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--truth", action="store_true", help="score against the configured phantom")
    q = sub.add_parser("pipeline", parents=[common], help="forward simulation, reconstruction and metrics")
    q.add_argument("--out", required=True, help="output directory")
    return p


def _limit_threads():
    n = os.environ.get("ELG_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, int(n)))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"phantoms": cmd_phantoms, "forward": cmd_forward,
                "reconstruct": cmd_reconstruct, "pipeline": cmd_pipeline}
    try:
        _limit_threads()
        with np.errstate(all="ignore"):
            return handlers[args.command](args)
    except EmptySupportError as exc:
        print(f"elg: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (ConfigError, PhantomError) as exc:
        print(f"elg: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ForwardError, MsblError, CsalsaError, SensingError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"elg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
