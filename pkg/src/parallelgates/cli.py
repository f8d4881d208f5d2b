"""Command-line entry point: ``parallelgates run|verify --config FILE``."""
from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

from pydantic import ValidationError as SchemaError

from .config import load_config
from .core import ValidationError
from .pipeline import (
    EXIT_CONFIG,
    EXIT_DIM_CAP,
    EXIT_NOT_CONVERGED,
    EXIT_OK,
    DimensionCapError,
    build_model,
    check_caps,
    resource_estimate,
    run_pipeline,
)

WORKERS_ENV = "PARALLELGATES_WORKERS"


def bundled_configs() -> dict[str, Path]:
    """Name -> path of the configuration files shipped with the package."""
    root = resources.files("parallelgates") / "configs"
    return {p.name[:-5]: Path(str(p)) for p in root.iterdir() if p.name.endswith(".json")}


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    bundled = bundled_configs()
    if path in bundled:
        return bundled[path]
    return p


def _error(kind: str, message: str, code: int, **extra) -> int:
    record = {"status": "error", "error": kind, "message": message, "exit_code": code, **extra}
    print(json.dumps(record), file=sys.stderr)
    return code


def _default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _load(path: str):
    p = _resolve(path)
    try:
        return load_config(p)
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from None
    except SchemaError as exc:
        raise ValidationError(str(exc)) from None


def cmd_verify(args) -> int:
    try:
        cfg, digest = _load(args.config)
        model = build_model(cfg, args.seed_override)
    except (ValidationError, ValueError) as exc:
        return _error("invalid_config", str(exc), EXIT_CONFIG)
    est = resource_estimate(cfg, model)
    est["config_sha256"] = digest
    for w in est["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    print(json.dumps(est, indent=2, default=str))
    try:
        check_caps(cfg, model)
    except DimensionCapError as exc:
        return _error("dimension_cap", str(exc), EXIT_DIM_CAP)
    print("ok")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        cfg, digest = _load(args.config)
        model = build_model(cfg, args.seed_override)
        check_caps(cfg, model)
    except DimensionCapError as exc:
        return _error("dimension_cap", str(exc), EXIT_DIM_CAP)
    except (ValidationError, ValueError) as exc:
        return _error("invalid_config", str(exc), EXIT_CONFIG)
    workers = args.workers if args.workers is not None else _default_workers()
    try:
        res = run_pipeline(cfg, digest, out_dir=args.out, workers=workers,
                           seed_override=args.seed_override, plots=not args.no_plots)
    except DimensionCapError as exc:
        return _error("dimension_cap", str(exc), EXIT_DIM_CAP)
    except ValidationError as exc:
        return _error("invalid_config", str(exc), EXIT_CONFIG)
    if res.exit_code == EXIT_NOT_CONVERGED:
        return _error("not_converged", "robust synthesis did not converge; artifacts written",
                      EXIT_NOT_CONVERGED, out_dir=str(res.out_dir))
    print(json.dumps({"status": "ok", "out_dir": str(res.out_dir),
                      "results": res.summary["results"]}, indent=2, default=float))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parallelgates", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "synthesise, evaluate and write artifacts"),
                        ("verify", "validate a config and print a resource estimate")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True,
                       help="config JSON path or the name of a bundled config")
        p.add_argument("--seed-override", type=int, default=None)
        if name == "run":
            p.add_argument("--out", default=None, help="output directory (default from config)")
            p.add_argument("--workers", type=int, default=None,
                           help=f"worker threads (default ${WORKERS_ENV} or 1)")
            p.add_argument("--no-plots", action="store_true")
    sub.add_parser("list", help="list bundled configs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        for name in sorted(bundled_configs()):
            print(name)
        return EXIT_OK
    if args.command == "verify":
        return cmd_verify(args)
    return cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())
