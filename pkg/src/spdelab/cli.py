"""Command-line runner: check-covariance, simulate, verify, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import SUITES, ExperimentConfig, load_config
from .covariance import dalang_condition
from .errors import ConfigError, ConvergenceError, InadmissibleError, SpdeLabError
from .kernels import hypothesis_a_check
from .noise import sample_grid_increments
from .solver import (Field, solve_euler, solve_linear_spectral, solve_picard,
                     weighted_l2_norm)
from .verify import (CRITERIA, criterion_determinism, criterion_isometry,
                     criterion_linear_variance, picard_contraction_report)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_INADMISSIBLE = 3

log = logging.getLogger("spdelab")

SUITE_CRITERIA = {"dalang": [1], "isometry": [2], "linear-variance": [3],
                  "equivalence": [4], "picard": [5], "initial-terms": [6],
                  "moments": [7], "weighted-norms": [8],
                  "acceptance": [1, 2, 3, 4, 5, 6, 7, 8, 9]}


def _finite(obj):
    """Replace non-finite floats, which strict JSON cannot carry, by strings."""
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _dumps(obj) -> str:
    return json.dumps(_finite(obj), indent=2, sort_keys=True, allow_nan=False)


def _write_json(path: Path, obj) -> None:
    path.write_text(_dumps(obj) + "\n")


def _with_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "replicates", None) is not None:
        changes["replicates"] = args.replicates
    if getattr(args, "out", None) is not None:
        changes["output_dir"] = args.out
    if getattr(args, "suite", None) is not None:
        changes["suite"] = args.suite
    return replace(cfg, **changes) if changes else cfg


def admissibility(cfg: ExperimentConfig) -> dict:
    dal = dalang_condition(cfg.covariance, cfg.quadrature)
    hyp = hypothesis_a_check(cfg.kernel, cfg.covariance, cfg.grid.horizon, cfg.quadrature)
    return {"model": cfg.covariance.to_dict(), "dalang": dal.to_dict(),
            "hypothesis_a": hyp.to_dict(), "admissible": dal.holds and hyp.holds}


def cmd_check_covariance(cfg: ExperimentConfig) -> int:
    report = admissibility(cfg)
    print(_dumps(report))
    return EXIT_OK if report["admissible"] else EXIT_INADMISSIBLE


def run_simulation(cfg: ExperimentConfig) -> Field:
    kernel = cfg.kernel
    if cfg.scheme == "linear-spectral":
        return solve_linear_spectral(kernel, cfg.covariance, cfg.grid, cfg.seed,
                                     cfg.replicates)
    noise = sample_grid_increments(cfg.covariance, cfg.grid, cfg.seed, cfg.replicates)
    if cfg.scheme == "euler":
        return solve_euler(kernel, cfg.covariance, cfg.grid, cfg.coefficients,
                           cfg.initial_data, noise)
    p = cfg.picard
    return solve_picard(kernel, cfg.covariance, cfg.grid, cfg.coefficients, cfg.initial_data,
                        noise, tol=p["tol"], max_iter=p["max_iter"], rtol=p["rtol"])


def cmd_simulate(cfg: ExperimentConfig) -> int:
    report = admissibility(cfg)
    if not report["admissible"]:
        print(_dumps(report))
        return EXIT_INADMISSIBLE
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        fld = run_simulation(cfg)
    except ConvergenceError as exc:
        _write_json(out / "picard_log.json", picard_contraction_report(exc.log, converged=False))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY_FAILED
    fld.save(out / "field.bin")
    fld.export_csv(out / "field.csv")
    _write_json(out / "config.json", cfg.to_dict())
    _write_json(out / "provenance.json", {"provenance": fld.provenance, "log": list(fld.log)})
    log.info("wrote %s", out)
    return EXIT_OK


def run_suite(suite: str, replicates: int | None = None, seed: int | None = None):
    results = []
    for number in SUITE_CRITERIA[suite]:
        if number == 9:
            with tempfile.TemporaryDirectory() as tmp:
                results.append(criterion_determinism(tmp))
            continue
        kwargs = {}
        if number in (2, 3) and replicates is not None:
            kwargs["replicates"] = replicates
        if number in (2, 3) and seed is not None:
            kwargs["seed"] = seed
        func = {2: criterion_isometry, 3: criterion_linear_variance}.get(number, CRITERIA[number])
        results.append(func(**kwargs))
    return results


def cmd_verify(cfg: ExperimentConfig | None, suite: str, replicates, seed, out) -> int:
    results = run_suite(suite, replicates, seed)
    for r in results:
        print(r.line())
    payload = {"suite": suite, "criteria": [r.to_json() for r in results]}
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        _write_json(Path(out) / "report.json", payload)
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY_FAILED


def cmd_report(out: Path) -> int:
    fld = Field.load(out / "field.bin")
    g = fld.grid
    center = tuple(p // 2 for p in g.shape)
    vals = fld.values[(slice(None), slice(None)) + center]
    summary = {
        "grid": g.to_dict(), "provenance": fld.provenance, "replicates": fld.replicates,
        "center_mean": vals.mean(axis=0).tolist(),
        "center_second_moment": np.mean(vals ** 2, axis=0).tolist(),
        "theta_norm": weighted_l2_norm(fld, "theta", k=g.dimension + 1).mean(axis=0).tolist(),
        "vartheta_norm": weighted_l2_norm(fld, "vartheta").mean(axis=0).tolist(),
    }
    if fld.log:
        summary["picard"] = picard_contraction_report(fld.log)
    print(_dumps(summary))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spdelab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("check-covariance", "simulate", "verify", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="experiment config (JSON)")
        p.add_argument("--seed", type=int)
        p.add_argument("--replicates", type=int)
        p.add_argument("--out", type=str, help="output directory")
        p.add_argument("--suite", choices=SUITES)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = None
        if args.config is not None:
            cfg = _with_overrides(load_config(args.config), args)
        elif args.command in ("check-covariance", "simulate"):
            raise ConfigError("--config is required")
        if args.command == "check-covariance":
            return cmd_check_covariance(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "verify":
            suite = args.suite or (cfg.suite if cfg else "linear-variance")
            out = args.out or (cfg.output_dir if cfg else None)
            return cmd_verify(cfg, suite, args.replicates, args.seed, out)
        out = Path(args.out or (cfg.output_dir if cfg else "out"))
        return cmd_report(out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InadmissibleError as exc:
        print(f"inadmissible: {exc} ({exc.diagnosis})", file=sys.stderr)
        return EXIT_INADMISSIBLE
    except (SpdeLabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY_FAILED


if __name__ == "__main__":
    sys.exit(main())
