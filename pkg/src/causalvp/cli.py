"""Command-line front-end: ``causalvp {solve,verify,cmin,scan,selftest}``.

Reports are JSON trees that are a pure function of (config, seed); wall-clock
timings go to a separate ``*.timings.json`` sidecar so reruns are
byte-identical.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from collections import Counter
from dataclasses import replace
from pathlib import Path

from . import __version__
from .fgeometry import Causal, classify_causal
from .io import (
    SCHEMA_VERSION,
    ConfigError,
    RunConfig,
    atomic_write_text,
    config_from_dict,
    config_to_dict,
    dumps,
    jsonable,
    read_config,
    read_measure,
    report_to_rows,
    write_columns,
    write_measure,
    write_report,
)
from .measures import DiscreteMeasure
from .solver import estimate_cmin, minimize
from .verifier import ELCertificate, certificate_checks, certify, fit_multipliers, off_support_scan, regularity_check, support_functions

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_NOT_CONVERGED = 3
EXIT_CERT_FAILED = 4
EXIT_CONFIG = 5

OUTPUT_ENV = "CVP_OUTPUT_DIR"
DEFAULT_OUTPUT = "cvp_output"

log = logging.getLogger("causalvp")


class _Clock:
    def __init__(self):
        self.t = {}

    def __call__(self, name):
        clock = self

        class _Span:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                clock.t[name] = clock.t.get(name, 0.0) + time.perf_counter() - self.t0

        return _Span()


def certificate_dict(cert: ELCertificate) -> dict:
    d = {k: v for k, v in vars(cert).items() if k != "diagnostics"}
    d["diagnostics"] = dict(cert.diagnostics)
    return jsonable(d)


def support_table(rho: DiscreteMeasure) -> list[dict]:
    rows = []
    for i, (p, w) in enumerate(zip(rho.points, rho.weights)):
        hist = Counter(classify_causal(p, q).value for j, q in enumerate(rho.points) if j != i)
        rows.append(
            {
                "norm": p.norm(),
                "trace": p.trace(),
                "weight": float(w),
                "causal": {c.value: hist.get(c.value, 0) for c in Causal},
            }
        )
    return rows


def resolve_C(cfg: RunConfig, clock: _Clock):
    """Return ``(C, C_min_estimate)``; ``auto`` becomes twice the estimate."""
    C = cfg.constraint_C
    if C == math.inf:
        return C, None
    with clock("cmin"):
        est = estimate_cmin(cfg.model, cfg.constraint(math.inf), cfg.solver)
    if C == "auto":
        return 2.0 * est, est
    if C < est:
        msg = f"warning: C below estimated C_min ({C!r} < {est!r})"
        print(msg, file=sys.stderr)
        log.warning(msg)
    return C, est


def _base_report(command: str, cfg: RunConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config_echo": config_to_dict(cfg),
    }


def _emit(out: Path, stem: str, report: dict, fmt: str, clock: _Clock) -> Path:
    if fmt == "columnar":
        path = write_columns(out / f"{stem}.csv", ["key", "value"], report_to_rows(jsonable(report)))
    else:
        path = write_report(out / f"{stem}.json", report)
    atomic_write_text(out / f"{stem}.timings.json", dumps({k: round(v, 6) for k, v in sorted(clock.t.items())}))
    return path


def _certificate_section(rho: DiscreteMeasure, cfg: RunConfig, C: float, clock: _Clock):
    spec = cfg.constraint(C)
    with clock("verify"):
        cert = certify(rho, spec, cfg.verify)
    checks = certificate_checks(cert, cfg.verify)
    return cert, checks


def run_solve(cfg: RunConfig, out: Path) -> tuple[dict, int]:
    clock = _Clock()
    C, est = resolve_C(cfg, clock)
    with clock("solve"):
        res = minimize(cfg.model, cfg.constraint(C), cfg.solver)
    write_measure(out / "measure.json", res.measure)
    cert, checks = _certificate_section(res.measure, cfg, C, clock)
    report = _base_report("solve", cfg)
    report.update(
        {
            "converged": res.converged,
            "certified": all(checks.values()),
            "S_value": res.S_value,
            "T_value": res.T_value,
            "C": C,
            "C_min_estimate": est,
            "constraint_residual_norm": res.constraint_residual_norm,
            "bc_active": res.bc_active,
            "solver": {
                "message": res.message,
                "iterations": res.iterations,
                "el_residual_relative": res.el_residual,
                "best_restart": res.restart_index,
                "restarts": res.restarts,
            },
            "certificate": certificate_dict(cert),
            "checks": checks,
            "support_table": support_table(res.measure.pruned()),
            "measure_file": "measure.json",
            "timings": {"sidecar": "solve.timings.json"},
        }
    )
    _emit(out, "solve", report, cfg.output.format, clock)
    if not res.converged:
        return report, EXIT_NOT_CONVERGED
    return report, EXIT_OK if report["certified"] else EXIT_CERT_FAILED


def run_verify(measure_file, cfg: RunConfig, out: Path) -> tuple[dict, int]:
    clock = _Clock()
    rho = read_measure(measure_file, cfg.model)
    C, est = resolve_C(cfg, clock)
    cert, checks = _certificate_section(rho, cfg, C, clock)
    report = _base_report("verify", cfg)
    report.update(
        {
            "certified": all(checks.values()),
            "S_value": cert.S,
            "T_value": cert.T,
            "C": C,
            "C_min_estimate": est,
            "certificate": certificate_dict(cert),
            "checks": checks,
            "support_table": support_table(rho.pruned()),
            "measure_file": str(measure_file),
            "timings": {"sidecar": "verify.timings.json"},
        }
    )
    _emit(out, "verify", report, cfg.output.format, clock)
    return report, EXIT_OK if report["certified"] else EXIT_CERT_FAILED


def run_cmin(cfg: RunConfig, out: Path) -> tuple[dict, int]:
    clock = _Clock()
    with clock("cmin"):
        res = estimate_cmin(cfg.model, cfg.constraint(math.inf), cfg.solver, return_result=True)
    write_measure(out / "cmin_witness.json", res.measure)
    report = _base_report("cmin", cfg)
    report.update(
        {
            "C_min_estimate": res.T_value,
            "converged": res.converged,
            "constraint_residual_norm": res.constraint_residual_norm,
            "restarts": res.restarts,
            "witness_file": "cmin_witness.json",
            "timings": {"sidecar": "cmin.timings.json"},
        }
    )
    _emit(out, "cmin", report, cfg.output.format, clock)
    return report, EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def run_scan(measure_file, cfg: RunConfig, count: int, out: Path) -> tuple[dict, int]:
    clock = _Clock()
    rho = read_measure(measure_file, cfg.model).pruned()
    C, _ = resolve_C(cfg, clock)
    spec = cfg.constraint(C)
    with clock("scan"):
        sf = support_functions(rho, spec)
        S, T = float(rho.weights @ sf.ell), float(rho.weights @ sf.tfrak)
        fit = fit_multipliers(sf, S, T, C, spec, cfg.verify.bc_tol, cfg.verify.rank_tol)
        regular, _, _ = regularity_check(sf, T, C, cfg.verify.rank_tol)
        restrict = not regular and count > 0
        scan = off_support_scan(rho, fit, count, cfg.verify.seed, spec, restrict_to_P=restrict, pset_tol=cfg.verify.pset_tol)
    header = ["norm", "phi", "phi1", "phi2", "gap", "kind"] + (["in_P"] if restrict else [])
    cols = [scan.norms, scan.phi, scan.phi1, scan.phi2, scan.gap, scan.kind] + ([scan.in_P.astype(int)] if restrict else [])
    write_columns(out / "scan.csv", header, zip(*cols) if count > 0 else [])
    ref = fit.c_value
    gap = scan.min_gap_in_P if restrict else scan.min_gap
    report = _base_report("scan", cfg)
    report.update(
        {
            "count": count,
            "scan_min_gap": gap,
            "scan_min_gap_all": scan.min_gap,
            "regular": regular,
            "kappa": fit.kappa,
            "S_plus_kappa_T": ref,
            "passed": gap is None or gap >= -cfg.verify.el_tol * ref,
            "data_file": "scan.csv",
            "timings": {"sidecar": "scan.timings.json"},
        }
    )
    _emit(out, "scan", report, cfg.output.format, clock)
    return report, EXIT_OK if report["passed"] else EXIT_CERT_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="causalvp", description="Discrete causal variational principles: solve, certify, scan.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file of dotted keys (model.k, constraint.kind, solver.seed, ...)")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit), overrides the config")
    common.add_argument("--out", type=Path, help=f"output directory (default: config output.dir, ${OUTPUT_ENV}, or ./{DEFAULT_OUTPUT})")
    common.add_argument("--format", choices=("tree", "columnar"), help="report format")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="minimize the action and certify the result")
    v = sub.add_parser("verify", parents=[common], help="certify a measure file")
    v.add_argument("measure", type=Path)
    sub.add_parser("cmin", parents=[common], help="estimate the smallest feasible boundedness value")
    s = sub.add_parser("scan", parents=[common], help="off-support scan of a measure file")
    s.add_argument("measure", type=Path)
    s.add_argument("--count", type=int, help="number of samples (default: output.scan_count)")
    sub.add_parser("selftest", parents=[common], help="run the built-in example checks")
    return p


def _load_config(args) -> RunConfig:
    cfg = read_config(args.config) if args.config else config_from_dict({})
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = cfg.with_seed(args.seed)
    if args.format:
        cfg = replace(cfg, output=replace(cfg.output, format=args.format))
    return cfg


def _output_dir(args, cfg: RunConfig) -> Path:
    if args.out is not None:
        return args.out
    if cfg.output.dir:
        return Path(cfg.output.dir)
    return Path(os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if args.command == "selftest":
        from .selftest import run_selftest

        return EXIT_OK if run_selftest(sys.stdout) else EXIT_FAILED
    try:
        cfg = _load_config(args)
        out = _output_dir(args, cfg)
        if args.command == "solve":
            report, code = run_solve(cfg, out)
        elif args.command == "verify":
            report, code = run_verify(args.measure, cfg, out)
        elif args.command == "cmin":
            report, code = run_cmin(cfg, out)
        else:
            count = cfg.output.scan_count if args.count is None else args.count
            if count < 0:
                raise ConfigError("--count must be non-negative")
            report, code = run_scan(args.measure, cfg, count, out)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    summary = {k: report[k] for k in ("command", "S_value", "T_value", "C", "C_min_estimate", "scan_min_gap", "converged", "certified") if k in report}
    print(" ".join(f"{k}={jsonable(v)}" for k, v in summary.items()))
    return code


if __name__ == "__main__":
    sys.exit(main())
