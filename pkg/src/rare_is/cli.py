"""Command line entry point: ``rare-is {solve,estimate,compare,sweep}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from .errors import RareISError, UnestimableError
from .estimators import run_is, samples_to_tol
from .experiments import (ReportRow, emit_report, load_config, run_experiment, solve_tables)
from .solver import load_tables, save_tables

log = logging.getLogger("rare_is")


def _default_threads() -> int:
    raw = os.environ.get("RARE_IS_THREADS")
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise SystemExit(f"RARE_IS_THREADS must be an integer, got {raw!r}") from None
    return max(1, value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rare-is", description=(
        "State-dependent hazard-rate-twisting importance sampling for rare-event "
        "probabilities of sums of positive random variables."))
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=False):
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--out", required=needs_out, help="output path (default: config output.path or stdout)")
        p.add_argument("--seed", type=int, help="override estimator.seed")
        p.add_argument("--threads", type=int, default=_default_threads(),
                       help="worker threads (default: $RARE_IS_THREADS or 1)")
        p.add_argument("-v", "--verbose", action="store_true")

    def report(p):
        p.add_argument("--format", choices=("csv", "json"), help="override output.format")
        p.add_argument("--no-timings", action="store_true",
                       help="leave timing columns empty so reports are byte-reproducible")

    p = sub.add_parser("solve", help="backward solve only; writes a .soctab archive")
    common(p, needs_out=True)

    p = sub.add_parser("estimate", help="HRT-SOC estimate, from a .soctab archive or end to end")
    common(p)
    report(p)
    p.add_argument("--tables", help="archive written by `solve`")
    p.add_argument("--samples", type=int, help="fixed sample count (default: pilot sizing)")

    p = sub.add_parser("compare", help="all configured methods at one configuration")
    common(p)
    report(p)

    p = sub.add_parser("sweep", help="threshold, dimension or tolerance sweep")
    common(p)
    report(p)
    return parser


def _write(text: str, path):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _solve(args, cfg):
    method = "hrt_soc_ag" if cfg.solver.mode == "aggregate" else "hrt_soc"
    vt, ct = solve_tables(cfg, method, args.threads)
    save_tables(args.out, vt, ct, cfg.problem_spec())
    summary = {"N": ct.N, "K": cfg.solver.K, "mode": ct.mode, "u00": float(vt.u[0, 0]),
               "backward_s": ct.backward_seconds, "boundary_hits": ct.boundary_hits,
               "out": args.out}
    print(json.dumps(summary))


def _estimate_from_tables(args, cfg):
    vt, ct, problem = load_tables(args.tables, expected_n=cfg.problem.n_components)
    if cfg.problem_spec().to_dict() != problem.to_dict():
        log.warning("archive problem differs from the config; using the archive's problem")
    seed = cfg.estimator.seed if args.seed is None else args.seed
    m = args.samples or cfg.estimator.samples or cfg.estimator.pilot
    res = run_is(problem, (vt, ct), m, seed, args.threads)
    timings = cfg.timings and not args.no_timings
    try:
        m_req = samples_to_tol(res, cfg.estimator.tol)
    except UnestimableError:
        m_req = float("inf")
    row = ReportRow("gamma_th_db", cfg.problem.gamma_th_db, "hrt_soc" if ct.mode == "standard"
                    else "hrt_soc_ag", res.mean, res.variance, res.rel_error, m_req,
                    ct.backward_seconds if timings else None,
                    res.forward_seconds if timings else None, seed)
    return [row]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.threads < 1:
            raise SystemExit("--threads must be at least 1")
        if args.command == "solve":
            _solve(args, cfg)
            return 0
        if getattr(args, "no_timings", False):
            cfg = replace(cfg, timings=False)
        fmt = args.format or cfg.output_format
        out = args.out or cfg.output_path
        if args.command == "estimate":
            if args.tables:
                rows = _estimate_from_tables(args, cfg)
            else:
                est = replace(cfg.estimator, methods=("hrt_soc",))
                if args.samples:
                    est = replace(est, samples=args.samples)
                rows = run_experiment(replace(cfg, estimator=est, sweep_parameter=None),
                                      args.threads, args.seed)
        elif args.command == "compare":
            rows = run_experiment(replace(cfg, sweep_parameter=None), args.threads, args.seed)
        else:
            if cfg.sweep_parameter is None:
                raise SystemExit("sweep needs a [sweep] section in the config")
            progress = (lambda r: log.info("%s=%s %s done", r.sweep_param, r.sweep_value, r.method))
            rows = run_experiment(cfg, args.threads, args.seed, progress=progress)
        _write(emit_report(rows, fmt), out)
        return 0
    except (RareISError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
