"""Experiment configuration, orchestration and reporting.

Configs are TOML documents with the sections below (dB values are converted
once, at parse time)::

    [problem]
    n_components = 4
    m_db = 0.0            # or natural-log `m`
    sigma_db = 4.0        # or natural-log `sigma`

    [functional]
    kind = "left_tail"    # left_tail | right_tail | interference_cdf
    gamma_th_db = -5.0    # or linear `gamma_th`
    # interference_cdf only: eta_db (or eta), and the desired-signal law as
    # x0_m_db/x0_sigma_db or a [functional.x0] table with m_db/sigma_db (or m/sigma)

    [solver]
    mode = "standard"     # standard | aggregate
    partition = "auto"    # or a list of block sizes
    K = 20
    spacing = "uniform"   # uniform | clustered
    # s_bar = ...         # upper end of the state grid (unbounded problems)
    [solver.quadrature]   # optional QuadratureSpec overrides

    [estimator]
    methods = ["hrt_soc"] # naive | hrt_constant | hrt_soc | hrt_soc_ag
    tol = 0.05
    pilot = 10000
    seed = 0
    max_samples = 100000000
    # samples = ...       # fixed final sample count instead of pilot sizing

    [sweep]
    parameter = "gamma_th_db"   # gamma_th_db | n_components | tol
    values = [-3.0, -6.0, -9.0]

    [output]
    path = "report.csv"
    format = "csv"        # csv | json
    timings = true
"""

from __future__ import annotations

import csv
import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, NamedTuple, Optional, Sequence

import numpy as np

from .distributions import DB_FACTOR, LogNormal, db_to_linear
from .errors import ConfigError, UnestimableError
from .estimators import (EstimatorResult, constant_hrt_tables, run_is, run_naive_mc,
                         samples_to_tol)
from .functionals import Functional, interference_cdf, left_tail, right_tail
from .numerics import QuadratureSpec
from .solver import BlockPartition, ProblemSpec, solve_backward, solve_backward_aggregate

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

METHODS = ("naive", "hrt_constant", "hrt_soc", "hrt_soc_ag")
SWEEP_PARAMETERS = ("gamma_th_db", "n_components", "tol")
COLUMNS = ("sweep_param", "sweep_value", "method", "mean", "variance", "rel_error",
           "m_required", "backward_s", "forward_s", "seed")

_SCHEMA = {
    "problem": {"n_components", "m_db", "sigma_db", "m", "sigma"},
    "functional": {"kind", "gamma_th_db", "gamma_th", "eta_db", "eta", "x0_m_db", "x0_sigma_db", "x0"},
    "solver": {"mode", "partition", "K", "spacing", "s_bar", "quadrature"},
    "estimator": {"methods", "tol", "pilot", "seed", "max_samples", "samples"},
    "sweep": {"parameter", "values"},
    "output": {"path", "format", "timings"},
}
_QUAD_KEYS = {"panels", "nodes_per_panel", "rel_tol", "max_refine", "tail_span"}


@dataclass(frozen=True)
class ProblemConfig:
    n_components: int
    m: float
    sigma: float
    kind: str = "left_tail"
    gamma_th_db: float = 0.0
    eta: float = 0.0
    x0: Optional[LogNormal] = None


@dataclass(frozen=True)
class SolverConfig:
    mode: str = "standard"
    partition: Any = "auto"
    K: int = 20
    spacing: str = "uniform"
    s_bar: Optional[float] = None
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)


@dataclass(frozen=True)
class EstimatorConfig:
    methods: tuple = ("hrt_soc",)
    tol: float = 0.05
    pilot: int = 10_000
    seed: int = 0
    max_samples: int = 100_000_000
    samples: Optional[int] = None


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemConfig
    solver: SolverConfig = field(default_factory=SolverConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    sweep_parameter: Optional[str] = None
    sweep_values: tuple = ()
    output_path: Optional[str] = None
    output_format: str = "csv"
    timings: bool = True

    def points(self) -> list[tuple[str, float, "ExperimentConfig"]]:
        """``(parameter, value, config)`` per sweep point.

        Without a sweep there is one point labelled by the threshold in dB.
        """
        if self.sweep_parameter is None:
            return [("gamma_th_db", self.problem.gamma_th_db, self)]
        out = []
        for v in self.sweep_values:
            if self.sweep_parameter == "gamma_th_db":
                cfg = replace(self, problem=replace(self.problem, gamma_th_db=float(v)))
            elif self.sweep_parameter == "n_components":
                cfg = replace(self, problem=replace(self.problem, n_components=int(v)))
            else:
                cfg = replace(self, estimator=replace(self.estimator, tol=float(v)))
            out.append((self.sweep_parameter, v, cfg))
        return out

    def functional(self) -> Functional:
        pc = self.problem
        gamma = db_to_linear(pc.gamma_th_db)
        if pc.kind == "left_tail":
            return left_tail(gamma)
        if pc.kind == "right_tail":
            return right_tail(gamma)
        return interference_cdf(pc.x0, gamma, pc.eta)

    def problem_spec(self) -> ProblemSpec:
        pc, sc = self.problem, self.solver
        d = LogNormal(pc.m, pc.sigma)
        return ProblemSpec.build([d] * pc.n_components, self.functional(), K=sc.K,
                                 s_bar=sc.s_bar, spacing=sc.spacing)

    def partition(self, n: Optional[int] = None) -> BlockPartition:
        n = self.problem.n_components if n is None else n
        if self.solver.partition == "auto":
            return BlockPartition.pairs(n)
        part = BlockPartition(tuple(self.solver.partition))
        if part.N != n:
            raise ConfigError("solver.partition", f"partition sums to {part.N} ≠ {n}")
        return part


# --- parsing ----------------------------------------------------------------

def _get(section: dict, prefix: str, key: str, kind, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"{prefix}.{key}", "missing required key")
        return default
    value = section[key]
    try:
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise TypeError
            out = float(value)
            if not math.isfinite(out):
                raise ValueError
            return out
        if kind is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind is str:
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"{prefix}.{key}", f"expected {kind.__name__}, got {value!r}") from None
    return value


def _check_keys(doc: dict):
    for name, body in doc.items():
        if name not in _SCHEMA:
            raise ConfigError(name, "unknown section")
        if not isinstance(body, dict):
            raise ConfigError(name, "expected a table")
        for key in body:
            if key not in _SCHEMA[name]:
                raise ConfigError(f"{name}.{key}", "unknown key")


def _pair(section, prefix, db_keys, nat_keys):
    """Read a (location, scale) pair given either in dB or in natural-log units."""
    has_db = any(k in section for k in db_keys)
    has_nat = any(k in section for k in nat_keys)
    if has_db and has_nat:
        raise ConfigError(prefix, f"give either {db_keys} or {nat_keys}, not both")
    if has_nat:
        m = _get(section, prefix, nat_keys[0], float, required=True)
        s = _get(section, prefix, nat_keys[1], float, required=True)
    else:
        m = DB_FACTOR * _get(section, prefix, db_keys[0], float, required=True)
        s = DB_FACTOR * _get(section, prefix, db_keys[1], float, required=True)
    if not s > 0:
        raise ConfigError(f"{prefix}.{nat_keys[1] if has_nat else db_keys[1]}", "must be positive")
    return m, s


def _monotone(values) -> bool:
    d = np.diff(np.asarray(values, dtype=float))
    return bool(np.all(d > 0) or np.all(d < 0))


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a TOML experiment config."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<document>", f"malformed TOML: {exc}") from None
    _check_keys(doc)
    if "problem" not in doc:
        raise ConfigError("problem", "missing required section")

    prob = doc["problem"]
    n = _get(prob, "problem", "n_components", int, required=True)
    if n < 1:
        raise ConfigError("problem.n_components", "must be at least 1")
    m, sigma = _pair(prob, "problem", ("m_db", "sigma_db"), ("m", "sigma"))

    fun = doc.get("functional", {})
    kind = _get(fun, "functional", "kind", str, "left_tail")
    if kind not in ("left_tail", "right_tail", "interference_cdf"):
        raise ConfigError("functional.kind", f"unknown functional {kind!r}")
    if "gamma_th_db" in fun and "gamma_th" in fun:
        raise ConfigError("functional", "give either gamma_th_db or gamma_th, not both")
    if "gamma_th" in fun:
        g = _get(fun, "functional", "gamma_th", float)
        if not g > 0:
            raise ConfigError("functional.gamma_th", "must be positive")
        gamma_db = 10.0 * math.log10(g)
    else:
        gamma_db = _get(fun, "functional", "gamma_th_db", float, required=True)
    eta, x0 = 0.0, None
    if kind == "interference_cdf":
        if "eta" in fun and "eta_db" in fun:
            raise ConfigError("functional", "give either eta_db or eta, not both")
        eta = (_get(fun, "functional", "eta", float) if "eta" in fun
               else db_to_linear(_get(fun, "functional", "eta_db", float, required=True)))
        if eta < 0:
            raise ConfigError("functional.eta", "must be nonnegative")
        if "x0" in fun:
            sub = fun["x0"]
            if not isinstance(sub, dict):
                raise ConfigError("functional.x0", "expected a table")
            if "x0_m_db" in fun or "x0_sigma_db" in fun:
                raise ConfigError("functional", "give either x0_m_db/x0_sigma_db or [functional.x0]")
            for key in sub:
                if key not in ("m_db", "sigma_db", "m", "sigma"):
                    raise ConfigError(f"functional.x0.{key}", "unknown key")
            x0 = LogNormal(*_pair(sub, "functional.x0", ("m_db", "sigma_db"), ("m", "sigma")))
        else:
            x0 = LogNormal(*_pair(fun, "functional", ("x0_m_db", "x0_sigma_db"), ("x0_m", "x0_sigma")))
    else:
        for key in ("eta", "eta_db", "x0_m_db", "x0_sigma_db", "x0"):
            if key in fun:
                raise ConfigError(f"functional.{key}", "only used by interference_cdf")
    problem = ProblemConfig(n, m, sigma, kind, gamma_db, eta, x0)

    sol = doc.get("solver", {})
    mode = _get(sol, "solver", "mode", str, "standard")
    if mode not in ("standard", "aggregate"):
        raise ConfigError("solver.mode", f"unknown mode {mode!r}")
    partition = sol.get("partition", "auto")
    if partition != "auto":
        if (not isinstance(partition, list) or not partition
                or not all(isinstance(b, int) and not isinstance(b, bool) and b >= 1
                           for b in partition)):
            raise ConfigError("solver.partition", "expected 'auto' or a list of positive integers")
        partition = tuple(partition)
    K = _get(sol, "solver", "K", int, 20)
    if K < 1:
        raise ConfigError("solver.K", "must be at least 1")
    spacing = _get(sol, "solver", "spacing", str, "uniform")
    if spacing not in ("uniform", "clustered"):
        raise ConfigError("solver.spacing", f"unknown spacing {spacing!r}")
    s_bar = _get(sol, "solver", "s_bar", float)
    if s_bar is not None and not s_bar > 0:
        raise ConfigError("solver.s_bar", "must be positive")
    quad = sol.get("quadrature", {})
    if not isinstance(quad, dict):
        raise ConfigError("solver.quadrature", "expected a table")
    for key in quad:
        if key not in _QUAD_KEYS:
            raise ConfigError(f"solver.quadrature.{key}", "unknown key")
    qkw = {k: _get(quad, "solver.quadrature", k, float if k in ("rel_tol", "tail_span") else int)
           for k in quad}
    try:
        qspec = QuadratureSpec(**qkw)
    except ValueError as exc:
        raise ConfigError("solver.quadrature", str(exc)) from None
    solver = SolverConfig(mode, partition, K, spacing, s_bar, qspec)

    est = doc.get("estimator", {})
    methods = est.get("methods", ["hrt_soc"])
    if isinstance(methods, str):
        methods = [methods]
    if not isinstance(methods, list) or not methods:
        raise ConfigError("estimator.methods", "expected a nonempty list")
    for meth in methods:
        if meth not in METHODS:
            raise ConfigError("estimator.methods", f"unknown method {meth!r}")
    if len(set(methods)) != len(methods):
        raise ConfigError("estimator.methods", "duplicate method")
    tol = _get(est, "estimator", "tol", float, 0.05)
    if not tol > 0:
        raise ConfigError("estimator.tol", "must be positive")
    pilot = _get(est, "estimator", "pilot", int, 10_000)
    if pilot < 2:
        raise ConfigError("estimator.pilot", "must be at least 2")
    seed = _get(est, "estimator", "seed", int, 0)
    if seed < 0:
        raise ConfigError("estimator.seed", "must be nonnegative")
    max_samples = _get(est, "estimator", "max_samples", int, 100_000_000)
    if max_samples < 1:
        raise ConfigError("estimator.max_samples", "must be positive")
    samples = _get(est, "estimator", "samples", int)
    if samples is not None and samples < 1:
        raise ConfigError("estimator.samples", "must be positive")
    estimator = EstimatorConfig(tuple(methods), tol, pilot, seed, max_samples, samples)

    sweep_param, sweep_values = None, ()
    if "sweep" in doc:
        sw = doc["sweep"]
        sweep_param = _get(sw, "sweep", "parameter", str, required=True)
        if sweep_param not in SWEEP_PARAMETERS:
            raise ConfigError("sweep.parameter", f"unknown sweep parameter {sweep_param!r}")
        values = sw.get("values")
        if (not isinstance(values, list) or not values
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values)):
            raise ConfigError("sweep.values", "expected a nonempty list of numbers")
        if len(values) > 1 and not _monotone(values):
            raise ConfigError("sweep.values", "values must be strictly monotone")
        if sweep_param == "n_components" and not all(float(v).is_integer() and v >= 1 for v in values):
            raise ConfigError("sweep.values", "n_components values must be positive integers")
        if sweep_param == "tol" and not all(v > 0 for v in values):
            raise ConfigError("sweep.values", "tol values must be positive")
        sweep_values = tuple(int(v) if sweep_param == "n_components" else float(v) for v in values)

    out = doc.get("output", {})
    path = _get(out, "output", "path", str)
    fmt = _get(out, "output", "format", str, "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError("output.format", f"unknown format {fmt!r}")
    timings = _get(out, "output", "timings", bool, True)

    cfg = ExperimentConfig(problem, solver, estimator, sweep_param, sweep_values, path, fmt, timings)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    needs_partition = "hrt_soc_ag" in cfg.estimator.methods or cfg.solver.mode == "aggregate"
    if not needs_partition:
        return
    ns = (cfg.sweep_values if cfg.sweep_parameter == "n_components"
          else (cfg.problem.n_components,))
    for n in ns:
        cfg.partition(n)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


# --- running ----------------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    sweep_param: str
    sweep_value: float
    method: str
    mean: float
    variance: float
    rel_error: float
    m_required: float   # math.inf when the pilot never observed the event
    backward_s: Optional[float]
    forward_s: Optional[float]
    seed: int

    def as_tuple(self):
        return tuple(getattr(self, c) for c in COLUMNS)


class WorkReport(NamedTuple):
    method: str
    backward_seconds: float
    forward_seconds: float
    m_required: float

    @property
    def total_seconds(self) -> float:
        return self.backward_seconds + self.forward_seconds


def work_report(row: ReportRow) -> WorkReport:
    return WorkReport(row.method, row.backward_s or 0.0, row.forward_s or 0.0, row.m_required)


def derived_seed(seed: int, *path: int) -> int:
    """Deterministic child seed for sweep point / phase ``path``."""
    return int(np.random.SeedSequence(seed, spawn_key=tuple(path)).generate_state(1)[0])


def solve_tables(cfg: ExperimentConfig, method: str, threads: int = 1):
    p = cfg.problem_spec()
    q = cfg.solver.quadrature
    if method == "hrt_soc":
        return solve_backward(p, q, threads)
    if method == "hrt_soc_ag":
        return solve_backward_aggregate(p, cfg.partition(), q, threads)
    if method == "hrt_constant":
        return constant_hrt_tables(p, q)
    raise ValueError(f"method {method!r} has no tables")


def _estimate(p, tables, method, m, seed, threads) -> EstimatorResult:
    if method == "naive":
        return run_naive_mc(p, m, seed, threads)
    return run_is(p, tables, m, seed, threads, method=method)


def run_experiment(cfg: ExperimentConfig, threads: int = 1, seed: Optional[int] = None,
                   progress=None) -> list[ReportRow]:
    """One row per (sweep point, method): pilot, sample sizing, final run.

    Tables are cached per problem, so a tolerance sweep solves each method once.
    Seeds are derived from the problem's position among the distinct problems
    of the sweep: all methods at a point share them (paired runs), and a
    tolerance sweep reuses one pilot, so ``m_required`` scales exactly as tol**-2.
    """
    base_seed = cfg.estimator.seed if seed is None else seed
    cache: dict = {}
    problem_ids: dict = {}
    rows = []
    for param, value, pcfg in cfg.points():
        p = pcfg.problem_spec()
        key = json.dumps(p.to_dict(), sort_keys=True)
        idx = problem_ids.setdefault(key, len(problem_ids))
        ec = pcfg.estimator
        pilot_seed = derived_seed(base_seed, idx, 0)
        final_seed = derived_seed(base_seed, idx, 1)
        for method in ec.methods:
            tables = None
            backward = 0.0
            if method != "naive":
                ck = (key, method, pcfg.solver.partition)
                if ck not in cache:
                    cache[ck] = solve_tables(pcfg, method, threads)
                tables = cache[ck]
                backward = tables[1].backward_seconds
            if ec.samples is not None:
                final = _estimate(p, tables, method, ec.samples, final_seed, threads)
                try:
                    m_req = samples_to_tol(final, ec.tol)
                except UnestimableError:
                    m_req = math.inf
            else:
                pilot = _estimate(p, tables, method, ec.pilot, pilot_seed, threads)
                try:
                    m_req = samples_to_tol(pilot, ec.tol)
                except UnestimableError:
                    m_req = math.inf
                if math.isinf(m_req):
                    final = None
                else:
                    final = _estimate(p, tables, method, min(m_req, ec.max_samples),
                                      final_seed, threads)
            if final is None:
                row = ReportRow(param, value, method, 0.0, 0.0, math.inf, m_req,
                                backward, 0.0, final_seed)
            else:
                row = ReportRow(param, value, method, final.mean, final.variance,
                                final.rel_error, m_req, backward, final.forward_seconds,
                                final_seed)
            if not cfg.timings:
                row = replace(row, backward_s=None, forward_s=None)
            rows.append(row)
            if progress is not None:
                progress(row)
    return sort_rows(rows)


def sort_rows(rows: Sequence[ReportRow]) -> list[ReportRow]:
    return sorted(rows, key=lambda r: (float(r.sweep_value), r.method))


# --- reporting --------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    value = float(value)
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(value, ".17g")


def _json_value(value):
    # JSON has no infinity; the unbounded sample count is spelled as in CSV
    if isinstance(value, float) and not math.isfinite(value):
        return _fmt(value)
    return value


def emit_report(rows: Sequence[ReportRow], fmt: str = "csv", path=None) -> str:
    """Serialise ``rows`` (sorted) as CSV or JSON; writes ``path`` when given."""
    rows = sort_rows(rows)
    if fmt == "csv":
        lines = [",".join(COLUMNS)]
        lines += [",".join(_fmt(v) for v in r.as_tuple()) for r in rows]
        text = "\n".join(lines) + "\n"
    elif fmt == "json":
        text = json.dumps([{c: _json_value(v) for c, v in zip(COLUMNS, r.as_tuple())}
                           for r in rows], indent=2) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def _parse_num(value):
    if value is None or value == "":
        return None
    return float(value)


def parse_report(text: str, fmt: str = "csv") -> list[ReportRow]:
    """Inverse of :func:`emit_report`."""
    if fmt == "json":
        records = json.loads(text)
        raw = [[rec[c] for c in COLUMNS] for rec in records]
    else:
        reader = csv.reader(text.splitlines())
        header = next(reader)
        if tuple(header) != COLUMNS:
            raise ValueError(f"unexpected header {header}")
        raw = list(reader)
    rows = []
    for rec in raw:
        vals = list(rec)
        param, method = vals[0], vals[2]
        nums = [None if i in (0, 2) else _parse_num(v) for i, v in enumerate(vals)]
        rows.append(ReportRow(param, nums[1], method, nums[3], nums[4], nums[5], nums[6],
                              nums[7], nums[8], int(nums[9])))
    return rows
