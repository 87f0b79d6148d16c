"""Forward samplers and estimator statistics.

All samplers share one layout: sample ``j`` of a run with seed ``seed`` lives
in chunk ``j // CHUNK_SIZE``, whose generator is seeded from
``SeedSequence(seed, spawn_key=(chunk,))`` and draws one uniform per step.
Chunks are independent, so results do not depend on how many worker
threads process them, and chunk statistics merge in chunk order.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .distributions import twisted_quantile
from .errors import EstimatorError, ParameterError, UnestimableError
from .functionals import eval_g
from .numerics import DEFAULT_QUADRATURE, QuadratureSpec
from .solver import (BlockPartition, ControlTable, ProblemSpec,
                     control_at, solve_backward_aggregate)

#: Confidence constant of the 95% CLT interval.
C_CONF = 1.96
CHUNK_SIZE = 1 << 15


@dataclass(frozen=True)
class EstimatorResult:
    mean: float
    variance: float
    second_moment: float
    m_samples: int
    rel_error: float
    backward_seconds: float = 0.0
    forward_seconds: float = 0.0
    seed: int = 0
    method: str = ""
    hits: int = 0
    fourth_moment: float = float("nan")

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance / self.m_samples)


@dataclass(frozen=True)
class SampleRecords:
    """Per-sample diagnostics: ``T = g_value * weight``."""

    final_sum: np.ndarray
    weight: np.ndarray
    g_value: np.ndarray
    controls: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return self.g_value * self.weight


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk,)))


def _forward_chunk(p: ProblemSpec, ct: Optional[ControlTable], n: int, rng, record=False):
    """Simulate ``n`` paths. ``ct=None`` samples the original law."""
    N = p.N
    u = rng.random((n, N))
    s = np.zeros(n)
    anchor = s
    log_w = np.zeros(n)
    mus = np.zeros((n, N)) if record else None
    starts = ct.block_starts if ct is not None else None
    for i, d in enumerate(p.components):
        if ct is None:
            x = twisted_quantile(d, u[:, i], 0.0)
        else:
            if starts[i] == i:
                anchor = s
            mu = control_at(ct, i, anchor, p.grid)
            x = twisted_quantile(d, u[:, i], mu)
            # Lambda(X) = -log(1 - U) / (1 - mu) for an inverse-CDF draw of the twisted law
            with np.errstate(invalid="ignore"):
                hazard = -np.log1p(-u[:, i]) / (1.0 - mu)
                log_w += -mu * hazard - np.log1p(-mu)
            if record:
                mus[:, i] = mu
        s = s + x
    g = np.asarray(eval_g(p.functional, s), dtype=float)
    if not np.all(np.isfinite(log_w)):
        bad = np.flatnonzero(~np.isfinite(log_w))
        raise EstimatorError(f"non-finite likelihood weight for {bad.size} samples "
                             f"(first final sum {s[bad[0]]!r})")
    weight = np.exp(log_w)
    t = g * weight
    if not np.all(np.isfinite(t)):
        raise EstimatorError("non-finite estimator values")
    if record:
        return t, SampleRecords(s, weight, g, mus)
    return t


@dataclass
class _Stats:
    n: int
    total: float
    mean: float
    m2: float
    sq: float
    quad: float
    hits: int


def _chunk_stats(t: np.ndarray) -> _Stats:
    n = t.size
    total = math.fsum(t)
    mean = total / n
    dev = t - mean
    t2 = t * t
    return _Stats(n, total, mean, math.fsum(dev * dev), math.fsum(t2), math.fsum(t2 * t2),
                  int(np.count_nonzero(t)))


def _merge(stats: list[_Stats]) -> _Stats:
    acc = stats[0]
    for st in stats[1:]:
        n = acc.n + st.n
        delta = st.mean - acc.mean
        m2 = acc.m2 + st.m2 + delta * delta * acc.n * st.n / n
        acc = _Stats(n, acc.total + st.total, acc.mean + delta * st.n / n, m2,
                     acc.sq + st.sq, acc.quad + st.quad, acc.hits + st.hits)
    # recompute sums exactly from per-chunk values
    acc.total = math.fsum(st.total for st in stats)
    acc.sq = math.fsum(st.sq for st in stats)
    acc.quad = math.fsum(st.quad for st in stats)
    return acc


def _run(p: ProblemSpec, ct: Optional[ControlTable], m: int, seed: int, threads: int,
         method: str, backward_seconds: float) -> EstimatorResult:
    m = int(m)
    if m < 1:
        raise ParameterError("need at least one sample")
    if ct is not None and ct.mu.shape != (p.N, p.grid.K + 1):
        raise ParameterError("control table does not match the problem dimensions")
    t0 = time.perf_counter()
    n_chunks = -(-m // CHUNK_SIZE)

    def work(j):
        n = min(CHUNK_SIZE, m - j * CHUNK_SIZE)
        return _chunk_stats(_forward_chunk(p, ct, n, _chunk_rng(seed, j)))

    if threads > 1 and n_chunks > 1:
        with ThreadPoolExecutor(threads) as pool:
            stats = list(pool.map(work, range(n_chunks)))
    else:
        stats = [work(j) for j in range(n_chunks)]
    st = _merge(stats)
    mean = st.total / m
    variance = st.m2 / (m - 1) if m > 1 else 0.0
    rel = C_CONF * math.sqrt(variance) / (math.sqrt(m) * mean) if mean > 0 else math.inf
    return EstimatorResult(mean, variance, st.sq / m, m, rel, backward_seconds,
                           time.perf_counter() - t0, seed, method, st.hits, st.quad / m)


def run_is(p: ProblemSpec, tables, m: int, seed: int = 0, threads: int = 1,
           method: str = "hrt_soc") -> EstimatorResult:
    """State-dependent importance sampling with tabulated controls.

    ``tables`` is the ``(ValueTable, ControlTable)`` pair from a backward solve.
    """
    _, ct = tables
    return _run(p, ct, m, seed, threads, method, ct.backward_seconds)


def run_naive_mc(p: ProblemSpec, m: int, seed: int = 0, threads: int = 1) -> EstimatorResult:
    return _run(p, None, m, seed, threads, "naive", 0.0)


def constant_hrt_tables(p: ProblemSpec, q: QuadratureSpec = DEFAULT_QUADRATURE):
    """Single-block aggregate solve; the only control used is the one at ``s = 0``."""
    return solve_backward_aggregate(p, BlockPartition.single(p.N), q)


def run_hrt_constant(p: ProblemSpec, m: int, seed: int = 0,
                     q: QuadratureSpec = DEFAULT_QUADRATURE, threads: int = 1,
                     tables=None) -> EstimatorResult:
    """Hazard-rate twisting with one state- and step-independent twist."""
    tables = tables if tables is not None else constant_hrt_tables(p, q)
    return run_is(p, tables, m, seed, threads, method="hrt_constant")


def sample_records(p: ProblemSpec, tables, m: int, seed: int = 0) -> SampleRecords:
    """Per-sample diagnostics on the same random layout as :func:`run_is`.

    ``tables=None`` gives naive Monte Carlo paths.
    """
    ct = None if tables is None else tables[1]
    parts = []
    for j in range(-(-int(m) // CHUNK_SIZE)):
        n = min(CHUNK_SIZE, m - j * CHUNK_SIZE)
        parts.append(_forward_chunk(p, ct, n, _chunk_rng(seed, j), record=True)[1])
    return SampleRecords(*(np.concatenate([getattr(r, f) for r in parts])
                           for f in ("final_sum", "weight", "g_value", "controls")))


def samples_to_tol(pilot: EstimatorResult, tol: float) -> int:
    """Samples needed for a relative error ``tol``: ``ceil(C^2 var / (tol^2 mean^2))``."""
    if not tol > 0:
        raise ParameterError("tol must be positive")
    if not pilot.mean > 0:
        raise UnestimableError("pilot mean is zero; the event was never observed")
    if not math.isfinite(pilot.variance):
        raise UnestimableError("pilot variance is not finite")
    if pilot.variance == 0:
        return 1
    raw = C_CONF**2 * pilot.variance / (tol**2 * pilot.mean**2)
    return max(1, math.ceil(raw))


@dataclass(frozen=True)
class ConsistencyReport:
    predicted: float
    empirical: float
    ratio: float
    band: tuple[float, float]
    within: bool


def predicted_second_moment_check(p: ProblemSpec, tables, result: EstimatorResult,
                                  allowance: float = 0.25, z: float = 3.0) -> ConsistencyReport:
    """Compare ``u[0][0]`` from the backward solve with the sampled ``E[T^2]``.

    The band is ``[1/(1+allowance), 1+allowance]`` for the interpolation error,
    widened by ``z`` Monte Carlo standard errors of the sampled second moment.
    """
    vt, _ = tables
    predicted = float(vt.u[0, 0])
    emp = result.second_moment
    if emp > 0 and math.isfinite(result.fourth_moment):
        rse = math.sqrt(max(result.fourth_moment - emp * emp, 0.0) / result.m_samples) / emp
    else:
        rse = 0.0
    lo = (1.0 / (1.0 + allowance)) * (1.0 - z * rse)
    hi = (1.0 + allowance) * (1.0 + z * rse)
    if emp == 0:
        ratio = 1.0 if predicted == 0 else math.inf
    else:
        ratio = predicted / emp
    return ConsistencyReport(predicted, emp, ratio, (lo, hi), lo <= ratio <= hi)


def with_timing(result: EstimatorResult, backward_seconds: float) -> EstimatorResult:
    return replace(result, backward_seconds=backward_seconds)
