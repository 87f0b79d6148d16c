"""Backward dynamic programming for hazard-rate twisting controls.

For every stage ``n = N-1, ..., 0`` and grid point ``s_k`` the solver finds

    u(n, s_k) = min_{mu < 1} (1 / (1 - mu)) E[u(n+1, s_k + X) exp(-mu Lambda(X))]

storing the value and the minimising twist. Between grid points the next
row is interpolated linearly (extrapolated past ``s_bar``); the last step uses
``g**2`` directly. The aggregate variant applies one control per block of
``b`` identical steps, replacing the block sum by a moment-matched log-normal
and the sum of hazards by the hazard of the sum.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .distributions import DistributionModel, LogNormal, distribution_from_dict
from .errors import NumericalError, ParameterError, TableError
from .functionals import Functional, eval_g, state_space_bound
from .numerics import (DEFAULT_QUADRATURE, Grid1D, QuadratureSpec, StageRule,
                       interp_linear, minimize_over_mu)

log = logging.getLogger(__name__)

#: Upper cap applied to interpolated controls.
MU_MAX = 1.0 - 1e-9
#: Default exceedance probability defining ``s_bar`` for unbounded functionals.
S_BAR_EXCEEDANCE = 1e-4


@dataclass(frozen=True)
class BlockPartition:
    """Block sizes ``b_1, ..., b_B`` of the aggregate method; they sum to ``N``."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(b) for b in self.sizes)
        if not sizes or any(b < 1 for b in sizes):
            raise ParameterError("block sizes must be positive integers")
        object.__setattr__(self, "sizes", sizes)

    @property
    def N(self) -> int:
        return sum(self.sizes)

    @property
    def B(self) -> int:
        return len(self.sizes)

    @property
    def boundaries(self) -> np.ndarray:
        """``n_0 = 0, n_1, ..., n_B = N``."""
        return np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)

    @property
    def stage_map(self) -> np.ndarray:
        """Block index of each step ``0..N-1``."""
        return np.repeat(np.arange(self.B), self.sizes)

    def check(self, n: int) -> "BlockPartition":
        if self.N != n:
            raise ParameterError(f"partition sums to {self.N} != {n}")
        return self

    @classmethod
    def ones(cls, n: int) -> "BlockPartition":
        return cls((1,) * n)

    @classmethod
    def single(cls, n: int) -> "BlockPartition":
        return cls((n,))

    @classmethod
    def pairs(cls, n: int) -> "BlockPartition":
        """Blocks of two, the last one of three when ``n`` is odd."""
        if n < 1:
            raise ParameterError("n must be positive")
        if n == 1:
            return cls((1,))
        if n % 2 == 0:
            return cls((2,) * (n // 2))
        return cls((2,) * ((n - 3) // 2) + (3,))


def moment_match_block(d: DistributionModel, b: int) -> DistributionModel:
    """Log-normal with the mean and variance of a sum of ``b`` copies of ``d``."""
    b = int(b)
    if b < 1:
        raise ParameterError("block size must be at least 1")
    if b == 1:
        return d
    if not isinstance(d, LogNormal):
        raise ParameterError("moment matching is implemented for log-normal blocks only")
    s2 = d.sigma**2
    mean = b * math.exp(d.m + 0.5 * s2)
    # V / M1**2 = (exp(s2) - 1) / b
    sig2 = math.log1p(math.expm1(s2) / b)
    return LogNormal(math.log(mean) - 0.5 * sig2, math.sqrt(sig2))


def default_s_bar(components: Sequence[DistributionModel], functional: Functional,
                  exceedance: float = S_BAR_EXCEEDANCE) -> float:
    """``s_bar`` with ``P(S_N > s_bar) ~ exceedance`` under a moment-matched log-normal."""
    mean = sum(d.mean() for d in components)
    var = sum(d.variance() for d in components)
    sig2 = math.log1p(var / mean**2)
    approx = LogNormal(math.log(mean) - 0.5 * sig2, math.sqrt(sig2))
    s_bar = float(approx.isf(exceedance))
    if functional.kind == "right_tail":
        s_bar = max(s_bar, 1.25 * functional.gamma_th)
    return s_bar


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Components ``X_1..X_N``, the functional and the state grid."""

    components: tuple
    functional: Functional
    grid: Grid1D

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ParameterError("need at least one component")
        if not all(isinstance(d, DistributionModel) for d in comps):
            raise ParameterError("components must be DistributionModel instances")
        object.__setattr__(self, "components", comps)
        bound = state_space_bound(self.functional)
        if bound is not None and self.grid.s_bar != bound:
            raise ParameterError(f"grid must end at the functional's bound {bound}, got {self.grid.s_bar}")

    @property
    def N(self) -> int:
        return len(self.components)

    @property
    def s_bar(self) -> float:
        return self.grid.s_bar

    @classmethod
    def build(cls, components, functional: Functional, K: int = 20,
              s_bar: Optional[float] = None, spacing: str = "uniform") -> "ProblemSpec":
        components = tuple(components)
        bound = state_space_bound(functional)
        if bound is not None:
            if s_bar is not None and s_bar != bound:
                raise ParameterError("s_bar is fixed by the functional's bound")
            s_bar = bound
        elif s_bar is None:
            s_bar = default_s_bar(components, functional)
        if spacing == "uniform":
            grid = Grid1D.uniform(s_bar, K)
        elif spacing == "clustered":
            grid = Grid1D.clustered(s_bar, K)
        else:
            raise ParameterError(f"unknown grid spacing {spacing!r}")
        return cls(components, functional, grid)

    @classmethod
    def iid(cls, d: DistributionModel, n: int, functional: Functional, **kw) -> "ProblemSpec":
        return cls.build((d,) * int(n), functional, **kw)

    def to_dict(self) -> dict:
        return {
            "components": [d.to_dict() for d in self.components],
            "functional": self.functional.to_dict(),
            "grid": [float(x) for x in self.grid.points],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemSpec":
        return cls(tuple(distribution_from_dict(d) for d in data["components"]),
                   Functional.from_dict(data["functional"]), Grid1D(data["grid"]))


@dataclass(frozen=True, eq=False)
class ValueTable:
    """Rows of ``u`` at the listed steps (every step, or block boundaries)."""

    u: np.ndarray
    stages: np.ndarray

    def row(self, n: int) -> np.ndarray:
        idx = np.flatnonzero(self.stages == n)
        if idx.size == 0:
            raise KeyError(f"no value row stored for step {n}")
        return self.u[idx[0]]


@dataclass(frozen=True, eq=False)
class ControlTable:
    """Controls ``mu[n, k]`` for step ``n + 1`` given ``S_n = s_k``.

    In aggregate mode a block's control is repeated across its steps and is
    evaluated at the state reached at the start of the block.
    """

    mu: np.ndarray
    partition: BlockPartition
    mode: str = "standard"
    backward_seconds: float = 0.0
    boundary_hits: int = 0

    @property
    def N(self) -> int:
        return self.mu.shape[0]

    @property
    def stage_map(self) -> np.ndarray:
        return self.partition.stage_map

    @property
    def block_starts(self) -> np.ndarray:
        """For each step, the step index at which its block starts."""
        return self.partition.boundaries[self.stage_map]


def control_at(ct: ControlTable, n: int, s, grid: Grid1D):
    """Interpolated twist for step ``n + 1``, held constant beyond ``s_bar``."""
    if not 0 <= n < ct.N:
        raise ParameterError(f"stage index {n} outside [0, {ct.N})")
    out = np.minimum(np.interp(s, grid.points, ct.mu[n]), MU_MAX)
    return out if np.ndim(out) else float(out)


@dataclass
class _Stage:
    increment: DistributionModel
    power: int
    twist_hazard: Optional[object]


def _solve_point(stage: _Stage, continuation, s, breakpoints, cut, q: QuadratureSpec, where):
    mu_ref = 0.0
    level = 0
    hits = 0
    last = None
    while level < q.max_refine:
        kw = dict(breakpoints=breakpoints, upper_cut=cut, power=stage.power,
                  twist_hazard=stage.twist_hazard, q=q, mu_ref=mu_ref)
        fine = StageRule(stage.increment, continuation, s, level=level + 1, **kw)
        if fine.is_zero:
            return 0.0, 0.0, 0
        coarse = StageRule(stage.increment, continuation, s, level=level, **kw)
        with warnings.catch_warnings():
            # boundary hits are counted through opt.at_bound instead
            warnings.simplefilter("ignore", RuntimeWarning)
            opt = minimize_over_mu(fine.log_objective, stationarity=fine.stationarity,
                                   log_objective=True)
        hits = int(opt.at_bound)
        log_fine = math.log(opt.value) if opt.value > 0 else -math.inf
        log_coarse = coarse.log_objective(opt.mu)
        last = (math.exp(log_coarse), opt.value)
        tail_ok = cut is not None or opt.mu >= mu_ref
        if tail_ok and abs(math.expm1(log_coarse - log_fine)) <= q.rel_tol:
            return opt.value, opt.mu, hits
        mu_ref = min(mu_ref, opt.mu)
        level += 1
    raise NumericalError(f"stage objective did not converge at {where}", estimates=last, where=where)


def _backward(p: ProblemSpec, partition: BlockPartition, stages: list[_Stage],
              q: QuadratureSpec, threads: int, mode: str):
    t0 = time.perf_counter()
    grid = p.grid
    pts = grid.points
    fun = p.functional
    B = partition.B
    u = np.empty((B + 1, pts.size))
    u[B] = np.asarray(eval_g(fun, pts), dtype=float) ** 2
    block_mu = np.zeros((B, pts.size))
    bound = state_space_bound(fun)
    hits = 0

    def g2(x):
        return np.asarray(eval_g(fun, x), dtype=float) ** 2

    for m in range(B - 1, -1, -1):
        if m == B - 1:
            continuation, bps = g2, fun.breakpoints
        else:
            row = u[m + 1].copy()
            continuation = lambda x, row=row: interp_linear(grid, row, x, clamp=True)
            bps = tuple(pts)

        def solve_k(k, m=m, continuation=continuation, bps=bps):
            s = float(pts[k])
            if bound is not None and s >= bound:
                return 0.0, 0.0, 0
            cut = None if bound is None else bound - s
            return _solve_point(stages[m], continuation, s, bps, cut, q,
                                where={"block": m, "k": k, "s": s})

        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                results = list(pool.map(solve_k, range(pts.size)))
        else:
            results = [solve_k(k) for k in range(pts.size)]
        for k, (val, mu, hit) in enumerate(results):
            u[m, k] = val
            block_mu[m, k] = mu
            hits += hit
    if hits:
        log.warning("%d grid points hit the twist search boundary", hits)
    mu = block_mu[partition.stage_map]
    elapsed = time.perf_counter() - t0
    vt = ValueTable(u, partition.boundaries.copy())
    ct = ControlTable(mu, partition, mode, elapsed, hits)
    return vt, ct


def solve_backward(p: ProblemSpec, q: QuadratureSpec = DEFAULT_QUADRATURE,
                   threads: int = 1) -> tuple[ValueTable, ControlTable]:
    """Tabulate ``u(n, s_k)`` and ``mu_{n+1}(s_k)`` for every step."""
    stages = [_Stage(d, 1, None) for d in p.components]
    return _backward(p, BlockPartition.ones(p.N), stages, q, threads, "standard")


def solve_backward_aggregate(p: ProblemSpec, part: BlockPartition,
                             q: QuadratureSpec = DEFAULT_QUADRATURE,
                             threads: int = 1) -> tuple[ValueTable, ControlTable]:
    """One control per block; block sums are replaced by moment-matched log-normals.

    The stage objective becomes ``(1 - mu)**(-b) E[exp(-mu Lambda_X(Y)) u(next, s + Y)]``
    with ``Y`` the matched block law. For the left tail this minimises an
    approximate upper bound of the exact block recursion (accurate when the
    block sum is small), for the interference functional an approximate lower
    bound (accurate when it is large); both share this integral.
    """
    part.check(p.N)
    stages = []
    for m, (start, b) in enumerate(zip(part.boundaries[:-1], part.sizes)):
        block = p.components[start:start + b]
        d = block[0]
        if any(c != d for c in block[1:]):
            raise ParameterError(f"block {m} mixes non-identical components")
        if b == 1:
            stages.append(_Stage(d, 1, None))
        else:
            stages.append(_Stage(moment_match_block(d, b), b, d.cumulative_hazard))
    return _backward(p, part, stages, q, threads, "aggregate")


# --- archive ----------------------------------------------------------------

MAGIC = b"SOCTAB\x00\x01"
FORMAT_VERSION = 1


def save_tables(path, vt: ValueTable, ct: ControlTable, meta: ProblemSpec) -> Path:
    """Write a ``.soctab`` archive: magic, JSON header length, JSON header, ``u``, ``mu``.

    Arrays are little-endian binary64; the header carries shapes, the problem
    definition, partition, solver version and a SHA-256 of the payload.
    """
    u = np.ascontiguousarray(vt.u, dtype="<f8")
    mu = np.ascontiguousarray(ct.mu, dtype="<f8")
    payload = u.tobytes() + mu.tobytes()
    header = {
        "format_version": FORMAT_VERSION,
        "solver_version": __version__,
        "N": meta.N,
        "K": meta.grid.K,
        "mode": ct.mode,
        "partition": list(ct.partition.sizes),
        "stage_map": ct.stage_map.tolist(),
        "stages": vt.stages.tolist(),
        "u_shape": list(u.shape),
        "mu_shape": list(mu.shape),
        "backward_seconds": ct.backward_seconds,
        "boundary_hits": ct.boundary_hits,
        "problem": meta.to_dict(),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    raw = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(raw).to_bytes(8, "little"))
        fh.write(raw)
        fh.write(payload)
    return path


def load_tables(path, expected_n: Optional[int] = None):
    """Read an archive written by :func:`save_tables`; returns ``(vt, ct, problem)``."""
    data = Path(path).read_bytes()
    buf = io.BytesIO(data)
    if buf.read(len(MAGIC)) != MAGIC:
        raise TableError("not a table archive")
    try:
        size = int.from_bytes(buf.read(8), "little")
        header = json.loads(buf.read(size).decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise TableError(f"corrupted header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise TableError(f"unsupported archive version {header.get('format_version')!r}")
    payload = buf.read()
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise TableError("payload checksum mismatch")
    u_shape, mu_shape = tuple(header["u_shape"]), tuple(header["mu_shape"])
    n_u = int(np.prod(u_shape))
    if len(payload) != 8 * (n_u + int(np.prod(mu_shape))):
        raise TableError("payload size does not match the declared shapes")
    u = np.frombuffer(payload, dtype="<f8", count=n_u).reshape(u_shape).astype(float)
    mu = np.frombuffer(payload, dtype="<f8", offset=8 * n_u).reshape(mu_shape).astype(float)
    problem = ProblemSpec.from_dict(header["problem"])
    if mu_shape != (problem.N, problem.grid.K + 1) or header["N"] != problem.N:
        raise TableError("control table dimensions disagree with the stored problem")
    if expected_n is not None and expected_n != problem.N:
        raise TableError(f"archive has N = {problem.N}, expected {expected_n}")
    partition = BlockPartition(tuple(header["partition"]))
    vt = ValueTable(u, np.asarray(header["stages"], dtype=int))
    ct = ControlTable(mu, partition, header["mode"], float(header["backward_seconds"]),
                      int(header["boundary_hits"]))
    return vt, ct, problem
