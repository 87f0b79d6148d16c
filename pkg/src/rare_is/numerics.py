"""One-dimensional kernels used by the backward solver.

The stage objective of the hazard-rate twisted dynamic program is

    J(mu) = (1 - mu) ** (-b) * int_0^cut c(s + y) f_Y(y) exp(-mu * Lambda_X(y)) dy

with ``b = 1`` and ``Y = X`` for the per-step recursion. Only the factor
``exp(-mu * Lambda_X(y))`` depends on ``mu``, so a :class:`StageRule` evaluates
the continuation once on a fixed node set and every later ``J(mu)`` is a
weighted log-sum-exp over those nodes.

Node placement: finite pieces between continuation breakpoints are integrated
in ``y`` with composite Gauss-Legendre panels; an unbounded tail is mapped to
``w = Lambda_Y(y)``, where the density becomes ``exp(-w)`` and the twist
weight is explicit, and covered by geometrically widening panels.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import optimize

from .distributions import DistributionModel, check_twist
from .errors import NumericalError, ParameterError


@dataclass(frozen=True, eq=False)
class Grid1D:
    """Mesh ``0 = s_0 < s_1 < ... < s_K = s_bar`` of the state space."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 3:
            raise ParameterError("grid needs at least three points (K >= 2)")
        if pts[0] != 0.0:
            raise ParameterError("grid must start at s_0 = 0")
        if not np.all(np.diff(pts) > 0):
            raise ParameterError("grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def K(self) -> int:
        return self.points.size - 1

    @property
    def s_bar(self) -> float:
        return float(self.points[-1])

    @classmethod
    def uniform(cls, s_bar: float, K: int) -> "Grid1D":
        if not s_bar > 0:
            raise ParameterError("s_bar must be positive")
        pts = np.linspace(0.0, s_bar, int(K) + 1)
        pts[-1] = s_bar
        return cls(pts)

    @classmethod
    def clustered(cls, s_bar: float, K: int, ratio: float = 0.85) -> "Grid1D":
        """Spacings shrink geometrically by ``ratio`` toward ``s_bar``."""
        if not 0 < ratio <= 1:
            raise ParameterError("clustering ratio must lie in (0, 1]")
        widths = ratio ** np.arange(int(K))
        pts = np.concatenate([[0.0], np.cumsum(widths)])
        pts *= s_bar / pts[-1]
        pts[-1] = s_bar
        return cls(pts)

    def __eq__(self, other):
        return isinstance(other, Grid1D) and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())


@dataclass(frozen=True)
class QuadratureSpec:
    """Composite Gauss-Legendre settings.

    ``panels`` panels of ``nodes_per_panel`` nodes cover each smooth piece at
    refinement level 0; every further level halves the panels, until two
    successive levels agree to ``rel_tol`` or ``max_refine`` levels are spent.
    """

    panels: int = 8
    nodes_per_panel: int = 32
    rel_tol: float = 1e-7
    max_refine: int = 5
    tail_span: float = 64.0

    def __post_init__(self):
        if self.panels < 1 or self.nodes_per_panel < 1:
            raise ParameterError("panels and nodes_per_panel must be positive")
        if self.panels * self.nodes_per_panel < 8:
            raise ParameterError("need panels * nodes_per_panel >= 8")
        if not 0 < self.rel_tol < 1:
            raise ParameterError("rel_tol must lie in (0, 1)")
        if self.max_refine < 1:
            raise ParameterError("max_refine must be at least 1")


DEFAULT_QUADRATURE = QuadratureSpec()


@lru_cache(maxsize=None)
def _gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def composite_gauss_legendre(edges: np.ndarray, n: int):
    """Nodes and weights of ``n``-point Gauss-Legendre on each ``[edges[i], edges[i+1]]``."""
    x, w = _gauss_legendre(n)
    a, b = edges[:-1, None], edges[1:, None]
    half = 0.5 * (b - a)
    nodes = (a + half * (x + 1.0)).ravel()
    weights = (half * w).ravel()
    return nodes, weights


def _logsumexp(v: np.ndarray) -> float:
    if v.size == 0:
        return -math.inf
    top = v.max()
    if not np.isfinite(top):
        return float(top)
    return float(top + math.log(np.exp(v - top).sum()))


class StageRule:
    """Fixed quadrature for one stage objective at one state ``s``.

    Parameters
    ----------
    increment : DistributionModel
        Law of the increment ``Y`` added to the state.
    continuation : callable
        Vectorised ``c(x) >= 0`` evaluated at ``s + y``.
    s : float
        Current state.
    breakpoints : sequence of float
        Absolute states where ``c`` has kinks or jumps.
    upper_cut : float, optional
        ``c(s + y) = 0`` for ``y > upper_cut``. ``None`` means unbounded support.
    power : int
        Exponent ``b`` of ``(1 - mu) ** (-b)``.
    twist_hazard : callable, optional
        Hazard ``Lambda_X`` inside the twist weight; defaults to the increment's own.
    mu_ref : float
        Twist the tail length is sized for: the tail weight decays like
        ``exp(-(1 + mu) w)``, so the span grows as ``1 / (1 + mu_ref)``.
    """

    def __init__(self, increment: DistributionModel, continuation: Callable, s: float,
                 breakpoints: Sequence[float] = (), upper_cut: Optional[float] = None,
                 power: int = 1, twist_hazard: Optional[Callable] = None,
                 q: QuadratureSpec = DEFAULT_QUADRATURE, level: int = 0, mu_ref: float = 0.0):
        self.power = power
        self.level = level
        own_hazard = twist_hazard is None
        hazard = increment.cumulative_hazard if own_hazard else twist_hazard
        cut = math.inf if upper_cut is None else float(upper_cut)
        n_pan = q.panels * 2**level
        log_a, h = [], []

        if cut > 0:
            rel = np.asarray(breakpoints, dtype=float) - s
            inner = np.unique(rel[(rel > 0) & (rel < cut)])
            edges = np.concatenate([[0.0], inner, [cut] if math.isfinite(cut) else []])
            if not math.isfinite(cut):
                # the tail map w = Lambda(y) is singular at y = 0; start it at the median
                median = float(increment.ppf(0.5))
                if median > edges[-1]:
                    edges = np.append(edges, median)
            for a, b in zip(edges[:-1], edges[1:]):
                y, w = composite_gauss_legendre(np.linspace(a if a > 0 else 0.5 * b, b, n_pan + 1),
                                                q.nodes_per_panel)
                if a == 0:
                    # densities may be singular at 0 (Weibull shape < 1): grade toward the origin
                    ys, ws = composite_gauss_legendre(_graded_edges(0.5 * b, level), _GRADED_NODES)
                    y, w = np.concatenate([ys, y]), np.concatenate([ws, w])
                with np.errstate(divide="ignore"):
                    la = np.log(w) + increment.logpdf(y) + np.log(_nonneg(continuation(s + y)))
                log_a.append(la)
                h.append(hazard(y))
            if not math.isfinite(cut):
                w0 = float(increment.cumulative_hazard(edges[-1]))
                # nested geometric edges w0 + 0.5 * (ratio**i - 1); each level splits every panel
                ratio = 2.0 ** (1.0 / 2**level)
                span = q.tail_span * (1.0 + 0.25 * level) / max(1.0 + mu_ref, 1.0 / 64)
                count = math.ceil(math.log1p(span / 0.5) / math.log(ratio))
                tails = w0 + 0.5 * np.expm1(np.arange(count + 1) * math.log(ratio))
                wn, ww = composite_gauss_legendre(tails, q.nodes_per_panel)
                y = increment.inverse_cumulative_hazard(wn)
                with np.errstate(divide="ignore"):
                    la = np.log(ww) - wn + np.log(_nonneg(continuation(s + y)))
                log_a.append(la)
                h.append(wn if own_hazard else hazard(y))

        log_a = np.concatenate(log_a) if log_a else np.empty(0)
        h = np.concatenate(h) if h else np.empty(0)
        keep = np.isfinite(log_a)
        self.log_a = log_a[keep]
        self.h = np.asarray(h, dtype=float)[keep]

    @property
    def is_zero(self) -> bool:
        return self.log_a.size == 0

    def log_objective(self, mu: float) -> float:
        if self.is_zero:
            return -math.inf
        return -self.power * math.log1p(-mu) + _logsumexp(self.log_a - mu * self.h)

    def objective(self, mu: float) -> float:
        lv = self.log_objective(mu)
        return math.exp(lv) if lv < 709.0 else math.inf

    def stationarity(self, mu: float) -> float:
        """``d/dmu log J``; increasing in ``mu``, zero at the minimiser."""
        v = self.log_a - mu * self.h
        p = np.exp(v - v.max())
        return self.power / (1.0 - mu) - float(np.dot(p, self.h) / p.sum())


_GRADED_NODES = 16
_GRADED_HALVINGS = 40


def _graded_edges(top: float, level: int) -> np.ndarray:
    """``[0, top]`` split at ``top * 2**(-j / 2**level)``; nested across levels."""
    j = np.arange(_GRADED_HALVINGS * 2**level, -1, -1)
    return np.concatenate([[0.0], top * np.exp2(-j / 2**level)])


def _nonneg(c):
    return np.maximum(np.asarray(c, dtype=float), 0.0)


def stage_integral(d: DistributionModel, mu: float, continuation: Callable, s: float,
                   upper_cut: Optional[float] = None, q: QuadratureSpec = DEFAULT_QUADRATURE,
                   breakpoints: Sequence[float] = ()) -> float:
    """``(1/(1-mu)) * int_0^inf c(s + t) f(t) exp(-mu Lambda(t)) dt`` to ``q.rel_tol``.

    Equivalent to the survival-space form ``(1/(1-mu)) int_0^{F(cut)} c(s + F^{-1}(p)) (1-p)^mu dp``.
    Raises :class:`NumericalError` with the last two estimates if refinement stalls.
    """
    mu = float(check_twist(mu))
    if upper_cut is not None and upper_cut <= 0:
        return 0.0
    prev = None
    for level in range(q.max_refine + 1):
        rule = StageRule(d, continuation, s, breakpoints, upper_cut, q=q, level=level, mu_ref=min(mu, 0.0))
        val = rule.objective(mu)
        if not math.isfinite(val):
            raise NumericalError(f"stage integral diverges at mu={mu}", estimates=(prev, val))
        if prev is not None and abs(val - prev) <= q.rel_tol * abs(val):
            return val
        prev_prev, prev = prev, val
    raise NumericalError("stage integral did not converge", estimates=(prev_prev, prev))


class Minimum(NamedTuple):
    mu: float
    value: float
    at_bound: bool = False


def _mu_of(z):
    # z = log(nu), nu = 1 / (1 - mu)
    return -math.expm1(-z)


def minimize_over_mu(objective: Callable[[float], float], bracket_hint=None, *,
                     stationarity: Optional[Callable[[float], float]] = None,
                     log_objective: bool = False, xtol: float = 1e-6,
                     nu_bounds: tuple[float, float] = (1e-6, 1e6), step: float = math.log(2.0)) -> Minimum:
    """Minimise ``objective(mu)`` over ``mu < 1``.

    The search runs in ``z = log(nu)`` with ``nu = 1 / (1 - mu)``, starting from
    ``nu = 1`` (or the middle of ``bracket_hint``, a ``(mu_lo, mu_hi)`` pair)
    and expanding the bracket geometrically downhill. Inside the bracket the
    increasing ``stationarity`` residual is solved with Brent's root finder when
    supplied; otherwise a bounded Brent (parabolic/golden) minimiser is used. ``xtol`` is
    an absolute tolerance on ``z``, i.e. relative on ``nu``.

    When the bracket hits ``nu_bounds`` the boundary point is returned with
    ``at_bound=True`` and a :class:`RuntimeWarning` is issued.
    """
    z_lo, z_hi = math.log(nu_bounds[0]), math.log(nu_bounds[1])

    def phi(z):
        try:
            val = objective(_mu_of(z))
        except (ZeroDivisionError, OverflowError):
            return math.inf
        return math.inf if val != val else val

    if bracket_hint is not None:
        lo, hi = (math.log(1.0 / (1.0 - float(m))) for m in bracket_hint)
        z0 = 0.5 * (lo + hi)
        step = max(step, 0.5 * abs(hi - lo))
    else:
        z0 = 0.0
    za, zb, zc = max(z0 - step, z_lo), z0, min(z0 + step, z_hi)
    fa, fb, fc = phi(za), phi(zb), phi(zc)
    at_bound = False
    width = step
    while fa < fb and not at_bound:
        width *= 2.0
        zc, fc, zb, fb = zb, fb, za, fa
        if za <= z_lo:
            at_bound = True
            break
        za = max(za - width, z_lo)
        fa = phi(za)
    while fc < fb and not at_bound:
        width *= 2.0
        za, fa, zb, fb = zb, fb, zc, fc
        if zc >= z_hi:
            at_bound = True
            break
        zc = min(zc + width, z_hi)
        fc = phi(zc)

    if at_bound:
        warnings.warn("no interior minimiser inside the twist search domain; returning the boundary",
                      RuntimeWarning, stacklevel=2)
        return Minimum(_mu_of(zb), _value(fb, log_objective), True)

    z_star = None
    if stationarity is not None:
        ra, rc = stationarity(_mu_of(za)), stationarity(_mu_of(zc))
        if ra <= 0 <= rc and ra < rc:
            z_star = optimize.brentq(lambda z: stationarity(_mu_of(z)), za, zc, xtol=xtol)
    if z_star is None:
        if not (fb < fa or fb < fc):
            # flat objective: nothing to gain from moving
            return Minimum(_mu_of(zb), _value(fb, log_objective), False)
        res = optimize.minimize_scalar(phi, bounds=(za, zc), method="bounded",
                                       options={"xatol": xtol})
        z_star = float(res.x)
    f_star = phi(z_star)
    if fb < f_star:
        z_star, f_star = zb, fb
    return Minimum(_mu_of(z_star), _value(f_star, log_objective), False)


def _value(f, log_objective):
    return math.exp(f) if log_objective else f


def interp_linear(grid: Grid1D, values, s, clamp: Optional[bool] = None):
    """Piecewise-linear interpolation, extended linearly past ``s_bar``.

    With ``clamp`` (default: whenever ``values`` is nonnegative) the result is
    floored at zero, which keeps extrapolated second moments nonnegative.
    """
    pts = grid.points
    values = np.asarray(values, dtype=float)
    if values.shape != pts.shape:
        raise ParameterError("values must match the grid")
    s = np.asarray(s, dtype=float)
    out = np.interp(s, pts, values)
    beyond = s > pts[-1]
    if np.any(beyond):
        slope = (values[-1] - values[-2]) / (pts[-1] - pts[-2])
        out = np.where(beyond, values[-1] + slope * (s - pts[-1]), out)
    if clamp is None:
        clamp = bool(np.all(values >= 0))
    if clamp:
        out = np.maximum(out, 0.0)
    return out if out.ndim else float(out)
