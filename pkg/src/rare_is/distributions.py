"""Positive univariate distributions and the hazard-rate twisted family.

Every family implements density, CDF, survival and quantile functions; the
cumulative hazard, the twisted law ``(1 - mu) f(x) exp(mu * Lambda(x))`` and
inverse-CDF sampling from it are generic over that interface.

Decibel convention
------------------
Parameters quoted in dB are converted with ``xi = ln(10) / 10``: a log-normal
given as ``(m_db, sigma_db)`` has natural-log location ``xi * m_db`` and scale
``xi * sigma_db``. This is the usual shadow-fading convention, under which a
median of ``m_db`` dB equals ``10 ** (m_db / 10)`` in linear units.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError, ParameterError

DB_FACTOR = math.log(10.0) / 10.0

#: Saturation value of the cumulative hazard once ``1 - F(x)`` underflows.
LAMBDA_CAP = -math.log(np.finfo(float).tiny)

_LOG_HALF = math.log(0.5)


def db_to_linear(value_db):
    """Power ratio in dB to linear units, ``10 ** (value_db / 10)``."""
    if np.ndim(value_db):
        return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)
    return 10.0 ** (float(value_db) / 10.0)


def _as_float_array(x):
    return np.asarray(x, dtype=float)


def _check_finite(x, what="x"):
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{what} must be finite")


def check_twist(mu):
    """Validate a twisting parameter (scalar or array); the admissible set is ``mu < 1``."""
    arr = _as_float_array(mu)
    if np.any(np.isnan(arr)) or np.any(arr >= 1.0):
        raise ParameterError(f"twisting parameter must satisfy mu < 1, got {mu!r}")
    return arr


class DistributionModel(ABC):
    """Interface of a positive continuous distribution with no atom at 0.

    Subclasses supply ``logpdf``, ``cdf``, ``sf``, ``logsf``, ``ppf`` and
    ``isf`` as vectorised functions valid on ``x > 0`` (and ``p`` in [0, 1]).
    """

    kind: str = "abstract"

    @abstractmethod
    def logpdf(self, x): ...

    @abstractmethod
    def cdf(self, x): ...

    @abstractmethod
    def sf(self, x): ...

    @abstractmethod
    def logsf(self, x): ...

    @abstractmethod
    def ppf(self, p): ...

    @abstractmethod
    def isf(self, q): ...

    @property
    @abstractmethod
    def params(self) -> dict: ...

    def mean(self) -> float:
        raise NotImplementedError(f"{self.kind} does not expose moments")

    def variance(self) -> float:
        raise NotImplementedError(f"{self.kind} does not expose moments")

    def pdf(self, x):
        x = _as_float_array(x)
        with np.errstate(divide="ignore"):
            return np.exp(self.logpdf(x))

    def cumulative_hazard(self, x):
        """``-log(1 - F(x))``, saturating at :data:`LAMBDA_CAP`."""
        x = _as_float_array(x)
        return np.minimum(-self.logsf(x), LAMBDA_CAP)

    def inverse_cumulative_hazard(self, w):
        """Point ``x`` with ``Lambda(x) = w``; ``w`` must be nonnegative."""
        w = _as_float_array(w)
        # small w: go through the CDF, otherwise the survival function
        small = w < -_LOG_HALF
        out = np.empty(np.shape(w))
        out[small] = self.ppf(-np.expm1(-w[small]))
        out[~small] = self.isf(np.exp(-w[~small]))
        return out if out.ndim else float(out)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    def __eq__(self, other):
        return type(self) is type(other) and self.params == other.params

    def __hash__(self):
        return hash((self.kind, tuple(sorted(self.params.items()))))


@dataclass(frozen=True, eq=False)
class LogNormal(DistributionModel):
    """Log-normal law: ``log X ~ Normal(m, sigma**2)`` in natural-log units."""

    m: float = 0.0
    sigma: float = 1.0
    kind = "lognormal"

    def __post_init__(self):
        if not (math.isfinite(self.m) and math.isfinite(self.sigma)):
            raise ParameterError("log-normal parameters must be finite")
        if self.sigma <= 0:
            raise ParameterError(f"log-normal scale must be positive, got {self.sigma}")
        object.__setattr__(self, "m", float(self.m))
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def params(self):
        return {"m": self.m, "sigma": self.sigma}

    def _z(self, x):
        x = _as_float_array(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            return (np.log(np.where(x > 0, x, np.nan)) - self.m) / self.sigma

    def logpdf(self, x):
        x = _as_float_array(x)
        z = self._z(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = -0.5 * z * z - np.log(x * self.sigma) - 0.5 * math.log(2 * math.pi)
        return np.where(x > 0, val, -np.inf)

    def cdf(self, x):
        x = _as_float_array(x)
        return np.where(x > 0, special.ndtr(np.nan_to_num(self._z(x), nan=0.0)), 0.0)

    def sf(self, x):
        x = _as_float_array(x)
        return np.where(x > 0, special.ndtr(-np.nan_to_num(self._z(x), nan=0.0)), 1.0)

    def logsf(self, x):
        x = _as_float_array(x)
        return np.where(x > 0, special.log_ndtr(-np.nan_to_num(self._z(x), nan=0.0)), 0.0)

    def ppf(self, p):
        with np.errstate(divide="ignore"):
            return np.exp(self.m + self.sigma * special.ndtri(_as_float_array(p)))

    def isf(self, q):
        with np.errstate(divide="ignore"):
            return np.exp(self.m - self.sigma * special.ndtri(_as_float_array(q)))

    def mean(self):
        return math.exp(self.m + 0.5 * self.sigma**2)

    def variance(self):
        s2 = self.sigma**2
        return math.expm1(s2) * math.exp(2 * self.m + s2)


@dataclass(frozen=True, eq=False)
class Weibull(DistributionModel):
    """Weibull law with ``Lambda(x) = (x / scale) ** shape``."""

    shape: float = 1.0
    scale: float = 1.0
    kind = "weibull"

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ParameterError("Weibull shape and scale must be positive")
        object.__setattr__(self, "shape", float(self.shape))
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def params(self):
        return {"shape": self.shape, "scale": self.scale}

    def _hazard(self, x):
        return np.where(x > 0, (np.maximum(x, 0.0) / self.scale) ** self.shape, 0.0)

    def logpdf(self, x):
        x = _as_float_array(x)
        k, lam = self.shape, self.scale
        with np.errstate(divide="ignore", invalid="ignore"):
            val = math.log(k / lam) + (k - 1) * np.log(x / lam) - (x / lam) ** k
        return np.where(x > 0, val, -np.inf)

    def cdf(self, x):
        return -np.expm1(-self._hazard(_as_float_array(x)))

    def sf(self, x):
        return np.exp(-self._hazard(_as_float_array(x)))

    def logsf(self, x):
        return -self._hazard(_as_float_array(x))

    def ppf(self, p):
        p = _as_float_array(p)
        with np.errstate(divide="ignore"):
            return self.scale * (-np.log1p(-p)) ** (1.0 / self.shape)

    def isf(self, q):
        q = _as_float_array(q)
        with np.errstate(divide="ignore"):
            return self.scale * (-np.log(q)) ** (1.0 / self.shape)

    def mean(self):
        return self.scale * math.gamma(1 + 1 / self.shape)

    def variance(self):
        g1 = math.gamma(1 + 1 / self.shape)
        return self.scale**2 * (math.gamma(1 + 2 / self.shape) - g1 * g1)


FAMILIES = {"lognormal": LogNormal, "weibull": Weibull}


def distribution_from_dict(data: dict) -> DistributionModel:
    data = dict(data)
    kind = data.pop("kind", None)
    if kind not in FAMILIES:
        raise ParameterError(f"unknown distribution kind {kind!r}")
    try:
        return FAMILIES[kind](**data)
    except TypeError as exc:
        raise ParameterError(f"bad parameters for {kind}: {exc}") from None


def lognormal_from_db(m_db: float, sigma_db: float) -> LogNormal:
    """Log-normal from location and scale in dB (see module docstring)."""
    if not sigma_db > 0:
        raise ParameterError(f"sigma_db must be positive, got {sigma_db}")
    return LogNormal(DB_FACTOR * m_db, DB_FACTOR * sigma_db)


# --- generic operations -----------------------------------------------------

def density(d: DistributionModel, x):
    """Density ``f(x)``; zero on ``x <= 0``."""
    x = _as_float_array(x)
    _check_finite(x)
    out = d.pdf(x)
    return out if out.ndim else float(out)


def cumulative_hazard(d: DistributionModel, x):
    x = _as_float_array(x)
    if np.any(np.isnan(x)) or np.any(x < 0):
        raise DomainError("cumulative hazard is defined for x >= 0")
    out = d.cumulative_hazard(x)
    return out if out.ndim else float(out)


def twisted_density(d: DistributionModel, x, mu):
    """``(1 - mu) f(x) exp(mu * Lambda(x))``."""
    mu = check_twist(mu)
    x = _as_float_array(x)
    _check_finite(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        logval = np.log1p(-mu) + d.logpdf(x) + mu * d.cumulative_hazard(np.maximum(x, 0.0))
        out = np.where(x > 0, np.exp(logval), 0.0)
    return out if out.ndim else float(out)


def twisted_cdf(d: DistributionModel, x, mu):
    """``1 - (1 - F(x)) ** (1 - mu)``, computed from ``log(1 - F)``."""
    mu = check_twist(mu)
    x = _as_float_array(x)
    out = -np.expm1((1.0 - mu) * d.logsf(x))
    return out if out.ndim else float(out)


def twisted_quantile(d: DistributionModel, y, mu):
    """Inverse of :func:`twisted_cdf`: ``F^{-1}(1 - (1 - y) ** (1 / (1 - mu)))``.

    For the log-normal this is ``exp(m + sigma * ndtri(1 - (1 - y) ** (1 / (1 - mu))))``.
    ``mu == 0`` entries go straight through ``d.ppf`` so untwisted draws match
    plain inverse-CDF sampling bit for bit.
    """
    mu = check_twist(mu)
    y = _as_float_array(y)
    if np.any(np.isnan(y)) or np.any(y < 0) or np.any(y >= 1):
        raise DomainError("twisted quantile needs 0 <= y < 1")
    y, mu = np.broadcast_arrays(y, mu)
    out = np.empty(y.shape)
    plain = mu == 0.0
    out[plain] = d.ppf(y[plain])
    tw = ~plain
    if np.any(tw):
        # log of the original survival probability at the quantile
        log_q = np.log1p(-y[tw]) / (1.0 - mu[tw])
        q = np.exp(log_q)
        far = log_q < _LOG_HALF
        res = np.empty(q.shape)
        res[far] = d.isf(q[far])
        res[~far] = d.ppf(-np.expm1(log_q[~far]))
        out[tw] = res
    return out if out.ndim else float(out)


def sample_twisted(d: DistributionModel, mu, rng: np.random.Generator, size=None):
    """Inverse-CDF draw(s) from the twisted law using one uniform per draw."""
    check_twist(mu)
    return twisted_quantile(d, rng.random(size), mu)
