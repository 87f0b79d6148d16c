"""Maps ``g`` applied to the sum ``S_N``; the target is ``E[g(S_N)]``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .distributions import DistributionModel, distribution_from_dict
from .errors import ParameterError


@dataclass(frozen=True)
class Functional:
    """A nonnegative function of the running sum.

    ``kind`` is one of ``left_tail``, ``right_tail``, ``interference_cdf`` or
    ``custom``. Indicators use non-strict inequalities: ``left_tail`` is
    ``1{s <= gamma_th}`` and ``right_tail`` is ``1{s >= gamma_th}``. The
    interference functional is ``F_X0(gamma_th * (s + eta))``, the outage
    probability given an interference sum ``s``. All thresholds are linear.
    """

    kind: str
    gamma_th: float = float("nan")
    eta: float = 0.0
    x0: Optional[DistributionModel] = None
    evaluator: Optional[Callable] = field(default=None, compare=False)
    monotone: Optional[str] = None
    name: str = ""

    def __post_init__(self):
        if self.kind in ("left_tail", "right_tail", "interference_cdf"):
            if not self.gamma_th > 0:
                raise ParameterError(f"{self.kind} needs gamma_th > 0, got {self.gamma_th}")
        if self.kind == "interference_cdf":
            if self.x0 is None:
                raise ParameterError("interference_cdf needs the desired-signal law x0")
            if not self.eta >= 0:
                raise ParameterError("noise power eta must be nonnegative")
        elif self.kind == "custom":
            if not callable(self.evaluator):
                raise ParameterError("custom functional needs a callable evaluator")
        elif self.kind not in ("left_tail", "right_tail"):
            raise ParameterError(f"unknown functional kind {self.kind!r}")

    def __call__(self, s):
        return eval_g(self, s)

    @property
    def breakpoints(self) -> tuple[float, ...]:
        """Points where ``g`` is discontinuous (quadrature panel edges)."""
        if self.kind in ("left_tail", "right_tail"):
            return (self.gamma_th,)
        return ()

    def to_dict(self) -> dict:
        if self.kind == "custom":
            raise ParameterError("custom functionals cannot be serialised")
        out = {"kind": self.kind, "gamma_th": self.gamma_th}
        if self.kind == "interference_cdf":
            out["eta"] = self.eta
            out["x0"] = self.x0.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Functional":
        data = dict(data)
        if "x0" in data:
            data["x0"] = distribution_from_dict(data["x0"])
        return cls(**data)


def left_tail(gamma_th: float) -> Functional:
    return Functional("left_tail", gamma_th=float(gamma_th))


def right_tail(gamma_th: float) -> Functional:
    return Functional("right_tail", gamma_th=float(gamma_th))


def interference_cdf(x0: DistributionModel, gamma_th: float, eta: float) -> Functional:
    return Functional("interference_cdf", gamma_th=float(gamma_th), eta=float(eta), x0=x0)


def custom(evaluator: Callable, monotone: Optional[str] = None, name: str = "custom") -> Functional:
    """Wrap a vectorised ``evaluator(s) -> g(s)``.

    ``monotone`` ("increasing"/"decreasing") is informational only.
    """
    return Functional("custom", evaluator=evaluator, monotone=monotone, name=name)


def constant(c: float = 1.0) -> Functional:
    c = float(c)
    return custom(lambda s: np.full(np.shape(s), c), monotone="constant", name=f"constant({c!r})")


def eval_g(fun: Functional, s):
    s = np.asarray(s, dtype=float)
    if fun.kind == "left_tail":
        out = (s <= fun.gamma_th).astype(float)
    elif fun.kind == "right_tail":
        out = (s >= fun.gamma_th).astype(float)
    elif fun.kind == "interference_cdf":
        out = fun.x0.cdf(fun.gamma_th * (s + fun.eta))
    else:
        out = np.asarray(fun.evaluator(s), dtype=float)
    return out if out.ndim else float(out)


def state_space_bound(fun: Functional) -> Optional[float]:
    """Natural truncation of the state space, if any.

    For the left tail the value function vanishes for ``s >= gamma_th`` since
    every increment is positive; other kinds return ``None`` and the caller
    picks a large enough bound.
    """
    if fun.kind == "left_tail":
        return fun.gamma_th
    return None
