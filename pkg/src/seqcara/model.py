"""Binary-response logistic model per treatment arm and the simulation truth."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numkit import InvalidInputError, MixtureNormalSpec, RngStream, draw_mixture_normal

__all__ = [
    "ETA_CLAMP",
    "TrueModel",
    "paper_model",
    "logistic",
    "make_covariate",
    "mean_response",
    "draw_covariate",
    "draw_response",
    "better_arm",
]

ETA_CLAMP = 700.0


def logistic(t: float) -> float:
    """Overflow-safe ``1 / (1 + exp(-t))`` with ``t`` clamped to +-700."""
    if t > ETA_CLAMP:
        t = ETA_CLAMP
    elif t < -ETA_CLAMP:
        t = -ETA_CLAMP
    return 1.0 / (1.0 + math.exp(-t))


def _linear(coef: Sequence[float], x: Sequence[float]) -> float:
    s = 0.0
    for j in range(len(x)):
        s += x[j] * coef[j]
    return s


def make_covariate(*xi: float) -> tuple[float, ...]:
    """Covariate vector ``(1, xi...)`` with the intercept slot first."""
    return (1.0,) + tuple(float(v) for v in xi)


def _check_covariate(cov: Sequence[float], p: int) -> None:
    if len(cov) != p:
        raise InvalidInputError(f"covariate has length {len(cov)}, model expects {p}")
    if cov[0] != 1.0:
        raise InvalidInputError("covariate must carry 1 in the intercept slot")


@dataclass(frozen=True)
class TrueModel:
    """Data-generating process: per-arm logistic coefficients and covariate law.

    ``arms[k]`` is ``(intercept, slope, ...)``; the covariate of a subject is
    ``(1, xi)`` with ``xi`` drawn from ``covariate_dist``.
    """

    arms: tuple[tuple[float, ...], ...]
    covariate_dist: MixtureNormalSpec = field(
        default_factory=lambda: MixtureNormalSpec(((2.0, 1.0, 0.5), (-2.0, 1.0, 0.5)))
    )
    link: str = "logit"

    def __post_init__(self):
        arms = tuple(tuple(float(v) for v in arm) for arm in self.arms)
        if len(arms) < 2:
            raise InvalidInputError("need at least two arms")
        p = len(arms[0])
        if p < 1 or any(len(a) != p for a in arms):
            raise InvalidInputError("all arms must share the same coefficient length")
        if not all(math.isfinite(v) for a in arms for v in a):
            raise InvalidInputError("coefficients must be finite")
        if self.link != "logit":
            raise InvalidInputError(f"unsupported link {self.link!r}; only 'logit' is implemented")
        if p != 2:
            # one scalar covariate drawn from the mixture, plus intercept
            raise InvalidInputError("v1 supports exactly one scalar covariate (p = 2)")
        object.__setattr__(self, "arms", arms)

    @property
    def n_arms(self) -> int:
        return len(self.arms)

    @property
    def p(self) -> int:
        return len(self.arms[0])

    @property
    def theta(self) -> np.ndarray:
        """Stacked arm-major parameter vector ``(theta_1, ..., theta_K)``."""
        return np.array([v for arm in self.arms for v in arm])


def paper_model() -> TrueModel:
    """Intercepts 0.1, slopes -1 and +1, covariate mixture 0.5 N(2,1) + 0.5 N(-2,1)."""
    return TrueModel(arms=((0.1, -1.0), (0.1, 1.0)))


def mean_response(arm: Sequence[float], cov: Sequence[float]) -> float:
    """Success probability ``logistic(x' theta_k)``."""
    if len(arm) != len(cov):
        raise InvalidInputError(f"dimension mismatch: {len(arm)} coefficients, {len(cov)} covariates")
    return logistic(_linear(arm, cov))


def draw_covariate(model: TrueModel, rng: RngStream) -> tuple[float, float]:
    return (1.0, draw_mixture_normal(model.covariate_dist, rng))


def draw_response(model: TrueModel, arm_index: int, cov: Sequence[float], rng: RngStream) -> int:
    if not 0 <= arm_index < model.n_arms:
        raise InvalidInputError(f"arm index {arm_index} out of range for {model.n_arms} arms")
    _check_covariate(cov, model.p)
    mu = mean_response(model.arms[arm_index], cov)
    return 1 if rng.uniform() < mu else 0


def better_arm(model: TrueModel, cov: Sequence[float]) -> int:
    """Arm with the highest true success probability at ``cov`` (lowest index on ties).

    Uses the true coefficients, so it is only meaningful inside a simulation.
    """
    _check_covariate(cov, model.p)
    best, best_mu = 0, mean_response(model.arms[0], cov)
    for k in range(1, model.n_arms):
        mu = mean_response(model.arms[k], cov)
        if mu > best_mu:
            best, best_mu = k, mu
    return best
