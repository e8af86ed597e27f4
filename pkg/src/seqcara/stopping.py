"""Fixed-size confidence ellipsoid stopping rules.

The rule stops at the first ``n >= n0`` with ``n >= C^2 Lambda_max(V) / delta^2``.
Which matrix plays ``V`` is set by ``StoppingConfig.scale``:

``"average"``
    ``V`` is the inverse of the *averaged* information (``Var(sqrt(n) theta_hat)``),
    the dimensionally consistent reading.
``"total"``
    ``V`` is the inverse of the *summed* information, i.e. the estimated
    covariance of ``theta_hat`` itself.  Stopping then happens near 50 subjects
    at ``delta = 0.3`` in the default two-arm setting.  This is the default.

Both readings share the same code; ``total`` just divides the largest
eigenvalue of the averaged-scale matrix by ``n`` once more.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .estimation import CovarianceEstimate, ContrastSpec, contrast_covariance
from .numkit import InvalidInputError, _as_symmetric, _eig_extremes, chi_square_quantile

__all__ = [
    "SCALES",
    "StoppingConfig",
    "StoppingVerdict",
    "optimal_sample_size",
    "check_stop",
    "ellipsoid_contains",
    "quadratic_form",
]

SCALES = ("total", "average")


@dataclass(frozen=True)
class StoppingConfig:
    alpha: float = 0.05
    delta: float = 0.3
    n0: Optional[int] = None
    dof: Optional[int] = None
    max_n: int = 5000
    scale: str = "total"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInputError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not (math.isfinite(self.delta) and self.delta > 0.0):
            raise InvalidInputError(f"delta must be positive, got {self.delta}")
        if self.n0 is not None and self.n0 < 1:
            raise InvalidInputError(f"n0 must be positive, got {self.n0}")
        if self.dof is not None and self.dof < 1:
            raise InvalidInputError(f"dof must be positive, got {self.dof}")
        if self.n0 is not None and self.max_n <= self.n0:
            raise InvalidInputError(f"max_n ({self.max_n}) must exceed n0 ({self.n0})")
        if self.scale not in SCALES:
            raise InvalidInputError(f"scale must be one of {SCALES}, got {self.scale!r}")

    @property
    def c_squared(self) -> float:
        if self.dof is None:
            raise InvalidInputError("dof is unset; resolve it from the contrast first")
        return chi_square_quantile(self.alpha, self.dof)

    def resolved(self, n_arms: int, m0: int, dof: int) -> "StoppingConfig":
        """Copy with ``n0`` defaulted to ``K m0`` and ``dof`` filled in; checks ``n0 >= K m0``."""
        n0 = n_arms * m0 if self.n0 is None else self.n0
        if n0 < n_arms * m0:
            raise InvalidInputError(f"n0 ({n0}) must be at least K*m0 = {n_arms * m0}")
        return StoppingConfig(self.alpha, self.delta, n0, dof, self.max_n, self.scale)


@dataclass(frozen=True)
class StoppingVerdict:
    stop: bool
    n: int
    threshold: float
    max_axis: float
    censored: bool = False
    deficient: bool = False


def _axis_terms(n: int, lam: float, c2: float, delta: float, total: bool):
    """``(q, threshold)`` where the maximum half-axis is ``sqrt(q)``."""
    lam_eff = lam / n if total else lam
    q = c2 * lam_eff / n
    threshold = c2 * lam_eff / (delta * delta)
    return q, threshold


def _sample_size(lam: float, c2: float, delta: float, total: bool) -> int:
    target = c2 * lam / (delta * delta)
    n = max(1, math.ceil(math.sqrt(target) if total else target))
    # settle on the exact first n satisfying the same predicate the rule uses
    while _axis_terms(n, lam, c2, delta, total)[0] > delta * delta:
        n += 1
    while n > 1 and _axis_terms(n - 1, lam, c2, delta, total)[0] <= delta * delta:
        n -= 1
    return n


def optimal_sample_size(v_true, cfg: StoppingConfig) -> int:
    """Oracle sample size when the per-subject asymptotic covariance is known."""
    lo, hi = _eig_extremes(_as_symmetric(v_true))
    if not lo > 0.0:
        raise InvalidInputError("v_true must be positive definite")
    return _sample_size(hi, cfg.c_squared, cfg.delta, cfg.scale == "total")


def check_stop(
    n: int,
    cov: Optional[CovarianceEstimate],
    cfg: StoppingConfig,
    contrast: Optional[ContrastSpec] = None,
) -> StoppingVerdict:
    """Evaluate the stopping rule at sample size ``n``.

    ``cov=None`` means the information was deficient; the verdict is then
    "continue" rather than an error.  With a contrast the largest eigenvalue
    of ``H' V H`` replaces that of ``V``.
    """
    if n < 1:
        raise InvalidInputError("n must be positive")
    n0 = cfg.n0 if cfg.n0 is not None else 1
    censored_at = n >= cfg.max_n
    if cov is None:
        return StoppingVerdict(False, n, math.inf, math.inf, censored_at, True)
    if contrast is None:
        lam = cov.lambda_max
    else:
        _, lam = _eig_extremes(contrast_covariance(cov, contrast).tolist())
    q, threshold = _axis_terms(n, lam, cfg.c_squared, cfg.delta, cfg.scale == "total")
    stop = n >= n0 and q <= cfg.delta * cfg.delta
    return StoppingVerdict(stop, n, threshold, 2.0 * math.sqrt(q), censored_at and not stop)


def quadratic_form(d, precision) -> float:
    s = 0.0
    for i in range(len(d)):
        t = 0.0
        for j in range(len(d)):
            t += precision[i][j] * d[j]
        s += d[i] * t
    return s


def ellipsoid_contains(estimate, truth, precision, n: int, c_squared: float) -> bool:
    """``n (est - truth)' P (est - truth) <= C^2`` with ``P`` the precision matrix."""
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    prec = np.asarray(precision, dtype=float)
    if est.shape != tru.shape or prec.shape != (est.size, est.size):
        raise InvalidInputError("estimate, truth and precision dimensions do not conform")
    d = (est - tru).tolist()
    return n * quadratic_form(d, prec.tolist()) <= c_squared
