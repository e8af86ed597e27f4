"""Per-arm logistic maximum likelihood, pooled information and plug-in covariances."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import ETA_CLAMP
from .numkit import (
    InvalidInputError,
    NotPositiveDefiniteError,
    _cholesky,
    _eig_extremes,
    _invert_spd,
)

__all__ = [
    "RIDGE",
    "ArmData",
    "FitResult",
    "InfoMatrix",
    "CovarianceEstimate",
    "ContrastSpec",
    "NonConvergenceError",
    "InformationDeficientError",
    "score_and_info",
    "log_likelihood",
    "fit_arm_mle",
    "pooled_information",
    "covariance_estimate",
    "contrast_covariance",
    "treatment_difference_contrast",
]

RIDGE = 1e-4
SCORE_TOL = 1e-10
STEP_TOL = 1e-12
MAX_HALVINGS = 30
# the objective is a sum of many terms; a step may not lose more than its rounding noise
OBJ_SLACK = 1e-12
DIVERGENCE_BOUND = 50.0
MAX_CONDITION = 1e12
MIN_INFO_PER_ROW = 1e-8
DEFICIENT_EIGEN = 1e-12


class NonConvergenceError(RuntimeError):
    """Newton iterations failed even with the ridge penalty."""

    def __init__(self, message: str, theta: Sequence[float]):
        super().__init__(message)
        self.theta = np.array(theta, dtype=float)


class InformationDeficientError(ArithmeticError):
    """An information block is singular, so no covariance estimate exists."""


@dataclass
class ArmData:
    """Subjects allocated to one arm: covariate rows and binary responses."""

    xs: list = field(default_factory=list)
    ys: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.xs) != len(self.ys):
            raise InvalidInputError("xs and ys differ in length")
        self.xs = [tuple(float(v) for v in x) for x in self.xs]
        self.ys = [int(y) for y in self.ys]
        if self.xs and any(len(x) != len(self.xs[0]) for x in self.xs):
            raise InvalidInputError("covariate rows differ in length")

    @classmethod
    def from_rows(cls, rows) -> "ArmData":
        rows = list(rows)
        return cls([r[0] for r in rows], [r[1] for r in rows])

    def append(self, x, y: int) -> None:
        self.xs.append(tuple(x))
        self.ys.append(int(y))

    def __len__(self):
        return len(self.ys)


@dataclass(frozen=True)
class FitResult:
    theta_hat: np.ndarray
    converged: bool
    ridge_used: float
    iterations: int
    score_norm: float


@dataclass(frozen=True)
class InfoMatrix:
    """Block-diagonal averaged information; ``blocks[k]`` is arm ``k``'s ``p x p`` block."""

    blocks: tuple
    n: int

    @property
    def matrix(self) -> np.ndarray:
        p = self.blocks[0].shape[0]
        K = len(self.blocks)
        out = np.zeros((p * K, p * K))
        for k, b in enumerate(self.blocks):
            out[k * p:(k + 1) * p, k * p:(k + 1) * p] = b
        return out


@dataclass(frozen=True)
class CovarianceEstimate:
    """``v_hat`` is the inverse of the averaged information (per-subject scale)."""

    v_hat: np.ndarray
    lambda_max: float
    lambda_min: float
    blocks: tuple = ()


@dataclass(frozen=True)
class ContrastSpec:
    """Contrast matrix ``H`` (``pK x h``) in arm-major parameter order; ``gamma = H' theta``."""

    h_matrix: np.ndarray

    def __post_init__(self):
        h = np.array(self.h_matrix, dtype=float)
        if h.ndim != 2 or h.shape[1] < 1 or h.shape[1] > h.shape[0]:
            raise InvalidInputError(f"contrast matrix must be pK x h with 1 <= h <= pK, got {h.shape}")
        if not np.all(np.isfinite(h)):
            raise InvalidInputError("contrast matrix has non-finite entries")
        if np.linalg.matrix_rank(h, tol=1e-10) != h.shape[1]:
            raise InvalidInputError("contrast matrix must have full column rank")
        h.setflags(write=False)
        object.__setattr__(self, "h_matrix", h)

    @property
    def h(self) -> int:
        return self.h_matrix.shape[1]

    @classmethod
    def from_coefficient_major_rows(cls, rows, n_arms: int, p: int) -> "ContrastSpec":
        """Build from rows of ``H'`` written against ``(alpha_1..alpha_K, slope_1..slope_K)``."""
        rows = np.array(rows, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != n_arms * p:
            raise InvalidInputError(f"contrast rows must have {n_arms * p} columns")
        perm = [j * n_arms + k for k in range(n_arms) for j in range(p)]
        return cls(rows[:, perm].T)


def treatment_difference_contrast(n_arms: int = 2, p: int = 2) -> ContrastSpec:
    """Coefficient-wise difference between arm 1 and arm 2 (one column per coefficient)."""
    if n_arms != 2:
        raise InvalidInputError("the difference contrast is defined for two arms")
    h = np.zeros((n_arms * p, p))
    for j in range(p):
        h[j, j] = 1.0
        h[p + j, j] = -1.0
    return ContrastSpec(h)


# ---------------------------------------------------------------------------
# likelihood pieces (list kernels mirrored by _kernel.pyx)
# ---------------------------------------------------------------------------

def _clamp(t: float) -> float:
    if t > ETA_CLAMP:
        return ETA_CLAMP
    if t < -ETA_CLAMP:
        return -ETA_CLAMP
    return t


def _objective(theta, xs, ys, ridge: float) -> float:
    d = len(theta)
    s = 0.0
    for i in range(len(ys)):
        x = xs[i]
        eta = 0.0
        for j in range(d):
            eta += x[j] * theta[j]
        eta = _clamp(eta)
        if eta > 0.0:
            s += ys[i] * eta - eta - math.log1p(math.exp(-eta))
        else:
            s += ys[i] * eta - math.log1p(math.exp(eta))
    for j in range(d):
        s -= ridge * theta[j] * theta[j]
    return s


def _score_info(theta, xs, ys):
    d = len(theta)
    score = [0.0] * d
    info = [[0.0] * d for _ in range(d)]
    for i in range(len(ys)):
        x = xs[i]
        eta = 0.0
        for j in range(d):
            eta += x[j] * theta[j]
        mu = 1.0 / (1.0 + math.exp(-_clamp(eta)))
        r = ys[i] - mu
        w = mu * (1.0 - mu)
        for a in range(d):
            score[a] += x[a] * r
            wa = w * x[a]
            for b in range(a + 1):
                info[a][b] += wa * x[b]
    for a in range(d):
        for b in range(a):
            info[b][a] = info[a][b]
    return score, info


def _solve_spd(a, rhs):
    low = _cholesky(a)
    d = len(rhs)
    z = [0.0] * d
    for i in range(d):
        s = rhs[i]
        for k in range(i):
            s -= low[i][k] * z[k]
        z[i] = s / low[i][i]
    out = [0.0] * d
    for i in range(d - 1, -1, -1):
        s = z[i]
        for k in range(i + 1, d):
            s -= low[k][i] * out[k]
        out[i] = s / low[i][i]
    return out


# status codes shared with the compiled kernel
CONVERGED, SINGULAR, DIVERGED, EXHAUSTED = 0, 1, 2, 3


def _newton(xs, ys, theta0, ridge: float, max_iter: int):
    """Damped Newton ascent on the (penalised) log-likelihood.

    Returns ``(status, theta, iterations, score_norm)``.
    """
    d = len(theta0)
    theta = list(theta0)
    obj = _objective(theta, xs, ys, ridge)
    iterations = 0
    small_step = False
    while True:
        score, info = _score_info(theta, xs, ys)
        grad = [score[j] - 2.0 * ridge * theta[j] for j in range(d)]
        gnorm = 0.0
        for g in grad:
            if abs(g) > gnorm:
                gnorm = abs(g)
        if gnorm < SCORE_TOL or small_step:
            break
        if iterations >= max_iter:
            return EXHAUSTED, theta, iterations, gnorm
        for j in range(d):
            info[j][j] += 2.0 * ridge
        try:
            step = _solve_spd(info, grad)
        except NotPositiveDefiniteError:
            return SINGULAR, theta, iterations, gnorm
        iterations += 1
        t = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            cand = [theta[j] + t * step[j] for j in range(d)]
            cand_obj = _objective(cand, xs, ys, ridge)
            if cand_obj >= obj - OBJ_SLACK * (1.0 + abs(obj)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no ascent direction left at working precision
            if gnorm < 1e-8:
                break
            return EXHAUSTED, theta, iterations, gnorm
        snorm = 0.0
        for j in range(d):
            snorm += (cand[j] - theta[j]) * (cand[j] - theta[j])
        theta, obj = cand, cand_obj
        if math.sqrt(snorm) < STEP_TOL:
            small_step = True
        if ridge == 0.0:
            for v in theta:
                if abs(v) > DIVERGENCE_BOUND:
                    return DIVERGED, theta, iterations, gnorm
    if ridge == 0.0:
        _, info = _score_info(theta, xs, ys)
        lo, hi = _eig_extremes(info)
        if lo <= MIN_INFO_PER_ROW * len(ys) or hi > MAX_CONDITION * lo:
            return SINGULAR, theta, iterations, gnorm
    return CONVERGED, theta, iterations, gnorm


def _fit(xs, ys, init, max_iter: int):
    """Unpenalised fit, falling back to the ridge on separation or singularity.

    Returns ``(theta, ridge_used, iterations, score_norm)``; raises NonConvergenceError.
    """
    status, theta, iters, gnorm = _newton(xs, ys, init, 0.0, max_iter)
    if status == CONVERGED:
        return theta, 0.0, iters, gnorm
    start = list(init)
    for v in start:
        if abs(v) > DIVERGENCE_BOUND:
            start = [0.0] * len(init)
            break
    status, theta, more, gnorm = _newton(xs, ys, start, RIDGE, max_iter)
    if status != CONVERGED:
        raise NonConvergenceError("ridge-penalised Newton iterations did not converge", theta)
    return theta, RIDGE, iters + more, gnorm


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def score_and_info(theta, data: ArmData) -> tuple[np.ndarray, np.ndarray]:
    """Score ``sum x (y - mu)`` and observed information ``sum mu (1 - mu) x x'``."""
    theta = [float(v) for v in theta]
    if data.xs and len(data.xs[0]) != len(theta):
        raise InvalidInputError("theta and covariates differ in dimension")
    score, info = _score_info(theta, data.xs, data.ys)
    return np.array(score), np.array(info)


def log_likelihood(theta, data: ArmData, ridge: float = 0.0) -> float:
    """Bernoulli-logit log-likelihood minus ``ridge * ||theta||^2``."""
    return _objective([float(v) for v in theta], data.xs, data.ys, ridge)


def fit_arm_mle(data: ArmData, init=None, max_iter: int = 100) -> FitResult:
    """Maximum likelihood estimate for one arm.

    Newton-Raphson with step halving from ``init`` (zeros by default).  When the
    iterates run off to infinity or the information is numerically singular, the
    fit is redone with a ``1e-4 * ||theta||^2`` penalty and ``ridge_used`` says so.
    """
    if len(data) == 0:
        raise InvalidInputError("cannot fit an arm without data")
    p = len(data.xs[0])
    init = [0.0] * p if init is None else [float(v) for v in init]
    if len(init) != p:
        raise InvalidInputError("init has the wrong dimension")
    theta, ridge, iters, gnorm = _fit(data.xs, data.ys, init, max_iter)
    return FitResult(np.array(theta), True, ridge, iters, gnorm)


def _pooled_blocks(arm_data: Sequence[ArmData], thetas) -> tuple[list, int]:
    n = sum(len(a) for a in arm_data)
    blocks = []
    for data, theta in zip(arm_data, thetas):
        _, s = _score_info([float(v) for v in theta], data.xs, data.ys)
        blocks.append([[v / n for v in row] for row in s])
    return blocks, n


def pooled_information(arm_data: Sequence[ArmData], thetas) -> InfoMatrix:
    """Averaged information ``(1/n) sum_i X_ik lambda_ik x_i x_i'`` for every arm ``k``."""
    if len(arm_data) != len(thetas):
        raise InvalidInputError("one theta per arm is required")
    if any(len(a) == 0 for a in arm_data):
        raise InvalidInputError("every arm needs at least one subject")
    blocks, n = _pooled_blocks(arm_data, thetas)
    return InfoMatrix(tuple(np.array(b) for b in blocks), n)


def _covariance_blocks(blocks):
    """Inverse blocks plus extreme eigenvalues; raises InformationDeficientError."""
    inv = []
    lam_max, lam_min = -math.inf, math.inf
    for b in blocks:
        lo, _ = _eig_extremes(b)
        if not lo > DEFICIENT_EIGEN:
            raise InformationDeficientError("information block is singular")
        try:
            vb = _invert_spd(b)
        except NotPositiveDefiniteError as exc:
            raise InformationDeficientError("information block is singular") from exc
        vlo, vhi = _eig_extremes(vb)
        if vhi > lam_max:
            lam_max = vhi
        if vlo < lam_min:
            lam_min = vlo
        inv.append(vb)
    return inv, lam_max, lam_min


def covariance_estimate(info: InfoMatrix) -> CovarianceEstimate:
    inv, lam_max, lam_min = _covariance_blocks([b.tolist() for b in info.blocks])
    p = len(inv[0])
    v = np.zeros((p * len(inv), p * len(inv)))
    for k, b in enumerate(inv):
        v[k * p:(k + 1) * p, k * p:(k + 1) * p] = b
    return CovarianceEstimate(v, lam_max, lam_min, tuple(np.array(b) for b in inv))


def _sandwich(v, h):
    """``H' V H`` with a fixed summation order; exactly symmetric."""
    n, m = len(h), len(h[0])
    tmp = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for b in range(m):
            s = 0.0
            for j in range(n):
                s += v[i][j] * h[j][b]
            tmp[i][b] = s
    out = [[0.0] * m for _ in range(m)]
    for a in range(m):
        for b in range(a + 1):
            s = 0.0
            for i in range(n):
                s += h[i][a] * tmp[i][b]
            out[a][b] = s
            out[b][a] = s
    return out


def contrast_covariance(cov: CovarianceEstimate | np.ndarray, contrast: ContrastSpec) -> np.ndarray:
    """``H' V H`` for the contrast ``gamma = H' theta``."""
    v = cov.v_hat if isinstance(cov, CovarianceEstimate) else np.asarray(cov, dtype=float)
    h = contrast.h_matrix
    if v.shape != (h.shape[0], h.shape[0]):
        raise InvalidInputError(f"covariance {v.shape} does not conform with contrast {h.shape}")
    return np.array(_sandwich(v.tolist(), h.tolist()))
