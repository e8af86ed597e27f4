"""Utility-maximising covariate-adjusted allocation for two arms.

The utility of allocating the incoming subject with probabilities ``p`` is the
log-determinant of the information after adding that subject, minus ``eta``
times the Kullback-Leibler divergence from the ethical target ``pi``.  ``pi``
maps the estimated difference in linear predictors through a symmetric ``J``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special

from .estimation import CovarianceEstimate, InfoMatrix
from .model import TrueModel, draw_covariate, logistic
from .numkit import InvalidInputError, RngStream, _log_det_spd, _invert_spd, draw_categorical
from .stopping import quadratic_form

__all__ = [
    "PI_FLOOR",
    "J_FUNCTIONS",
    "TuningConfig",
    "AllocationDecision",
    "AllocationAsymptotics",
    "AllocationConditionError",
    "UnsupportedRuleError",
    "target_probability",
    "tuning_schedule",
    "effect_standard_error",
    "utility",
    "maximize_utility",
    "decide_allocation",
    "allocate",
    "target_rule",
    "fixed_rule",
    "estimate_allocation_expectation",
    "check_allocation_conditions",
]

PI_FLOOR = 1e-6
SE_FLOOR = 1e-6
GOLDEN_TOL = 1e-6
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def _normal_cdf(t: float) -> float:
    return 0.5 * math.erfc(-t / math.sqrt(2.0))


J_FUNCTIONS = {"logistic": logistic, "normal": _normal_cdf}
J_CODES = {"logistic": 0, "normal": 1}
FALLBACKS = (None, "balanced", "target")


class UnsupportedRuleError(InvalidInputError):
    pass


class AllocationConditionError(InvalidInputError):
    """A user-supplied allocation rule is not a valid, regular randomisation rule."""


@dataclass(frozen=True)
class TuningConfig:
    t0: float = 1.0
    eta0: float = 0.0
    vary_t: bool = False
    vary_eta: bool = False
    t_bounds: tuple[float, float] = (0.1, 10.0)
    eta_bounds: tuple[float, float] = (0.0, 10.0)
    j_function: str = "logistic"

    def __post_init__(self):
        tlo, thi = self.t_bounds
        elo, ehi = self.eta_bounds
        if not 0.0 < tlo < thi:
            raise InvalidInputError(f"t_bounds must satisfy 0 < lo < hi, got {self.t_bounds}")
        if not 0.0 <= elo < ehi:
            raise InvalidInputError(f"eta_bounds must satisfy 0 <= lo < hi, got {self.eta_bounds}")
        if not tlo <= self.t0 <= thi:
            raise InvalidInputError(f"t0={self.t0} lies outside t_bounds {self.t_bounds}")
        if not elo <= self.eta0 <= ehi:
            raise InvalidInputError(f"eta0={self.eta0} lies outside eta_bounds {self.eta_bounds}")
        if self.j_function not in J_FUNCTIONS:
            raise InvalidInputError(f"j_function must be one of {sorted(J_FUNCTIONS)}")


@dataclass(frozen=True)
class AllocationDecision:
    target_pi: np.ndarray
    optimal_p: np.ndarray
    t_used: float
    eta_used: float
    utility_at_p: float


@dataclass(frozen=True)
class AllocationAsymptotics:
    nu: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    sigma: np.ndarray
    d_nu: tuple = ()
    v_blocks: tuple = ()


def _lin(coef, x) -> float:
    s = 0.0
    for j in range(len(x)):
        s += x[j] * coef[j]
    return s


def _target_pi1(theta_hat, x, t_n: float, j_function: str = "logistic") -> float:
    delta = _lin(theta_hat[0], x) - _lin(theta_hat[1], x)
    pi1 = J_FUNCTIONS[j_function](delta / t_n)
    if pi1 < PI_FLOOR:
        return PI_FLOOR
    if pi1 > 1.0 - PI_FLOOR:
        return 1.0 - PI_FLOOR
    return pi1


def target_probability(theta_hat, cov, t_n: float, j_function: str = "logistic") -> np.ndarray:
    """``pi_1 = J((x'theta_1 - x'theta_2) / T_n)``, ``pi_2 = 1 - pi_1``, clamped away from 0 and 1."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    if theta_hat.ndim != 2 or theta_hat.shape[0] != 2:
        raise UnsupportedRuleError("the built-in target rule is defined for exactly two arms")
    if not t_n > 0.0:
        raise InvalidInputError("t_n must be positive")
    pi1 = _target_pi1(theta_hat.tolist(), [float(v) for v in cov], t_n, j_function)
    return np.array([pi1, 1.0 - pi1])


def _clip(v: float, lo: float, hi: float) -> float:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


def tuning_schedule(cfg: TuningConfig, se_delta: float) -> tuple[float, float]:
    """Tuning pair ``(T_n, eta_n)``.

    With the vary flags set, ``T_n = t0 * se`` and ``eta_n = eta0 / se``, each
    clipped to its bounds; ``se`` is the standard error of the estimated
    treatment difference at the incoming covariate.
    """
    t_n = cfg.t0
    eta_n = cfg.eta0
    if cfg.vary_t:
        t_n = _clip(cfg.t0 * se_delta, cfg.t_bounds[0], cfg.t_bounds[1])
    if cfg.vary_eta:
        eta_n = _clip(cfg.eta0 / max(se_delta, SE_FLOOR), cfg.eta_bounds[0], cfg.eta_bounds[1])
    return t_n, eta_n


def _difference_vector(x, n_arms: int) -> list[float]:
    return list(x) + [-v for v in x] if n_arms == 2 else []


def effect_standard_error(cov: Optional[CovarianceEstimate], x, n: int) -> float:
    """``sqrt(x~' V x~ / n)`` with ``x~ = (x, -x)``; infinite when ``cov`` is missing."""
    if cov is None:
        return math.inf
    v = cov.v_hat.tolist()
    xt = _difference_vector([float(a) for a in x], len(v) // len(x))
    return math.sqrt(quadratic_form(xt, v) / n)


def _utility_terms(blocks, n: int, x, theta_hat):
    scaled, lams = [], []
    for b, th in zip(blocks, theta_hat):
        scaled.append([[n * v for v in row] for row in b])
        mu = logistic(_lin(th, x))
        lams.append(mu * (1.0 - mu))
    return scaled, lams


def _utility_value(p, scaled, lams, x, n: int, eta: float, target_pi) -> float:
    d = len(x)
    total = 0.0
    for k in range(len(scaled)):
        w = p[k] * lams[k]
        a = scaled[k]
        m = [[(a[i][j] + w * x[i] * x[j]) / (n + 1) for j in range(d)] for i in range(d)]
        total += _log_det_spd(m)
    ent = 0.0
    for k in range(len(p)):
        if p[k] > 0.0:
            ent += p[k] * math.log(p[k] / target_pi[k])
    return total - eta * ent


def utility(p, info: InfoMatrix, cov, theta_hat, eta: float, target_pi) -> float:
    """``log det I_{n+1}(p) - eta * sum p_k log(p_k / pi_k)``.

    ``I_{n+1}(p)`` adds ``p_k lambda_k x x'`` to the summed information of arm
    ``k`` and re-averages over ``n + 1`` subjects.  Singular matrices give ``-inf``.
    """
    p = [float(v) for v in p]
    if any(v < 0.0 for v in p) or abs(math.fsum(p) - 1.0) > 1e-9:
        raise InvalidInputError(f"{p} is not a probability vector")
    x = [float(v) for v in cov]
    scaled, lams = _utility_terms([b.tolist() for b in info.blocks], info.n, x, np.asarray(theta_hat).tolist())
    return _utility_value(p, scaled, lams, x, info.n, eta, [float(v) for v in target_pi])


def _golden_max(f) -> float:
    a, b = 0.0, 1.0
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > GOLDEN_TOL:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    best = 0.5 * (a + b)
    fbest = f(best)
    for edge in (0.0, 1.0):
        fe = f(edge)
        if fe > fbest:
            best, fbest = edge, fe
    return best


def _maximize(scaled, lams, x, n, eta, target_pi) -> float:
    return _golden_max(lambda p1: _utility_value((p1, 1.0 - p1), scaled, lams, x, n, eta, target_pi))


def maximize_utility(info: InfoMatrix, cov, theta_hat, eta: float, target_pi) -> np.ndarray:
    """Golden-section search for the utility maximiser over ``p_1 in [0, 1]``."""
    if len(info.blocks) != 2:
        raise UnsupportedRuleError("utility maximisation is implemented for two arms")
    x = [float(v) for v in cov]
    scaled, lams = _utility_terms([b.tolist() for b in info.blocks], info.n, x, np.asarray(theta_hat).tolist())
    p1 = _maximize(scaled, lams, x, info.n, eta, [float(v) for v in target_pi])
    return np.array([p1, 1.0 - p1])


def decide_allocation(info: InfoMatrix, cov_est: Optional[CovarianceEstimate], theta_hat, x,
                      tuning: TuningConfig, fallback: Optional[str] = None) -> AllocationDecision:
    """Tuning, target probabilities and utility maximiser for the incoming subject.

    ``fallback`` replaces the utility maximiser (used while some arm has no
    finite MLE): ``"balanced"`` gives equal probabilities, ``"target"`` the
    ethical target itself when ``eta_n > 0`` (equal probabilities otherwise).
    """
    if fallback not in FALLBACKS:
        raise InvalidInputError(f"fallback must be one of {FALLBACKS}, got {fallback!r}")
    x = [float(v) for v in x]
    theta = np.asarray(theta_hat, dtype=float).tolist()
    se = effect_standard_error(cov_est, x, info.n)
    t_n, eta_n = tuning_schedule(tuning, se)
    pi1 = _target_pi1(theta, x, t_n, tuning.j_function)
    pi = [pi1, 1.0 - pi1]
    scaled, lams = _utility_terms([b.tolist() for b in info.blocks], info.n, x, theta)
    if fallback is not None:
        p1 = pi1 if (fallback == "target" and eta_n > 0.0) else 0.5
    else:
        p1 = _maximize(scaled, lams, x, info.n, eta_n, pi)
    p = [p1, 1.0 - p1]
    u = _utility_value(p, scaled, lams, x, info.n, eta_n, pi)
    return AllocationDecision(np.array(pi), np.array(p), t_n, eta_n, u)


def allocate(decision: AllocationDecision, rng: RngStream) -> int:
    """Randomise the incoming subject according to ``decision.optimal_p``."""
    return draw_categorical(decision.optimal_p, rng)


# ---------------------------------------------------------------------------
# allocation expectations (vectorised rules: rule(theta[K, p], xs[m, p]) -> [m, K])
# ---------------------------------------------------------------------------

Rule = Callable[[np.ndarray, np.ndarray], np.ndarray]


def target_rule(t_n: float = 1.0, j_function: str = "logistic") -> Rule:
    """Vectorised form of :func:`target_probability` at a fixed ``T_n``."""
    cdf = special.expit if j_function == "logistic" else special.ndtr

    def rule(theta, xs):
        theta = np.asarray(theta, dtype=float)
        pi1 = np.clip(cdf((xs @ theta[0] - xs @ theta[1]) / t_n), PI_FLOOR, 1.0 - PI_FLOOR)
        return np.column_stack([pi1, 1.0 - pi1])

    return rule


def fixed_rule(p: Sequence[float]) -> Rule:
    """Covariate- and parameter-free allocation probabilities."""
    p = np.asarray(p, dtype=float)

    def rule(theta, xs):
        return np.tile(p, (len(xs), 1))

    return rule


def _draw_design(model: TrueModel, size: int, rng: RngStream) -> np.ndarray:
    return np.array([draw_covariate(model, rng) for _ in range(size)])


def estimate_allocation_expectation(model: TrueModel, rule: Rule, mc_size: int, rng: RngStream,
                                    step: float = 1e-4) -> AllocationAsymptotics:
    """Monte Carlo ``nu = E[pi(theta, xi)]`` and the limiting covariance of the allocation proportions.

    Derivatives of ``nu`` are central differences reusing the same covariate
    draws.  ``v_blocks[k]`` is the per-subject asymptotic covariance of arm
    ``k``'s estimate, ``E[pi_k lambda_k x x']^{-1}``.
    """
    if mc_size < 10_000:
        raise InvalidInputError("mc_size must be at least 1e4")
    xs = _draw_design(model, mc_size, rng)
    theta = np.array(model.arms)
    K, p = theta.shape
    probs = np.asarray(rule(theta, xs), dtype=float)
    nu = probs.mean(axis=0)

    v_blocks = []
    for k in range(K):
        mu = special.expit(np.clip(xs @ theta[k], -700.0, 700.0))
        w = probs[:, k] * mu * (1.0 - mu)
        info = (xs * w[:, None]).T @ xs / mc_size
        info = 0.5 * (info + info.T)
        v_blocks.append(np.array(_invert_spd(info.tolist())))

    d_nu = []
    for k in range(K):
        dk = np.zeros((K, p))
        for j in range(p):
            up, down = theta.copy(), theta.copy()
            up[k, j] += step
            down[k, j] -= step
            dk[:, j] = (np.asarray(rule(up, xs)).mean(axis=0) - np.asarray(rule(down, xs)).mean(axis=0)) / (2 * step)
        d_nu.append(dk)

    sigma1 = np.diag(nu) - np.outer(nu, nu)
    sigma2 = sum(d @ v @ d.T for d, v in zip(d_nu, v_blocks))
    return AllocationAsymptotics(nu, sigma1, sigma2, sigma1 + 2.0 * sigma2, tuple(d_nu), tuple(v_blocks))


def check_allocation_conditions(rule: Rule, model: TrueModel, rng: RngStream, mc_size: int = 10_000,
                                step: float = 1e-4) -> np.ndarray:
    """Runtime check that a user-supplied rule is valid and regular; returns ``nu``.

    Validity: rows sum to one and ``0 < nu_k < 1``.  Regularity: every ``pi_k > 0`` and
    the central difference of ``nu`` is stable when the step is halved, a
    numerical proxy for differentiability in ``theta``.
    """
    xs = _draw_design(model, mc_size, rng)
    theta = np.array(model.arms)
    probs = np.asarray(rule(theta, xs), dtype=float)
    if probs.shape != (mc_size, model.n_arms):
        raise AllocationConditionError(f"rule returned shape {probs.shape}, expected {(mc_size, model.n_arms)}")
    if not np.all(np.isfinite(probs)) or np.max(np.abs(probs.sum(axis=1) - 1.0)) > 1e-9:
        raise AllocationConditionError("allocation probabilities must sum to one")
    nu = probs.mean(axis=0)
    if np.any(nu <= 0.0) or np.any(nu >= 1.0):
        raise AllocationConditionError(f"expected allocation proportions must lie in (0, 1), got {nu}")
    if np.any(probs <= 0.0):
        raise AllocationConditionError("every arm needs pi_k > 0 at every covariate")
    for k in range(model.n_arms):
        for j in range(model.p):
            diffs = []
            for h in (step, step / 2):
                up, down = theta.copy(), theta.copy()
                up[k, j] += h
                down[k, j] -= h
                diffs.append((np.asarray(rule(up, xs)).mean(axis=0) - np.asarray(rule(down, xs)).mean(axis=0)) / (2 * h))
            if not np.allclose(diffs[0], diffs[1], rtol=1e-2, atol=1e-4):
                raise AllocationConditionError(f"nu is not smooth in theta[{k}][{j}]")
    return nu
