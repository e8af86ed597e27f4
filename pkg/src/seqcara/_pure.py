"""Reference trial loop in plain Python.

Built from the public operations of the other modules.  It is the fallback
when the compiled kernel is unavailable, the only path for user-supplied
allocation rules, and the oracle the kernel is tested against.
"""
from __future__ import annotations

import numpy as np

from .allocation import AllocationConditionError, AllocationDecision, allocate, decide_allocation
from .estimation import (
    InformationDeficientError,
    NonConvergenceError,
    _invert_spd,
    _sandwich,
    covariance_estimate,
    fit_arm_mle,
    pooled_information,
)
from .numkit import NotPositiveDefiniteError
from .model import better_arm, draw_covariate, draw_response
from .stopping import check_stop, quadratic_form


def _apply_contrast(h, theta):
    out = []
    for b in range(len(h[0])):
        s = 0.0
        for i in range(len(theta)):
            s += h[i][b] * theta[i]
        out.append(s)
    return out


def coverage(scenario, thetas, info, cov, n, c2):
    """Whether the reported ellipsoid at ``n`` contains the true (contrast) parameter."""
    theta_hat = [v for th in thetas for v in th]
    truth = list(scenario.model.theta)
    if scenario.contrast is not None:
        h = scenario.contrast.h_matrix.tolist()
        est = _apply_contrast(h, theta_hat)
        tru = _apply_contrast(h, truth)
        try:
            precision = _invert_spd(_sandwich(cov.v_hat.tolist(), h))
        except NotPositiveDefiniteError:
            return est, False
    else:
        est, tru = theta_hat, truth
        precision = info.matrix.tolist()
    d = [est[i] - tru[i] for i in range(len(est))]
    return est, n * quadratic_form(d, precision) <= c2


def run_trial_pure(scenario, rng, keep_state: bool = False):
    from .engine import TrialResult, TrialState

    model = scenario.model
    K, p = model.n_arms, model.p
    cfg = scenario.resolved_stopping()
    c2 = cfg.c_squared

    order = [k for k in range(K) for _ in range(scenario.m0)]
    for i in range(len(order) - 1, 0, -1):
        j = int(rng.uniform() * (i + 1))
        order[i], order[j] = order[j], order[i]

    state = TrialState(K)
    burn_p = tuple(1.0 / K for _ in range(K))
    for k in order:
        x = draw_covariate(model, rng)
        y = draw_response(model, k, x, rng)
        state.append(x, k, y, burn_p, 1)

    thetas = [[0.0] * p for _ in range(K)]
    penalised = [False] * K
    dirty = set(range(K))
    censored = failed = False
    while True:
        n = state.n
        try:
            for k in sorted(dirty):
                fit = fit_arm_mle(state.arms[k], thetas[k], scenario.max_iter)
                thetas[k] = fit.theta_hat.tolist()
                penalised[k] = fit.ridge_used > 0.0
        except NonConvergenceError:
            failed = True
            break
        info = pooled_information(state.arms, thetas)
        try:
            cov = covariance_estimate(info)
        except InformationDeficientError:
            cov = None
        verdict = check_stop(n, cov, cfg, scenario.contrast)
        if verdict.stop:
            break
        if verdict.censored:
            censored = True
            break

        x = draw_covariate(model, rng)
        if scenario.rule == "utility":
            # an arm without a finite MLE would be starved by the plug-in information term
            mode = scenario.no_mle_fallback
            fallback = mode if (mode != "none" and any(penalised)) else None
            decision = decide_allocation(info, cov, thetas, x, scenario.tuning, fallback)
        elif scenario.rule == "fixed":
            fp = np.array(scenario.fixed_p)
            decision = AllocationDecision(fp, fp, scenario.tuning.t0, scenario.tuning.eta0, float("nan"))
        else:
            pi = np.asarray(scenario.rule(np.array(thetas), np.array([x])), dtype=float)[0]
            if np.any(pi <= 0.0) or abs(pi.sum() - 1.0) > 1e-9:
                raise AllocationConditionError(f"allocation rule produced {pi}, which is not a positive probability vector")
            decision = AllocationDecision(pi, pi, scenario.tuning.t0, scenario.tuning.eta0, float("nan"))
        k = allocate(decision, rng)
        y = draw_response(model, k, x, rng)
        state.append(x, k, y, tuple(decision.optimal_p.tolist()), 2)
        dirty = {k}

    n = state.n
    state.theta_hat = np.array(thetas)
    hits = [better_arm(model, x) == arm for x, arm, *_ in state.records]
    correct = sum(hits)
    burn = K * scenario.m0
    correct_adaptive = sum(hits[burn:])
    gamma, covered = None, None
    max_axis = threshold = float("nan")
    if not failed:
        max_axis, threshold = verdict.max_axis, verdict.threshold
        if not censored:
            gamma, covered = coverage(scenario, thetas, info, cov, n, c2)
    return TrialResult(
        tau=n,
        censored=censored,
        failed=failed,
        theta_at_stop=np.array(thetas),
        gamma_at_stop=None if gamma is None else np.array(gamma),
        covered=covered,
        correct_allocations=correct,
        total_allocations=n,
        arm_counts=np.array(state.arm_counts),
        max_axis_at_stop=max_axis,
        threshold=threshold,
        correct_adaptive=correct_adaptive,
        adaptive_allocations=n - burn,
        state=state if keep_state else None,
    )
