"""Backend selection for the trial loop.

The compiled kernel is used when it imports; otherwise the pure-Python loop.
``SEQCARA_BACKEND=python`` (or ``compiled``) overrides the default.  Scenarios
with a user-supplied allocation rule always run in Python.
"""
from __future__ import annotations

import os

import numpy as np

from ._pure import run_trial_pure
from .allocation import J_CODES
from .numkit import InvalidInputError

try:
    from . import _kernel
except ImportError:  # pragma: no cover - depends on the build
    _kernel = None

BACKENDS = ("compiled", "python")
HAVE_COMPILED = _kernel is not None


def _default() -> str:
    env = os.environ.get("SEQCARA_BACKEND", "").strip().lower()
    if env:
        if env not in BACKENDS:
            raise InvalidInputError(f"SEQCARA_BACKEND must be one of {BACKENDS}, got {env!r}")
        return env
    return "compiled" if HAVE_COMPILED else "python"


DEFAULT = _default()


class PythonBackend:
    name = "python"

    @staticmethod
    def run_trial(scenario, rng, keep_state=False):
        return run_trial_pure(scenario, rng, keep_state)


class CompiledBackend:
    name = "compiled"

    @staticmethod
    def run_trial(scenario, rng, keep_state=False):
        from .engine import TrialResult, TrialState

        model = scenario.model
        cfg = scenario.resolved_stopping()
        mix = model.covariate_dist
        tune = scenario.tuning
        K = model.n_arms
        if scenario.contrast is not None:
            hmat = np.ascontiguousarray(scenario.contrast.h_matrix, dtype=float)
        else:
            hmat = np.zeros((1, 1))
        fixed = np.asarray(scenario.fixed_p if scenario.rule == "fixed" else [1.0 / K] * K, dtype=float)
        out = _kernel.run_trial(
            np.ascontiguousarray(model.arms, dtype=float),
            np.asarray(mix.means, dtype=float), np.asarray(mix.sds, dtype=float),
            np.asarray(mix.cumulative_weights, dtype=float),
            hmat, scenario.contrast is not None,
            scenario.m0, cfg.n0, cfg.max_n, cfg.c_squared, cfg.delta, cfg.scale == "total",
            0 if scenario.rule == "utility" else 1, fixed,
            tune.t0, tune.eta0, tune.vary_t, tune.vary_eta,
            tune.t_bounds[0], tune.t_bounds[1], tune.eta_bounds[0], tune.eta_bounds[1],
            J_CODES[tune.j_function], scenario.max_iter,
            {"none": 0, "balanced": 1, "target": 2}[scenario.no_mle_fallback], rng.bit_generator, keep_state,
        )
        gamma = out["gamma"]
        if scenario.contrast is None and out["covered"] is not None:
            gamma = out["theta"].reshape(-1)
        state = None
        if keep_state:
            state = TrialState(K)
            X, arm, y, pused, stage = out["records"]
            for i in range(len(arm)):
                state.append(tuple(X[i].tolist()), int(arm[i]), int(y[i]), tuple(pused[i].tolist()), int(stage[i]))
            state.theta_hat = out["theta"]
        return TrialResult(
            tau=out["tau"],
            censored=out["censored"],
            failed=out["failed"],
            theta_at_stop=out["theta"],
            gamma_at_stop=gamma,
            covered=out["covered"],
            correct_allocations=out["correct"],
            total_allocations=out["tau"],
            arm_counts=out["counts"],
            max_axis_at_stop=out["max_axis"],
            threshold=out["threshold"],
            correct_adaptive=out["correct_adaptive"],
            adaptive_allocations=out["adaptive"],
            state=state,
        )


def get(name, scenario):
    """Backend object for ``scenario``; ``name=None`` picks the default."""
    if callable(scenario.rule):
        return PythonBackend
    name = DEFAULT if name is None else name
    if name == "python":
        return PythonBackend
    if name == "compiled":
        if not HAVE_COMPILED:
            raise InvalidInputError("the compiled kernel is not available in this build")
        return CompiledBackend
    raise InvalidInputError(f"backend must be one of {BACKENDS}, got {name!r}")
