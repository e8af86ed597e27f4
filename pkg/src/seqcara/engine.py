"""Single sequential trials and the Monte Carlo replication harness."""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import _backend
from .allocation import TuningConfig
from .estimation import ArmData, ContrastSpec, treatment_difference_contrast
from .model import TrueModel, paper_model
from .numkit import InvalidInputError, RngStream, stream_id_for
from .stopping import StoppingConfig

__all__ = [
    "Scenario",
    "TrialState",
    "TrialResult",
    "MonteCarloSummary",
    "paper_scenario",
    "paper_grid",
    "run_trial",
    "run_replications",
    "run_monte_carlo",
    "summarize",
]

RuleSpec = Union[str, Callable]
FALLBACK_MODES = ("balanced", "target", "none")


@dataclass(frozen=True)
class Scenario:
    """Everything one simulated trial needs apart from its random stream.

    ``rule`` is ``"utility"`` (the built-in two-arm rule), ``"fixed"`` (constant
    probabilities ``fixed_p``) or a vectorised callable ``rule(theta, xs)``;
    callables always run on the pure-Python backend.

    ``no_mle_fallback`` governs subjects that arrive while some arm's fit
    needed the ridge.  Such an arm has no finite MLE and a degenerate plug-in
    information, so the utility rule would starve it.  ``"balanced"`` (default)
    randomises equally, ``"target"`` follows the ethical target (equal
    probabilities when ``eta_n = 0``), ``"none"`` keeps the utility rule.
    """

    model: TrueModel = field(default_factory=paper_model)
    m0: int = 10
    tuning: TuningConfig = field(default_factory=TuningConfig)
    stopping: StoppingConfig = field(default_factory=StoppingConfig)
    contrast: Optional[ContrastSpec] = field(default_factory=treatment_difference_contrast)
    rule: RuleSpec = "utility"
    fixed_p: Optional[tuple] = None
    max_iter: int = 100
    no_mle_fallback: str = "balanced"
    label: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.m0 < 1:
            raise InvalidInputError(f"m0 must be at least 1, got {self.m0}")
        K, p = self.model.n_arms, self.model.p
        if self.contrast is not None and self.contrast.h_matrix.shape[0] != K * p:
            raise InvalidInputError(f"contrast needs {K * p} rows, got {self.contrast.h_matrix.shape[0]}")
        if self.rule == "utility" and K != 2:
            raise InvalidInputError("the utility rule is implemented for two arms")
        if self.rule == "fixed":
            fp = tuple(float(v) for v in (self.fixed_p or ()))
            if len(fp) != K or any(not 0.0 < v < 1.0 for v in fp) or abs(math.fsum(fp) - 1.0) > 1e-9:
                raise InvalidInputError("fixed_p must be K probabilities in (0, 1) summing to 1")
            object.__setattr__(self, "fixed_p", fp)
        elif not (self.rule == "utility" or callable(self.rule)):
            raise InvalidInputError(f"unknown allocation rule {self.rule!r}")
        if self.no_mle_fallback not in FALLBACK_MODES:
            raise InvalidInputError(f"no_mle_fallback must be one of {FALLBACK_MODES}")
        self.resolved_stopping()

    @property
    def dof(self) -> int:
        return self.contrast.h if self.contrast is not None else self.model.n_arms * self.model.p

    def resolved_stopping(self) -> StoppingConfig:
        return self.stopping.resolved(self.model.n_arms, self.m0, self.dof)


def paper_scenario(m0: int = 10, t0: float = 1.0, eta0: float = 1.0, vary_t: bool = False,
                   vary_eta: bool = False, delta: float = 0.3, alpha: float = 0.05, **stopping) -> Scenario:
    """The two-arm logistic setting with the coefficient-difference contrast."""
    return Scenario(
        model=paper_model(),
        m0=m0,
        tuning=TuningConfig(t0=t0, eta0=eta0, vary_t=vary_t, vary_eta=vary_eta),
        stopping=StoppingConfig(alpha=alpha, delta=delta, **stopping),
        label={"m0": m0, "T0": t0, "eta": eta0, "T0_varies": vary_t, "eta_varies": vary_eta},
    )


def paper_grid(m0s=(5, 10, 15), t0s=(0.5, 1.0, 2.0), etas=(0.0, 0.1, 1.0), **kwargs) -> list[Scenario]:
    """Scenario rows in grid order: ``m0``, then ``T0``, then ``eta``, then the flags.

    ``eta = 0`` has no entropy term, so only the ``T0`` flag is varied there.
    """
    out = []
    for m0 in m0s:
        for t0 in t0s:
            for eta in etas:
                flags = [(False, False), (True, False)] if eta == 0.0 else \
                    [(False, False), (False, True), (True, False), (True, True)]
                for vt, ve in flags:
                    out.append(paper_scenario(m0, t0, eta, vt, ve, **kwargs))
    return out


@dataclass
class TrialState:
    """History of one trial: ``(covariate, arm, response, p used, stage)`` records."""

    n_arms: int
    records: list = field(default_factory=list)
    arms: list = field(default_factory=list)
    arm_counts: list = field(default_factory=list)
    theta_hat: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.arms:
            self.arms = [ArmData() for _ in range(self.n_arms)]
            self.arm_counts = [0] * self.n_arms

    @property
    def n(self) -> int:
        return len(self.records)

    def append(self, x, arm: int, y: int, p_used, stage: int) -> None:
        self.records.append((tuple(x), arm, y, tuple(p_used), stage))
        self.arms[arm].append(x, y)
        self.arm_counts[arm] += 1


@dataclass
class TrialResult:
    tau: int
    censored: bool
    failed: bool
    theta_at_stop: np.ndarray
    gamma_at_stop: Optional[np.ndarray]
    covered: Optional[bool]
    correct_allocations: int
    total_allocations: int
    arm_counts: np.ndarray
    max_axis_at_stop: float
    threshold: float
    correct_adaptive: int = 0
    adaptive_allocations: int = 0
    state: Optional[TrialState] = None

    def same_outcome(self, other: "TrialResult") -> bool:
        """Exact equality on everything but the optional state."""
        def eq(a, b):
            if a is None or b is None:
                return a is b
            return np.array_equal(np.asarray(a), np.asarray(b), equal_nan=True)
        return all(eq(getattr(self, f), getattr(other, f)) for f in (
            "tau", "censored", "failed", "theta_at_stop", "gamma_at_stop", "covered",
            "correct_allocations", "total_allocations", "arm_counts", "max_axis_at_stop", "threshold",
            "correct_adaptive", "adaptive_allocations"))


@dataclass
class MonteCarloSummary:
    scenario_id: int
    replications: int
    mean_tau: Optional[float]
    sd_tau: Optional[float]
    coverage_probability: Optional[float]
    correct_allocation_probability: Optional[float]
    censor_rate: float
    failure_rate: float
    mean_arm_proportions: Optional[np.ndarray]
    label: dict = field(default_factory=dict)
    seed: Optional[int] = None


def run_trial(scenario: Scenario, rng: RngStream, backend: Optional[str] = None,
              keep_state: bool = False) -> TrialResult:
    """Run one trial: restricted-randomisation burn-in, then adaptive allocation until the rule stops.

    ``backend`` is ``"compiled"``, ``"python"`` or ``None`` (the import-time default).
    """
    return _backend.get(backend, scenario).run_trial(scenario, rng, keep_state)


def run_replications(scenario: Scenario, scenario_index: int, replications: Sequence[int],
                     master_seed: int, backend: Optional[str] = None) -> list[TrialResult]:
    impl = _backend.get(backend, scenario)
    return [impl.run_trial(scenario, RngStream(master_seed, stream_id_for(scenario_index, r)), False)
            for r in replications]


def _task(args):
    scenario, s, reps, seed, backend = args
    return s, reps[0], run_replications(scenario, s, reps, seed, backend)


def run_monte_carlo(scenarios: Sequence[Scenario], replications: int, master_seed: int,
                    jobs: int = 1, backend: Optional[str] = None,
                    chunk: int = 50, scenario_ids: Optional[Sequence[int]] = None) -> list[MonteCarloSummary]:
    """Replicate every scenario; replication ``r`` of scenario ``s`` uses stream ``(s, r)``.

    ``scenario_ids`` overrides ``s`` (default: position in ``scenarios``), so a
    filtered subset of a grid reproduces the rows of the full run.  Results are
    reduced in ``(scenario, replication)`` order and do not depend on ``jobs``.
    """
    if replications < 1:
        raise InvalidInputError("replications must be at least 1")
    ids = list(range(len(scenarios))) if scenario_ids is None else [int(i) for i in scenario_ids]
    if len(ids) != len(scenarios) or len(set(ids)) != len(ids) or min(ids, default=0) < 0:
        raise InvalidInputError("scenario_ids must be distinct non-negative integers, one per scenario")
    tasks = []
    for s, sc in zip(ids, scenarios):
        for start in range(0, replications, chunk):
            tasks.append((sc, s, list(range(start, min(start + chunk, replications))), master_seed, backend))
    if any(callable(sc.rule) for sc in scenarios):
        jobs = 1
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(_task, tasks))
    else:
        done = [_task(t) for t in tasks]
    done.sort(key=lambda item: (item[0], item[1]))
    per_scenario: dict[int, list] = {s: [] for s in ids}
    for s, _, results in done:
        per_scenario[s].extend(results)
    out = []
    for s, sc in zip(ids, scenarios):
        summary = summarize(per_scenario[s], scenario_id=s, label=sc.label)
        summary.seed = master_seed
        out.append(summary)
    return out


def summarize(results: Sequence[TrialResult], scenario_id: int = 0, label: Optional[dict] = None,
              cap_scope: str = "adaptive") -> MonteCarloSummary:
    """Aggregate replications.

    Failed fits are excluded everywhere except ``failure_rate``; censored runs
    only enter ``censor_rate``.  CAP pools allocations across replications;
    ``cap_scope="adaptive"`` (the default) counts only subjects allocated after
    the burn-in, ``"all"`` counts every subject.
    """
    if not results:
        raise InvalidInputError("nothing to summarise")
    if cap_scope not in ("adaptive", "all"):
        raise InvalidInputError(f"cap_scope must be 'adaptive' or 'all', got {cap_scope!r}")
    total = len(results)
    valid = [r for r in results if not r.failed]
    done = [r for r in valid if not r.censored]
    censor_rate = (len(valid) - len(done)) / len(valid) if valid else 0.0
    failure_rate = (total - len(valid)) / total
    if not done:
        return MonteCarloSummary(scenario_id, total, None, None, None, None, censor_rate if valid else 1.0,
                                 failure_rate, None, dict(label or {}))
    taus = np.array([r.tau for r in done], dtype=float)
    sd = float(np.std(taus, ddof=1)) if len(taus) > 1 else 0.0
    cp = sum(1 for r in done if r.covered) / len(done)
    if cap_scope == "adaptive":
        num, den = sum(r.correct_adaptive for r in done), sum(r.adaptive_allocations for r in done)
    else:
        num, den = sum(r.correct_allocations for r in done), sum(r.total_allocations for r in done)
    cap = num / den if den else None
    props = np.mean([r.arm_counts / r.tau for r in done], axis=0)
    return MonteCarloSummary(scenario_id, total, float(taus.mean()), sd, cp, cap, censor_rate,
                             failure_rate, props, dict(label or {}))


def default_jobs() -> int:
    return os.cpu_count() or 1


def with_delta(scenario: Scenario, delta: float) -> Scenario:
    return replace(scenario, stopping=replace(scenario.stopping, delta=delta))
