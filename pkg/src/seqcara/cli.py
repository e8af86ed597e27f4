"""Command-line runner: TOML config in, one summary row per scenario out.

Exit codes: 0 success, 1 invalid config or arguments, 2 some scenario's
failure rate exceeded ``failure_threshold``, 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import operator
import re
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .allocation import J_FUNCTIONS, TuningConfig
from .engine import FALLBACK_MODES, MonteCarloSummary, Scenario, default_jobs, run_monte_carlo
from .estimation import ContrastSpec, treatment_difference_contrast
from .model import TrueModel
from .numkit import InvalidInputError, MixtureNormalSpec
from .stopping import SCALES, StoppingConfig

__all__ = ["ConfigError", "RunConfig", "parse_config", "dump_config", "expand_grid", "emit_summaries",
           "format_summaries", "parse_filter", "preset_text", "main"]

SCHEMA_VERSION = 1
PRESETS = ("paper",)
CSV_COLUMNS = ("m0", "T0", "eta", "T0_varies", "eta_varies", "mean_tau", "sd_tau", "CP", "CAP",
               "censor_rate", "failure_rate", "replications", "seed")

EXIT_OK, EXIT_INVALID, EXIT_FAILURES, EXIT_IO = 0, 1, 2, 3


class ConfigError(InvalidInputError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Validated run description; every field has a plain-data form for round trips."""

    arms: tuple
    grid_m0: tuple
    grid_t0: tuple
    grid_eta0: tuple
    covariate: tuple = ((2.0, 1.0, 0.5), (-2.0, 1.0, 0.5))  # (mean, sd, weight)
    link: str = "logit"
    grid_vary_t: tuple = (False,)
    grid_vary_eta: tuple = (False,)
    alpha: float = 0.05
    delta: float = 0.3
    n0: Optional[int] = None
    max_n: int = 5000
    scale: str = "total"
    contrast_kind: str = "difference"
    contrast_rows: Optional[tuple] = None
    contrast_ordering: str = "coefficient-major"
    rule: str = "utility"
    fixed_p: Optional[tuple] = None
    j_function: str = "logistic"
    t_bounds: tuple = (0.1, 10.0)
    eta_bounds: tuple = (0.0, 10.0)
    no_mle_fallback: str = "balanced"
    replications: int = 500
    master_seed: int = 20240101
    output: Optional[str] = None
    format: str = "csv"
    failure_threshold: float = 0.01
    schema_version: int = SCHEMA_VERSION
    model: TrueModel = field(init=False, repr=False, compare=False)
    contrast: Optional[ContrastSpec] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        try:
            model = TrueModel(self.arms, MixtureNormalSpec(self.covariate), self.link)
        except InvalidInputError as exc:
            raise ConfigError(f"[model] {exc}") from None
        object.__setattr__(self, "model", model)
        object.__setattr__(self, "contrast", self._build_contrast(model))
        for name, values in (("m0", self.grid_m0), ("t0", self.grid_t0), ("eta0", self.grid_eta0),
                             ("vary_t", self.grid_vary_t), ("vary_eta", self.grid_vary_eta)):
            if not values:
                raise ConfigError(f"[grid] {name} must be a non-empty list")
        if any(m < 1 for m in self.grid_m0):
            raise ConfigError("[grid] m0 values must be at least 1")
        if self.replications < 1:
            raise ConfigError(f"replications must be at least 1, got {self.replications}")
        if self.master_seed < 0:
            raise ConfigError(f"master_seed must be non-negative, got {self.master_seed}")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be 'csv' or 'json', got {self.format!r}")
        if not 0.0 <= self.failure_threshold <= 1.0:
            raise ConfigError(f"failure_threshold must lie in [0, 1], got {self.failure_threshold}")
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version {self.schema_version} is not supported (expected {SCHEMA_VERSION})")
        if self.scale not in SCALES:
            raise ConfigError(f"[stopping] scale must be one of {SCALES}, got {self.scale!r}")
        if self.j_function not in J_FUNCTIONS:
            raise ConfigError(f"[allocation] j_function must be one of {sorted(J_FUNCTIONS)}")
        if self.no_mle_fallback not in FALLBACK_MODES:
            raise ConfigError(f"[allocation] no_mle_fallback must be one of {FALLBACK_MODES}")
        try:
            StoppingConfig(self.alpha, self.delta, self.n0, None, self.max_n, self.scale)
        except InvalidInputError as exc:
            raise ConfigError(f"[stopping] {exc}") from None
        # building every scenario surfaces cross-field violations (bounds, n0 >= K m0, ...)
        expand_grid(self)

    def _build_contrast(self, model: TrueModel) -> Optional[ContrastSpec]:
        K, p = model.n_arms, model.p
        try:
            if self.contrast_kind == "full":
                return None
            if self.contrast_kind == "difference":
                return treatment_difference_contrast(K, p)
            if self.contrast_kind == "custom":
                if not self.contrast_rows:
                    raise ConfigError("[contrast] kind = 'custom' needs rows")
                if self.contrast_ordering == "coefficient-major":
                    return ContrastSpec.from_coefficient_major_rows(self.contrast_rows, K, p)
                if self.contrast_ordering == "arm-major":
                    import numpy as np
                    return ContrastSpec(np.array(self.contrast_rows, dtype=float).T)
                raise ConfigError(f"[contrast] ordering must be 'coefficient-major' or 'arm-major', "
                                  f"got {self.contrast_ordering!r}")
        except ConfigError:
            raise
        except InvalidInputError as exc:
            raise ConfigError(f"[contrast] {exc}") from None
        raise ConfigError(f"[contrast] kind must be 'difference', 'full' or 'custom', got {self.contrast_kind!r}")

    @property
    def n_scenarios(self) -> int:
        return len(expand_grid(self))


def _scenario_label(m0, t0, eta, vt, ve) -> dict:
    return {"m0": m0, "T0": t0, "eta": eta, "T0_varies": vt, "eta_varies": ve}


def expand_grid(cfg: RunConfig) -> list[Scenario]:
    """Scenarios in grid order: m0, then t0, then eta0, then (vary_t, vary_eta).

    ``vary_eta`` is skipped when ``eta0 = 0``: the varied weight is
    ``eta0 / se`` and stays zero, so the row would duplicate the fixed one.
    """
    out = []
    stopping = StoppingConfig(cfg.alpha, cfg.delta, cfg.n0, None, cfg.max_n, cfg.scale)
    for m0 in cfg.grid_m0:
        for t0 in cfg.grid_t0:
            for eta in cfg.grid_eta0:
                for vt in cfg.grid_vary_t:
                    for ve in cfg.grid_vary_eta:
                        if ve and eta == 0.0:
                            continue
                        try:
                            tuning = TuningConfig(t0, eta, vt, ve, cfg.t_bounds, cfg.eta_bounds, cfg.j_function)
                            out.append(Scenario(
                                model=cfg.model, m0=m0, tuning=tuning, stopping=stopping,
                                contrast=cfg.contrast, rule=cfg.rule, fixed_p=cfg.fixed_p,
                                no_mle_fallback=cfg.no_mle_fallback,
                                label=_scenario_label(m0, t0, eta, vt, ve)))
                        except InvalidInputError as exc:
                            raise ConfigError(f"scenario m0={m0}, t0={t0}, eta0={eta}: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_TOP = {"schema_version", "replications", "master_seed", "output", "format", "failure_threshold",
        "model", "grid", "stopping", "contrast", "allocation"}
_SECTIONS = {
    "model": {"arms", "covariate", "link"},
    "grid": {"m0", "t0", "eta0", "vary_t", "vary_eta"},
    "stopping": {"alpha", "delta", "n0", "max_n", "scale"},
    "contrast": {"kind", "rows", "ordering"},
    "allocation": {"rule", "fixed_p", "j_function", "t_bounds", "eta_bounds", "no_mle_fallback"},
}
_COMPONENT = {"weight", "mean", "sd"}


def _check_keys(where: str, table: dict, allowed: set) -> None:
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}")


def _typed(where: str, value, kind):
    ok = {
        int: lambda v: isinstance(v, int) and not isinstance(v, bool),
        float: lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        bool: lambda v: isinstance(v, bool),
        str: lambda v: isinstance(v, str),
    }[kind]
    if not ok(value):
        raise ConfigError(f"{where} must be of type {kind.__name__}, got {value!r}")
    return float(value) if kind is float else value


def _list(where: str, value, kind) -> tuple:
    if not isinstance(value, list):
        raise ConfigError(f"{where} must be a list")
    return tuple(_typed(f"{where}[{i}]", v, kind) for i, v in enumerate(value))


def _matrix(where: str, value) -> tuple:
    if not isinstance(value, list) or not all(isinstance(r, list) for r in value):
        raise ConfigError(f"{where} must be a list of lists")
    return tuple(_list(f"{where}[{i}]", r, float) for i, r in enumerate(value))


def _section(doc: dict, name: str) -> dict:
    table = doc.get(name, {})
    if not isinstance(table, dict):
        raise ConfigError(f"{name} must be a table")
    _check_keys(f"[{name}]", table, _SECTIONS[name])
    return table


def parse_config(text: str) -> RunConfig:
    """Parse and validate a TOML run description (see the README for the schema)."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None
    _check_keys("the top level", doc, _TOP)
    kw: dict = {}
    for key, kind in (("schema_version", int), ("replications", int), ("master_seed", int),
                      ("output", str), ("format", str), ("failure_threshold", float)):
        if key in doc:
            kw[key] = _typed(key, doc[key], kind)

    model = _section(doc, "model")
    if "arms" not in model:
        raise ConfigError("[model] arms is required")
    kw["arms"] = _matrix("[model] arms", model["arms"])
    if "link" in model:
        kw["link"] = _typed("[model] link", model["link"], str)
    if "covariate" in model:
        comps = model["covariate"]
        if not isinstance(comps, list) or not comps:
            raise ConfigError("[model] covariate must be a non-empty array of tables")
        parsed = []
        for i, c in enumerate(comps):
            where = f"[[model.covariate]] #{i + 1}"
            if not isinstance(c, dict):
                raise ConfigError(f"{where} must be a table")
            _check_keys(where, c, _COMPONENT)
            missing = _COMPONENT - set(c)
            if missing:
                raise ConfigError(f"{where} is missing {sorted(missing)}")
            parsed.append(tuple(_typed(f"{where} {k}", c[k], float) for k in ("mean", "sd", "weight")))
        kw["covariate"] = tuple(parsed)

    grid = _section(doc, "grid")
    for key, kind in (("m0", int), ("t0", float), ("eta0", float)):
        if key not in grid:
            raise ConfigError(f"[grid] {key} is required")
        kw[f"grid_{key}"] = _list(f"[grid] {key}", grid[key], kind)
    for key in ("vary_t", "vary_eta"):
        if key in grid:
            kw[f"grid_{key}"] = _list(f"[grid] {key}", grid[key], bool)

    stopping = _section(doc, "stopping")
    for key, kind in (("alpha", float), ("delta", float), ("n0", int), ("max_n", int), ("scale", str)):
        if key in stopping:
            kw[key] = _typed(f"[stopping] {key}", stopping[key], kind)

    contrast = _section(doc, "contrast")
    if "kind" in contrast:
        kw["contrast_kind"] = _typed("[contrast] kind", contrast["kind"], str)
    if "ordering" in contrast:
        kw["contrast_ordering"] = _typed("[contrast] ordering", contrast["ordering"], str)
    if "rows" in contrast:
        kw["contrast_rows"] = _matrix("[contrast] rows", contrast["rows"])

    alloc = _section(doc, "allocation")
    for key in ("rule", "j_function", "no_mle_fallback"):
        if key in alloc:
            kw[key] = _typed(f"[allocation] {key}", alloc[key], str)
    if "fixed_p" in alloc:
        kw["fixed_p"] = _list("[allocation] fixed_p", alloc["fixed_p"], float)
    for key in ("t_bounds", "eta_bounds"):
        if key in alloc:
            pair = _list(f"[allocation] {key}", alloc[key], float)
            if len(pair) != 2:
                raise ConfigError(f"[allocation] {key} must be [lo, hi]")
            kw[key] = pair
    if kw.get("rule", "utility") not in ("utility", "fixed"):
        raise ConfigError(f"[allocation] rule must be 'utility' or 'fixed', got {kw['rule']!r}")
    return RunConfig(**kw)


def dump_config(cfg: RunConfig) -> str:
    """TOML text that ``parse_config`` turns back into an equal ``RunConfig``."""
    doc = {
        "schema_version": cfg.schema_version,
        "replications": cfg.replications,
        "master_seed": cfg.master_seed,
        "format": cfg.format,
        "failure_threshold": cfg.failure_threshold,
    }
    if cfg.output is not None:
        doc["output"] = cfg.output
    doc["model"] = {
        "arms": [list(a) for a in cfg.arms],
        "link": cfg.link,
        "covariate": [{"weight": w, "mean": m, "sd": s} for m, s, w in cfg.covariate],
    }
    doc["grid"] = {
        "m0": list(cfg.grid_m0), "t0": list(cfg.grid_t0), "eta0": list(cfg.grid_eta0),
        "vary_t": list(cfg.grid_vary_t), "vary_eta": list(cfg.grid_vary_eta),
    }
    stopping = {"alpha": cfg.alpha, "delta": cfg.delta, "max_n": cfg.max_n, "scale": cfg.scale}
    if cfg.n0 is not None:
        stopping["n0"] = cfg.n0
    doc["stopping"] = stopping
    contrast = {"kind": cfg.contrast_kind, "ordering": cfg.contrast_ordering}
    if cfg.contrast_rows is not None:
        contrast["rows"] = [list(r) for r in cfg.contrast_rows]
    doc["contrast"] = contrast
    alloc = {"rule": cfg.rule, "j_function": cfg.j_function, "t_bounds": list(cfg.t_bounds),
             "eta_bounds": list(cfg.eta_bounds), "no_mle_fallback": cfg.no_mle_fallback}
    if cfg.fixed_p is not None:
        alloc["fixed_p"] = list(cfg.fixed_p)
    doc["allocation"] = alloc
    return tomli_w.dumps(doc)


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {PRESETS}")
    return resources.files("seqcara").joinpath("presets", f"{name}.toml").read_text()


# ---------------------------------------------------------------------------
# scenario filter: comma-separated clauses such as "m0==10, T0>=1, eta_varies==Y"
# ---------------------------------------------------------------------------

_OPS = {"==": operator.eq, "!=": operator.ne, "<=": operator.le, ">=": operator.ge,
        "<": operator.lt, ">": operator.gt}
_CLAUSE = re.compile(r"^\s*([A-Za-z_0-9]+)\s*(==|!=|<=|>=|<|>)\s*([^\s]+)\s*$")
_FILTER_KEYS = ("index", "m0", "T0", "eta", "T0_varies", "eta_varies")


def _filter_value(text: str):
    low = text.lower()
    if low in ("y", "yes", "true"):
        return True
    if low in ("n", "no", "false"):
        return False
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"cannot read filter value {text!r}") from None


def parse_filter(expr: str):
    """Predicate over ``(index, label)``; clauses are ANDed."""
    clauses = []
    for part in expr.split(","):
        if not part.strip():
            continue
        m = _CLAUSE.match(part)
        if not m:
            raise ConfigError(f"cannot parse filter clause {part.strip()!r}")
        key, op, raw = m.groups()
        if key not in _FILTER_KEYS:
            raise ConfigError(f"unknown filter key {key!r}; use one of {_FILTER_KEYS}")
        clauses.append((key, _OPS[op], _filter_value(raw)))
    if not clauses:
        raise ConfigError("empty scenario filter")

    def keep(index: int, label: dict) -> bool:
        row = dict(label, index=index)
        return all(fn(row[key], value) for key, fn, value in clauses)
    return keep


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "Y" if value else "N"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float) and math.isnan(value):
        return ""
    return f"{value:.4f}"


def _row(s: MonteCarloSummary) -> dict:
    lab = s.label
    return {
        "m0": lab.get("m0"), "T0": lab.get("T0"), "eta": lab.get("eta"),
        "T0_varies": lab.get("T0_varies"), "eta_varies": lab.get("eta_varies"),
        "mean_tau": s.mean_tau, "sd_tau": s.sd_tau,
        "CP": s.coverage_probability, "CAP": s.correct_allocation_probability,
        "censor_rate": s.censor_rate, "failure_rate": s.failure_rate,
        "replications": s.replications, "seed": s.seed,
    }


def format_summaries(summaries: Sequence[MonteCarloSummary], fmt: str = "csv") -> str:
    if not summaries:
        raise InvalidInputError("no summaries to emit")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for s in summaries:
            row = _row(s)
            writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
        return buf.getvalue()
    if fmt == "json":
        rows = []
        for s in summaries:
            row = _row(s)
            row["mean_arm_proportions"] = None if s.mean_arm_proportions is None else \
                [float(v) for v in s.mean_arm_proportions]
            rows.append(row)
        return json.dumps(rows, indent=2) + "\n"
    raise InvalidInputError(f"format must be 'csv' or 'json', got {fmt!r}")


def emit_summaries(summaries: Sequence[MonteCarloSummary], fmt: str = "csv", path: Optional[str] = None) -> None:
    """Write the table to ``path`` (stdout when ``None`` or ``"-"``); raises OSError on I/O failure."""
    text = format_summaries(summaries, fmt)
    if path is None or path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(path).write_text(text)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="seqcara", description="Monte Carlo operating characteristics of "
                                 "sequential CARA designs.")
    ap.add_argument("--config", required=True,
                    help="TOML config path, or 'preset:NAME' for a built-in config (available: paper)")
    ap.add_argument("--replications", type=int, help="override the config's replication count")
    ap.add_argument("--seed", type=int, help="override the config's master seed")
    ap.add_argument("--scenario-filter", metavar="EXPR",
                    help="comma-separated clauses over index, m0, T0, eta, T0_varies, eta_varies, e.g. 'm0==10,eta>0'")
    ap.add_argument("--format", choices=("csv", "json"), help="override the output format")
    ap.add_argument("--out", help="output path ('-' for stdout); overrides the config")
    ap.add_argument("--jobs", type=int, default=None, help="worker processes (default: available cores)")
    ap.add_argument("--backend", choices=("compiled", "python"), default=None,
                    help="trial loop implementation (default: compiled when built)")
    ap.add_argument("--print-config", action="store_true",
                    help="print the resolved config as TOML and exit")
    return ap


def _load(source: str) -> str:
    if source.startswith("preset:"):
        return preset_text(source.split(":", 1)[1])
    return Path(source).read_text()


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    err = sys.stderr
    try:
        text = _load(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=err)
        return EXIT_IO
    try:
        cfg = parse_config(text)
        overrides = {}
        if args.replications is not None:
            overrides["replications"] = args.replications
        if args.seed is not None:
            overrides["master_seed"] = args.seed
        if args.format is not None:
            overrides["format"] = args.format
        if args.out is not None:
            overrides["output"] = args.out
        if overrides:
            fields = {k: v for k, v in asdict(cfg).items() if k not in ("model", "contrast")}
            fields.update(overrides)
            cfg = RunConfig(**fields)
        if args.print_config:
            sys.stdout.write(dump_config(cfg))
            return EXIT_OK
        scenarios = expand_grid(cfg)
        ids = list(range(len(scenarios)))
        if args.scenario_filter:
            keep = parse_filter(args.scenario_filter)
            ids = [i for i, s in enumerate(scenarios) if keep(i, s.label)]
            scenarios = [scenarios[i] for i in ids]
            if not scenarios:
                raise ConfigError("the scenario filter matches no scenario")
        jobs = default_jobs() if args.jobs is None else args.jobs
        if jobs < 1:
            raise ConfigError(f"--jobs must be at least 1, got {jobs}")
    except InvalidInputError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_INVALID

    summaries = run_monte_carlo(scenarios, cfg.replications, cfg.master_seed, jobs=jobs,
                                backend=args.backend, scenario_ids=ids)
    try:
        emit_summaries(summaries, cfg.format, cfg.output)
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=err)
        return EXIT_IO
    worst = max(s.failure_rate for s in summaries)
    if worst > cfg.failure_threshold:
        print(f"error: failure rate {worst:.4f} exceeds the threshold {cfg.failure_threshold}", file=err)
        return EXIT_FAILURES
    return EXIT_OK
