"""Multi-trial experiment runner with CSV traces and cross-trial summaries.

Configuration files are INI-style: a handful of sections, flat ``key = value`` pairs
inside each. Unknown sections or keys are rejected.
"""
from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import STREAM_DATASET, STREAM_NOISE, BlockLayout, ConfigurationError, RngStream
from .estimators import ESTIMATOR_KINDS
from .objectives import (
    NOISE_KINDS,
    NoiseSpec,
    ObjectiveHandle,
    QuadraticObjective,
    benchmark_handle,
    make_benchmark,
    quadratic_handle,
)
from .scheduler import ACTIVATION_KINDS, ActivationModel, RunConfig, run_algorithm1

log = logging.getLogger(__name__)

TRACE_HEADER = ["trial", "estimator", "queries", "iteration", "agent", "loss", "grad_norm_sq"]
SUMMARY_HEADER = ["estimator", "queries", "mean_loss", "std_loss", "trials"]

# section -> {key: parser}
_LIST = lambda s: [v.strip() for v in s.split(",") if v.strip()]  # noqa: E731
_FLOATS = lambda s: [float(v) for v in _LIST(s)]  # noqa: E731
_INTS = lambda s: [int(v) for v in _LIST(s)]  # noqa: E731


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


CONFIG_KEYS = {
    "objective": {
        "kind": str,
        "agents": int,
        "samples": int,
        "input_dim": int,
        "quadratic_file": str,
        "quadratic_dims": _INTS,
        "quadratic_seed": int,
        "quadratic_condition": float,
        "lipschitz_l0": float,
    },
    "run": {
        "estimators": _LIST,
        "budget_queries": int,
        "budget_iterations": int,
        "schedule": str,
        "schedule_variant": str,
        "alpha": _FLOATS,
        "mu": _FLOATS,
        "trials": int,
        "seed": int,
        "record_every": int,
        "two_point_baseline": str,
        "record_grad_norm": _bool,
    },
    "activation": {"kind": str, "weights": _FLOATS},
    "noise": {"kind": str, "variance_bound": float},
    "output": {"path": str},
}


@dataclass
class ExperimentConfig:
    objective: str = "benchmark"
    agents: int = 5
    samples: int = 20
    input_dim: int = 10
    quadratic_file: Optional[str] = None
    quadratic_dims: list = field(default_factory=lambda: [2, 2])
    quadratic_seed: int = 0
    quadratic_condition: float = 10.0
    lipschitz_l0: Optional[float] = None
    estimators: list = field(default_factory=lambda: ["residual-async", "two-point-async"])
    budget_queries: Optional[int] = 10000
    budget_iterations: Optional[int] = None
    schedule: str = "manual"
    schedule_variant: str = "statement"
    alpha: list = field(default_factory=lambda: [0.5])
    mu: list = field(default_factory=lambda: [0.1])
    trials: int = 10
    seed: int = 0
    record_every: int = 100
    two_point_baseline: str = "fresh"
    record_grad_norm: bool = False
    activation: str = "categorical-step"
    activation_weights: Optional[list] = None
    noise: Optional[str] = None
    noise_variance: float = 0.0
    output: str = "out"

    def validate(self) -> "ExperimentConfig":
        if self.objective not in ("benchmark", "quadratic"):
            raise ConfigurationError(f"objective.kind: unknown objective {self.objective!r}")
        if self.trials < 1:
            raise ConfigurationError("run.trials: must be >= 1")
        if not self.estimators:
            raise ConfigurationError("run.estimators: at least one estimator is required")
        for name in self.estimators:
            if name not in ESTIMATOR_KINDS:
                raise ConfigurationError(f"run.estimators: unknown estimator {name!r}; supported: {', '.join(ESTIMATOR_KINDS)}")
        if (self.budget_queries is None) == (self.budget_iterations is None):
            raise ConfigurationError("run.budget_queries / run.budget_iterations: set exactly one")
        if self.activation not in ACTIVATION_KINDS:
            raise ConfigurationError(f"activation.kind: unknown model {self.activation!r}")
        if self.objective == "quadratic" and self.quadratic_file and not Path(self.quadratic_file).is_file():
            raise ConfigurationError(f"objective.quadratic_file: {self.quadratic_file} does not exist")
        if self.record_every < 1:
            raise ConfigurationError("run.record_every: must be >= 1")
        if self.noise is not None and self.noise not in NOISE_KINDS:
            raise ConfigurationError(f"noise.kind: unknown noise {self.noise!r}; expected none or one of {NOISE_KINDS}")
        return self

    @property
    def num_agents(self) -> int:
        if self.objective == "benchmark":
            return self.agents
        if self.quadratic_file:
            return len(_load_quadratic_file(self.quadratic_file)[1].block_dims)
        return len(self.quadratic_dims)


_FIELD_FOR = {
    ("objective", "kind"): "objective",
    ("activation", "kind"): "activation",
    ("activation", "weights"): "activation_weights",
    ("noise", "kind"): "noise",
    ("noise", "variance_bound"): "noise_variance",
    ("output", "path"): "output",
}


def parse_config(text: str, base_dir: Optional[Path] = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__unused__")
    parser.optionxform = str.lower
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigurationError(f"cannot parse config: {err}") from err
    values = {}
    for section in parser.sections():
        if section not in CONFIG_KEYS:
            raise ConfigurationError(f"[{section}]: unknown section; expected one of {sorted(CONFIG_KEYS)}")
        for key, raw in parser.items(section):
            if key not in CONFIG_KEYS[section]:
                raise ConfigurationError(f"{section}.{key}: unknown key")
            try:
                value = CONFIG_KEYS[section][key](raw)
            except ValueError as err:
                raise ConfigurationError(f"{section}.{key}: {err}") from err
            values[_FIELD_FOR.get((section, key), key)] = value
    if "budget_iterations" in values and "budget_queries" not in values:
        values["budget_queries"] = None
    if values.get("noise") == "none":
        values["noise"] = None
    if base_dir is not None:
        for key in ("quadratic_file",):
            if key in values and not os.path.isabs(values[key]):
                values[key] = str(base_dir / values[key])
    return ExperimentConfig(**values).validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"--config: {path} does not exist")
    return parse_config(path.read_text(), base_dir=path.resolve().parent)


def _load_quadratic_file(path):
    with open(path) as fh:
        data = json.load(fh)
    quad = QuadraticObjective(data["A"], data.get("b"), data.get("c", 0.0))
    return quad, BlockLayout(data["block_dims"]), data.get("lipschitz_l0")


def trial_seed(base_seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(trial)]).generate_state(1, np.uint64)[0] >> 1)


def build_objective(cfg: ExperimentConfig, seed: int) -> ObjectiveHandle:
    noise = NoiseSpec(cfg.noise, cfg.noise_variance) if cfg.noise else None
    extra = {"noise": noise, "noise_rng": RngStream(seed, STREAM_NOISE)} if noise else {}
    if cfg.objective == "benchmark":
        return benchmark_handle(make_benchmark(cfg.agents, cfg.samples, cfg.input_dim, RngStream(seed, STREAM_DATASET)), **extra)
    if cfg.quadratic_file:
        quad, layout, L0 = _load_quadratic_file(cfg.quadratic_file)
        L0 = cfg.lipschitz_l0 or L0
    else:
        layout = BlockLayout(cfg.quadratic_dims)
        quad = QuadraticObjective.random(layout.total_dim, RngStream(cfg.quadratic_seed, STREAM_DATASET), cfg.quadratic_condition)
        L0 = cfg.lipschitz_l0
    return quadratic_handle(quad, layout, L0=L0, **extra)


def activation_model(cfg: ExperimentConfig) -> ActivationModel:
    n = cfg.num_agents
    if cfg.activation_weights is not None:
        if len(cfg.activation_weights) != n:
            raise ConfigurationError(f"activation.weights: expected {n} values, got {len(cfg.activation_weights)}")
        return ActivationModel(cfg.activation, cfg.activation_weights)
    if cfg.activation == "categorical-step":
        return ActivationModel.uniform(n)
    return ActivationModel.clocks([1.0] * n)


def _scalar_or_list(v):
    return v[0] if len(v) == 1 else list(v)


def _format(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def run_trial(cfg: ExperimentConfig, estimator: str, trial: int) -> dict:
    """Run one (estimator, trial) pair; returns CSV text and status."""
    seed = trial_seed(cfg.seed, trial)
    obj = build_objective(cfg, seed)
    run_cfg = RunConfig(
        estimator=estimator,
        max_queries=cfg.budget_queries,
        max_iterations=cfg.budget_iterations,
        schedule=cfg.schedule,
        schedule_variant=cfg.schedule_variant,
        alpha=_scalar_or_list(cfg.alpha),
        mu=_scalar_or_list(cfg.mu),
        seed=seed,
        trial_id=trial,
        record_every=cfg.record_every,
        two_point_baseline=cfg.two_point_baseline,
        record_grad_norm=cfg.record_grad_norm,
    )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_HEADER)

    def recorder(trial_id, iteration, queries, agent, loss, grad_norm_sq):
        writer.writerow([trial_id, estimator, queries, iteration, agent, _format(float(loss)), _format(grad_norm_sq)])

    result = run_algorithm1(obj, activation_model(cfg), run_cfg, recorder=recorder)
    return {
        "estimator": estimator,
        "trial": trial,
        "csv": buf.getvalue(),
        "diverged": result.diverged,
        "error": result.error,
        "queries": result.clock.queries,
        "iterations": result.clock.iteration,
        "query_count": obj.query_count,
    }


def _run_trial_args(args):
    return run_trial(*args)


def read_trace(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summarize(traces: dict, trial_status: dict) -> list[list]:
    """Per estimator and query grid point: mean and population std of the loss over
    non-diverged trials."""
    rows = []
    for estimator in sorted(traces, key=lambda e: ESTIMATOR_KINDS.index(e) if e in ESTIMATOR_KINDS else 99):
        by_query: dict[int, list] = {}
        for trial, trace in sorted(traces[estimator].items()):
            if trial_status[(estimator, trial)]["diverged"]:
                continue
            for row in trace:
                by_query.setdefault(int(row["queries"]), []).append(float(row["loss"]))
        for q in sorted(by_query):
            vals = np.array(by_query[q])
            rows.append([estimator, q, repr(float(vals.mean())), repr(float(vals.std())), len(vals)])
    return rows


@dataclass
class ExperimentResult:
    out_dir: Path
    summary: list
    status: dict
    traces: dict

    def final_losses(self, estimator: str) -> dict:
        """Loss at the last recorded grid point of every non-diverged trial."""
        out = {}
        for trial, trace in self.traces[estimator].items():
            if trace and not self.status[(estimator, trial)]["diverged"]:
                out[trial] = float(trace[-1]["loss"])
        return out


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs: int = 1) -> ExperimentResult:
    cfg.validate()
    out = Path(out_dir or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, est, trial) for est in cfg.estimators for trial in range(cfg.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_trial_args, tasks))
    else:
        results = [run_trial(*t) for t in tasks]

    status = {}
    traces: dict = {est: {} for est in cfg.estimators}
    for res in sorted(results, key=lambda r: (cfg.estimators.index(r["estimator"]), r["trial"])):
        path = out / f"trace_{res['estimator']}_{res['trial']}.csv"
        path.write_text(res["csv"])
        status[(res["estimator"], res["trial"])] = {k: res[k] for k in ("diverged", "error", "queries", "iterations", "query_count")}
        traces[res["estimator"]][res["trial"]] = list(csv.DictReader(io.StringIO(res["csv"])))
        if res["diverged"]:
            log.warning("trial %d of %s diverged: %s", res["trial"], res["estimator"], res["error"])

    summary = summarize(traces, status)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        w.writerows(summary)
    result = ExperimentResult(out, summary, status, traces)
    (out / "report.txt").write_text(experiment_report(cfg, result))
    return result


def experiment_report(cfg: ExperimentConfig, result: ExperimentResult) -> str:
    lines = [
        f"objective = {cfg.objective}",
        f"estimators = {','.join(cfg.estimators)}",
        f"trials = {cfg.trials}",
        f"seed = {cfg.seed}",
        f"budget_queries = {_format(cfg.budget_queries)}",
        f"budget_iterations = {_format(cfg.budget_iterations)}",
        f"record_every = {cfg.record_every}",
    ]
    finals = {}
    for est in cfg.estimators:
        diverged = sum(1 for (e, _), s in result.status.items() if e == est and s["diverged"])
        finals[est] = result.final_losses(est)
        vals = np.array(list(finals[est].values()))
        lines.append(f"{est}.diverged_trials = {diverged}")
        if vals.size:
            lines.append(f"{est}.final_mean_loss = {float(vals.mean())!r}")
            lines.append(f"{est}.final_std_loss = {float(vals.std())!r}")
    if len(cfg.estimators) == 2:
        a, b = cfg.estimators
        common = sorted(set(finals[a]) & set(finals[b]))
        wins = sum(finals[a][t] < finals[b][t] for t in common)
        lines.append(f"paired_trials = {len(common)}")
        lines.append(f"{a}.wins_vs_{b} = {wins}")
    return "\n".join(lines) + "\n"
