"""Random agent activation and the asynchronous optimization driver."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    STREAM_INIT,
    STREAM_SCHEDULER,
    BlockVector,
    ConfigurationError,
    DivergenceError,
    EvaluationError,
    RngStream,
    agent_stream,
    axpy_block,
    validate_probs,
)
from .estimators import ESTIMATOR_KINDS, AgentState, GradientEstimate, residual_async, two_point_async
from .objectives import ObjectiveHandle

ACTIVATION_KINDS = ("categorical-step", "exponential-clocks")


@dataclass(frozen=True)
class ActivationModel:
    kind: str
    weights: tuple[float, ...]

    def __init__(self, kind: str, weights: Sequence[float]):
        if kind not in ACTIVATION_KINDS:
            raise ConfigurationError(f"unknown activation model {kind!r}; expected one of {ACTIVATION_KINDS}")
        w = tuple(float(v) for v in weights)
        if kind == "categorical-step":
            validate_probs(w, strictly_positive=True)
        elif not w or any(not (v > 0 and math.isfinite(v)) for v in w):
            raise ConfigurationError(f"clock rates must be positive and finite, got {list(w)}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "weights", w)

    @classmethod
    def categorical(cls, probs: Sequence[float]) -> "ActivationModel":
        return cls("categorical-step", probs)

    @classmethod
    def clocks(cls, rates: Sequence[float]) -> "ActivationModel":
        return cls("exponential-clocks", rates)

    @classmethod
    def uniform(cls, num_agents: int) -> "ActivationModel":
        return cls("categorical-step", [1.0 / num_agents] * num_agents)

    @property
    def num_agents(self) -> int:
        return len(self.weights)

    @property
    def probs(self) -> np.ndarray:
        """Per-step activation distribution (normalised rates for clocks)."""
        w = np.asarray(self.weights)
        return w / w.sum()

    @property
    def p_min(self) -> float:
        return float(self.probs.min())

    def process(self, rng: RngStream) -> "ActivationProcess":
        return ActivationProcess(self, rng)


class ActivationProcess:
    """Stateful sampler of activations for one run.

    Clock mode keeps one pending event time per agent; the earliest fires and the
    firing agent draws a fresh exponential waiting time.
    """

    def __init__(self, model: ActivationModel, rng: RngStream):
        self.model = model
        self.rng = rng
        self._cdf = np.cumsum(model.probs)
        self._next_times = None
        if model.kind == "exponential-clocks":
            self._rates = np.asarray(model.weights)
            self._next_times = rng.exponential(1.0 / self._rates)

    def next(self) -> tuple[int, Optional[float]]:
        if self._next_times is None:
            idx = int(np.searchsorted(self._cdf, self.rng.random() * self._cdf[-1], side="right"))
            return min(idx, len(self._cdf) - 1), None
        agent = int(np.argmin(self._next_times))
        t = float(self._next_times[agent])
        self._next_times[agent] = t + self.rng.exponential(1.0 / self._rates[agent])
        return agent, t


def next_activation(process: ActivationProcess) -> tuple[int, Optional[float]]:
    return process.next()


def activation_frequencies(model: ActivationModel, events: int, rng: RngStream) -> np.ndarray:
    counts = np.zeros(model.num_agents, dtype=np.int64)
    proc = model.process(rng)
    for _ in range(events):
        counts[proc.next()[0]] += 1
    return counts / events


def theorem1_schedule(L0: float, n_bar: int, p_min: float, T: int, variant: str = "statement") -> tuple[float, float]:
    """Step size and smoothing parameter that give the O(n^3 T^(-1/3)) rate.

    ``variant="statement"``: alpha = sqrt(p_min)/T^(2/3), mu = 2 L0 sqrt(n)/T^(1/6).
    ``variant="proof"``: alpha = sqrt(p_min)/(sqrt(n) T^(2/3)), mu = 2 L0/T^(1/6).
    """
    for name, v in (("L0", L0), ("n_bar", n_bar), ("p_min", p_min), ("T", T)):
        if not v > 0:
            raise ConfigurationError(f"{name} must be positive, got {v}")
    if variant == "statement":
        return math.sqrt(p_min) / T ** (2.0 / 3.0), 2.0 * L0 * math.sqrt(n_bar) / T ** (1.0 / 6.0)
    if variant == "proof":
        return math.sqrt(p_min) / (math.sqrt(n_bar) * T ** (2.0 / 3.0)), 2.0 * L0 / T ** (1.0 / 6.0)
    raise ConfigurationError(f"unknown schedule variant {variant!r}")


@dataclass
class RunConfig:
    estimator: str = "residual-async"
    max_queries: Optional[int] = None
    max_iterations: Optional[int] = None
    schedule: str = "manual"
    alpha: float | Sequence[float] = 0.5
    mu: float | Sequence[float] = 0.1
    schedule_variant: str = "statement"
    seed: int = 0
    trial_id: int = 0
    record_every: int = 1
    two_point_baseline: str = "fresh"
    record_grad_norm: bool = False

    def __post_init__(self):
        if self.estimator not in ESTIMATOR_KINDS:
            raise ConfigurationError(f"unknown estimator {self.estimator!r}; expected one of {ESTIMATOR_KINDS}")
        if (self.max_queries is None) == (self.max_iterations is None):
            raise ConfigurationError("exactly one of max_queries / max_iterations must be set")
        budget = self.max_queries if self.max_queries is not None else self.max_iterations
        if budget < 0:
            raise ConfigurationError("budget must be non-negative")
        if self.record_every < 1:
            raise ConfigurationError("record_every must be >= 1")
        if self.schedule not in ("manual", "theorem1"):
            raise ConfigurationError(f"unknown schedule {self.schedule!r}")
        if self.two_point_baseline not in ("fresh", "alternating"):
            raise ConfigurationError(f"unknown two_point_baseline {self.two_point_baseline!r}")

    @property
    def queries_per_activation(self) -> int:
        if self.estimator == "two-point-async" and self.two_point_baseline == "fresh":
            return 2
        return 1

    def planned_iterations(self) -> int:
        if self.max_iterations is not None:
            return self.max_iterations
        return self.max_queries // self.queries_per_activation


@dataclass
class SimulationClock:
    iteration: int = 0
    queries: int = 0
    wall_events: Optional[list] = None


@dataclass
class RunResult:
    x: BlockVector
    clock: SimulationClock
    states: list
    alpha: np.ndarray
    mu: np.ndarray
    diverged: bool = False
    error: Optional[str] = None


# recorder(trial_id, iteration, queries, agent, loss, grad_norm_sq)
Recorder = Callable[[int, int, int, int, float, Optional[float]], None]
# observer(iteration, agent, x_before_update, estimate_or_None)
Observer = Callable[[int, int, BlockVector, Optional[GradientEstimate]], None]


def _per_agent(value, n: int, name: str) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=np.float64), (n,)).copy()
    if np.any(arr <= 0):
        raise ConfigurationError(f"{name} must be positive")
    return arr


def resolve_step_sizes(obj: ObjectiveHandle, model: ActivationModel, config: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    n = obj.layout.num_blocks
    if config.schedule == "manual":
        return _per_agent(config.alpha, n, "alpha"), _per_agent(config.mu, n, "mu")
    if obj.metadata.lipschitz_L0 is None:
        raise ConfigurationError("theorem1 schedule requires objective metadata L0")
    if not obj.layout.is_uniform:
        raise ConfigurationError("theorem1 schedule requires equal block dimensions")
    T = max(config.planned_iterations(), 1)
    alpha, mu = theorem1_schedule(obj.metadata.lipschitz_L0, obj.layout.common_dim, model.p_min, T, config.schedule_variant)
    return np.full(n, alpha), np.full(n, mu)


def initial_point(obj: ObjectiveHandle, seed: int) -> BlockVector:
    """Standard-Gaussian initial weights drawn from the trial's init stream."""
    return BlockVector(obj.layout, RngStream(seed, STREAM_INIT).standard_normal(obj.layout.total_dim))


def run_algorithm1(
    obj: ObjectiveHandle,
    model: ActivationModel,
    config: RunConfig,
    recorder: Optional[Recorder] = None,
    x0: Optional[BlockVector] = None,
    observer: Optional[Observer] = None,
) -> RunResult:
    """Run asynchronous zeroth-order descent until the budget is exhausted.

    Each activation samples one agent, lets it build its block gradient estimate from
    function values only, and moves that agent's block by ``-alpha_i * G``. Bootstrap
    activations count toward the budget but move nothing. The recorder fires once per
    crossed multiple of ``record_every`` queries with the noiseless loss of the
    current iterate.
    """
    if model.num_agents != obj.layout.num_blocks:
        raise ConfigurationError(f"activation model has {model.num_agents} agents, layout has {obj.layout.num_blocks}")
    cost = config.queries_per_activation
    if config.max_queries is not None and config.max_queries % cost:
        raise ConfigurationError(f"query budget {config.max_queries} is not a multiple of {cost} queries per activation")
    alpha, mu = resolve_step_sizes(obj, model, config)
    x = initial_point(obj, config.seed) if x0 is None else x0
    if x.layout != obj.layout:
        raise ConfigurationError("initial point layout does not match objective")

    states = [AgentState(i, float(alpha[i]), float(mu[i])) for i in range(obj.layout.num_blocks)]
    agent_rngs = [agent_stream(config.seed, i) for i in range(obj.layout.num_blocks)]
    process = model.process(RngStream(config.seed, STREAM_SCHEDULER))
    clock = SimulationClock(wall_events=[] if model.kind == "exponential-clocks" else None)
    n_iter = config.planned_iterations()
    next_record = config.record_every
    start_queries = obj.query_count

    if config.estimator == "residual-async":
        def estimate(state, rng, k):
            return residual_async(obj, x, state, rng, iteration=k, trial=config.trial_id)
    else:
        def estimate(state, rng, k):
            return two_point_async(obj, x, state, rng, iteration=k, trial=config.trial_id, baseline=config.two_point_baseline)

    try:
        for k in range(n_iter):
            agent, t = process.next()
            if clock.wall_events is not None:
                clock.wall_events.append((t, agent))
            est, states[agent] = estimate(states[agent], agent_rngs[agent], k)
            if observer is not None:
                observer(k, agent, x, est or None)
            if est:
                x = axpy_block(x, -states[agent].alpha * est.scale, est.direction)
            clock.iteration = k + 1
            clock.queries = obj.query_count - start_queries
            while recorder is not None and clock.queries >= next_record:
                g2 = None
                if config.record_grad_norm:
                    g = obj.analytic_gradient(x).values
                    g2 = float(g @ g)
                recorder(config.trial_id, clock.iteration, next_record, agent, obj.value(x), g2)
                next_record += config.record_every
    except (DivergenceError, EvaluationError) as err:
        clock.queries = obj.query_count - start_queries
        return RunResult(x, clock, states, alpha, mu, diverged=True, error=str(err))
    return RunResult(x, clock, states, alpha, mu)


__all__ = [
    "ACTIVATION_KINDS",
    "ActivationModel",
    "ActivationProcess",
    "RunConfig",
    "RunResult",
    "SimulationClock",
    "activation_frequencies",
    "initial_point",
    "next_activation",
    "resolve_step_sizes",
    "run_algorithm1",
    "theorem1_schedule",
]
