"""Zeroth-order gradient estimators.

Centralized forms perturb the full decision vector. The asynchronous forms perturb
only the block of the activated agent and keep per-agent memory in ``AgentState``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import (
    BlockVector,
    ConfigurationError,
    DivergenceError,
    PerturbationDirection,
    RngStream,
    axpy_block,
    sample_block_gaussian,
)
from .objectives import ObjectiveHandle

MAX_ESTIMATE_NORM = 1e12

ESTIMATOR_KINDS = ("residual-async", "two-point-async")


@dataclass(frozen=True)
class AgentState:
    agent: int
    alpha: float
    mu: float
    last_value: Optional[float] = None
    last_direction: Optional[PerturbationDirection] = None
    last_update_iter: Optional[int] = None
    bootstrap_done: bool = False

    def __post_init__(self):
        if not self.alpha > 0 or not self.mu > 0:
            raise ConfigurationError(f"agent {self.agent}: alpha and mu must be positive")


@dataclass(frozen=True)
class GradientEstimate:
    direction: PerturbationDirection
    scale: float

    @property
    def block(self) -> np.ndarray:
        return self.scale * self.direction.block_values

    @property
    def as_full(self) -> BlockVector:
        return BlockVector(self.direction.layout, self.scale * self.direction.as_full_vector())

    @property
    def agent(self) -> int:
        return self.direction.agent

    def squared_norm(self) -> float:
        return self.scale**2 * self.direction.squared_norm()


class Bootstrap:
    """Marker returned when a query only seeds an agent's memory."""

    def __repr__(self):
        return "BOOTSTRAP"

    def __bool__(self):
        return False


BOOTSTRAP = Bootstrap()


def _check_mu(mu: float) -> None:
    if not mu > 0:
        raise ConfigurationError(f"smoothing parameter must be positive, got {mu}")


def _guard(estimate: GradientEstimate, iteration=None, trial=None) -> GradientEstimate:
    norm = abs(estimate.scale) * np.sqrt(estimate.direction.squared_norm())
    if not norm <= MAX_ESTIMATE_NORM:
        raise DivergenceError(
            f"gradient estimate norm {norm:.3e} exceeds {MAX_ESTIMATE_NORM:.0e} "
            f"(trial {trial}, iteration {iteration})",
            trial=trial,
            iteration=iteration,
        )
    return estimate


def _shifted(x: BlockVector, step: np.ndarray) -> BlockVector:
    return BlockVector(x.layout, x.values + step)


def one_point_centralized(obj: ObjectiveHandle, x: BlockVector, mu: float, rng: RngStream) -> np.ndarray:
    _check_mu(mu)
    u = rng.standard_normal(x.layout.total_dim)
    return obj.evaluate(_shifted(x, mu * u)) / mu * u


def two_point_unbiased_centralized(obj: ObjectiveHandle, x: BlockVector, mu: float, rng: RngStream) -> np.ndarray:
    _check_mu(mu)
    u = rng.standard_normal(x.layout.total_dim)
    return (obj.evaluate(_shifted(x, mu * u)) - obj.evaluate(x)) / mu * u


def two_point_biased_centralized(obj: ObjectiveHandle, x: BlockVector, mu: float, rng: RngStream) -> np.ndarray:
    _check_mu(mu)
    u = rng.standard_normal(x.layout.total_dim)
    return (obj.evaluate(_shifted(x, mu * u)) - obj.evaluate(_shifted(x, -mu * u))) / (2 * mu) * u


def residual_centralized(obj: ObjectiveHandle, x_now: BlockVector, prev_value: Optional[float], mu: float, rng: RngStream):
    """Returns ``(estimate, new_value)``; the estimate is ``BOOTSTRAP`` without a previous value."""
    _check_mu(mu)
    u = rng.standard_normal(x_now.layout.total_dim)
    value = obj.evaluate(_shifted(x_now, mu * u))
    if prev_value is None:
        return BOOTSTRAP, value
    return (value - prev_value) / mu * u, value


def residual_async(obj: ObjectiveHandle, x_k: BlockVector, state: AgentState, rng: RngStream, iteration: int = 0, trial=None):
    """One activation of agent ``state.agent`` with residual feedback.

    Queries f once at ``x_k + mu u_k`` (u_k restricted to the agent's block) and
    differences against the agent's own previous query, which may have been taken
    before other agents moved. The first activation only stores the query.
    """
    u = sample_block_gaussian(x_k.layout, state.agent, rng)
    value = obj.evaluate(axpy_block(x_k, state.mu, u))
    new_state = replace(state, last_value=value, last_direction=u, last_update_iter=iteration, bootstrap_done=True)
    if not state.bootstrap_done:
        return BOOTSTRAP, new_state
    estimate = GradientEstimate(u, (value - state.last_value) / state.mu)
    return _guard(estimate, iteration, trial), new_state


def two_point_async(
    obj: ObjectiveHandle,
    x_k: BlockVector,
    state: AgentState,
    rng: RngStream,
    iteration: int = 0,
    trial=None,
    baseline: str = "fresh",
):
    """Asynchronous two-point estimate on the agent's block.

    ``baseline="fresh"`` queries both ``f(x_k + mu u_k)`` and ``f(x_k)`` on every
    activation (two queries). ``baseline="alternating"`` spends exactly one query per
    activation: it alternates between querying the unperturbed point, which is stored,
    and querying a perturbed point that is differenced against the stored value.
    """
    if baseline == "fresh":
        u = sample_block_gaussian(x_k.layout, state.agent, rng)
        perturbed = obj.evaluate(axpy_block(x_k, state.mu, u))
        base = obj.evaluate(x_k)
        new_state = replace(state, last_value=base, last_direction=u, last_update_iter=iteration, bootstrap_done=True)
        return _guard(GradientEstimate(u, (perturbed - base) / state.mu), iteration, trial), new_state
    if baseline == "alternating":
        if state.last_value is None:
            base = obj.evaluate(x_k)
            # an unperturbed query is a query along the zero direction
            zero = PerturbationDirection(x_k.layout, state.agent, np.zeros(x_k.layout.block_dims[state.agent]))
            new_state = replace(state, last_value=base, last_direction=zero, last_update_iter=iteration, bootstrap_done=True)
            return BOOTSTRAP, new_state
        u = sample_block_gaussian(x_k.layout, state.agent, rng)
        perturbed = obj.evaluate(axpy_block(x_k, state.mu, u))
        new_state = replace(state, last_value=None, last_direction=None, last_update_iter=iteration)
        return _guard(GradientEstimate(u, (perturbed - state.last_value) / state.mu), iteration, trial), new_state
    raise ConfigurationError(f"unknown two-point baseline mode {baseline!r}")
