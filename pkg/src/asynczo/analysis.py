"""Verification instruments.

Monte-Carlo and closed-form evaluators of the block-wise Gaussian smoothing, checks of
the smoothing error bounds, a second-moment tracker for gradient estimates, and the
closed-form bounds for non-negative sequences obeying a geometrically weighted
recursion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import BlockVector, ConfigurationError, DomainError, RngStream
from .estimators import GradientEstimate
from .objectives import ObjectiveHandle, QuadraticObjective

MC_SIGMAS = 3.0


@dataclass
class SmoothingOracle:
    """Evaluates f_mu (smoothing along one agent's block) and its block gradient."""

    objective: ObjectiveHandle
    mu: float
    samples: int
    rng: RngStream

    def __post_init__(self):
        if not self.mu > 0:
            raise ConfigurationError("mu must be positive")
        if self.samples < 2:
            raise ConfigurationError("the smoothing oracle needs at least 2 samples")

    @property
    def quadratic(self) -> Optional[QuadraticObjective]:
        f = self.objective.function
        return f if isinstance(f, QuadraticObjective) else None

    def _directions(self, agent: int) -> np.ndarray:
        return self.rng.standard_normal((self.samples, self.objective.layout.block_dims[agent]))

    def values_along(self, x: BlockVector, agent: int, U: np.ndarray) -> np.ndarray:
        """Noiseless, uncounted f(x + mu u) for each row u of ``U`` placed in the agent's block."""
        along = getattr(self.objective.function, "batch_along_block", None)
        if along is not None:
            return np.asarray(along(x.values, agent, self.mu * U), dtype=np.float64)
        P = np.repeat(x.values[None, :], U.shape[0], axis=0)
        P[:, self.objective.layout.block_slice(agent)] += self.mu * U
        return self.objective.batch_values(P)


@dataclass(frozen=True)
class SmoothedValue:
    estimate: float
    stderr: float
    exact: Optional[float] = None


@dataclass(frozen=True)
class SmoothedGradient:
    estimate: np.ndarray
    stderr: np.ndarray
    exact: Optional[np.ndarray] = None


def smoothed_value(oracle: SmoothingOracle, x: BlockVector, agent: int = 0) -> SmoothedValue:
    U = oracle._directions(agent)
    vals = oracle.values_along(x, agent, U)
    exact = None
    if oracle.quadratic is not None:
        exact = oracle.quadratic.smoothed_value(x.values, oracle.mu, x.layout.block_slice(agent))
    return SmoothedValue(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals))), exact)


def smoothed_gradient_block(oracle: SmoothingOracle, x: BlockVector, agent: int) -> SmoothedGradient:
    """MC estimate of the block gradient of f_mu.

    Uses the symmetric sample ``(f(x+mu u) - f(x-mu u)) / (2 mu) * u``: its mean equals
    ``E[f(x+mu u) u] / mu`` because u and -u have the same law, and the subtraction
    removes the large zero-mean ``f(x) u / mu`` term from the variance.
    """
    U = oracle._directions(agent)
    plus = oracle.values_along(x, agent, U)
    minus = oracle.values_along(x, agent, -U)
    samples = ((plus - minus) / (2 * oracle.mu))[:, None] * U
    exact = None
    if oracle.quadratic is not None:
        exact = oracle.quadratic.smoothed_gradient_block(x.values, oracle.mu, x.layout.block_slice(agent))
    return SmoothedGradient(samples.mean(axis=0), samples.std(axis=0, ddof=1) / math.sqrt(len(samples)), exact)


@dataclass(frozen=True)
class BoundViolation:
    point: int
    agent: int
    quantity: str
    observed: float
    bound: float
    tolerance: float

    def describe(self) -> str:
        return (
            f"{self.quantity} at point {self.point}, agent {self.agent}: "
            f"observed {self.observed:.6e} > bound {self.bound:.6e} + tolerance {self.tolerance:.6e}"
        )


@dataclass
class SmoothingBoundReport:
    mu: float
    L1: float
    checks: int = 0
    violations: list = field(default_factory=list)
    # largest observed/bound ratio for each quantity
    max_ratio: dict = field(default_factory=lambda: {"value": 0.0, "gradient": 0.0})

    @property
    def ok(self) -> bool:
        return not self.violations


def check_smoothing_bounds(
    obj: ObjectiveHandle,
    points: Sequence[BlockVector],
    mu: float,
    L1: float,
    samples: int = 20000,
    rng: Optional[RngStream] = None,
) -> SmoothingBoundReport:
    """Check |f_mu - f| <= mu^2 L1 n_i / 2 and |grad_i f_mu - grad_i f| <= mu L1 (n_i+3)^1.5 / 2
    for every point and block, with 3 standard errors of Monte-Carlo slack when no
    closed form exists."""
    if not L1 > 0:
        raise ConfigurationError("L1 must be positive")
    rng = rng or RngStream(0, 0)
    oracle = SmoothingOracle(obj, mu, samples, rng)
    report = SmoothingBoundReport(mu, L1)
    for p_idx, x in enumerate(points):
        fx = obj.value(x)
        grad = obj.analytic_gradient(x).values
        for agent, n_i in enumerate(obj.layout.block_dims):
            sv = smoothed_value(oracle, x, agent)
            if sv.exact is not None:
                err, tol = abs(sv.exact - fx), 0.0
            else:
                err, tol = abs(sv.estimate - fx), MC_SIGMAS * sv.stderr
            bound = 0.5 * mu**2 * L1 * n_i
            _record(report, p_idx, agent, "value", err, bound, tol)

            sg = smoothed_gradient_block(oracle, x, agent)
            g_i = grad[x.layout.block_slice(agent)]
            if sg.exact is not None:
                err, tol = float(np.linalg.norm(sg.exact - g_i)), 0.0
            else:
                err, tol = float(np.linalg.norm(sg.estimate - g_i)), MC_SIGMAS * float(np.linalg.norm(sg.stderr))
            bound = 0.5 * mu * L1 * (n_i + 3) ** 1.5
            _record(report, p_idx, agent, "gradient", err, bound, tol)
    return report


def _record(report, p_idx, agent, quantity, observed, bound, tol):
    report.checks += 1
    report.max_ratio[quantity] = max(report.max_ratio[quantity], observed / bound)
    if observed > bound + tol:
        report.violations.append(BoundViolation(p_idx, agent, quantity, observed, bound, tol))


# --- geometrically weighted recursions ------------------------------------------------


@dataclass(frozen=True)
class SequenceBoundParams:
    """Constants of V_k <= gamma (V_{k-1} + beta V_{k-2} + ... + beta^{k-1} V_0) + M."""

    gamma: float
    beta: float
    M_const: float
    V0: float
    horizon: int = 1

    def __post_init__(self):
        if not (self.gamma >= 0 and 0 <= self.beta < 1):
            raise DomainError(f"need gamma >= 0 and beta in [0, 1), got gamma={self.gamma}, beta={self.beta}")
        if not (self.M_const >= 0 and self.V0 >= 0):
            raise DomainError("M_const and V0 must be non-negative")

    @property
    def rate(self) -> float:
        return self.gamma + self.beta

    def require_contraction(self) -> None:
        if not 0 < self.rate < 1:
            raise DomainError(f"gamma + beta = {self.rate} must lie in (0, 1)")

    @classmethod
    def from_run_constants(
        cls, n_bar: int, L0: float, alpha: float, mu: float, T: int, p_min: float, V0: float = 0.0
    ) -> "SequenceBoundParams":
        """Instantiate with the estimator second-moment constants of an asynchronous run.

        gamma = 2 n L0^2 alpha^2 (T-1) / mu^2, beta = 1 - p_min,
        M = 4 L0^2 ((4+n)^2 + n^2). Raises ``DomainError`` when gamma + beta >= 1.
        """
        gamma = 2.0 * n_bar * L0**2 * alpha**2 * (T - 1) / mu**2
        M = 4.0 * L0**2 * ((4 + n_bar) ** 2 + n_bar**2)
        params = cls(gamma, 1.0 - p_min, M, V0, T)
        params.require_contraction()
        return params


def recursion_step_bound(params: SequenceBoundParams, k: int) -> float:
    params.require_contraction()
    if k < 1:
        raise DomainError("the per-step bound holds for k >= 1")
    g, b, q = params.gamma, params.beta, params.rate
    return g * q ** (k - 1) * params.V0 + (1 - b - g * q ** (k - 1)) / (1 - q) * params.M_const


def recursion_sum_bound(params: SequenceBoundParams, T: int) -> float:
    """Closed-form bound on V_0 + ... + V_{T-1} in the form usually quoted.

    This form drops the q^(T-1) remainder of the geometric series in both terms; the
    dropped M-term remainder has the wrong sign, so it can sit below the true sum.
    See ``recursion_sum_exact`` for the sum of the per-step bounds.
    """
    params.require_contraction()
    g, b, q = params.gamma, params.beta, params.rate
    return (1 - b) / (1 - q) * params.V0 + (T - 1) * (1 - b) / (1 - q) * params.M_const - g / (1 - q) ** 2 * params.M_const


def recursion_sum_exact(params: SequenceBoundParams, T: int) -> float:
    """V_0 plus the per-step bounds for k = 1..T-1, summed in closed form."""
    params.require_contraction()
    g, b, q = params.gamma, params.beta, params.rate
    tail = 1 - q ** (T - 1)
    return (
        params.V0
        + g * tail / (1 - q) * params.V0
        + (T - 1) * (1 - b) / (1 - q) * params.M_const
        - g * tail / (1 - q) ** 2 * params.M_const
    )


def extremal_recursion(params: SequenceBoundParams, T: int) -> np.ndarray:
    """The largest sequence allowed by the recursion: equality at every step."""
    V = np.zeros(T)
    if T == 0:
        return V
    V[0] = params.V0
    weighted = params.V0  # V_{k-1} + beta V_{k-2} + ... + beta^{k-1} V_0
    for k in range(1, T):
        V[k] = params.gamma * weighted + params.M_const
        weighted = V[k] + params.beta * weighted
    return V


def recursion_oracle_direct(gamma: float, beta: float, M: float, V0: float, T: int) -> list[float]:
    """Direct O(T^2) evaluation of the extremal recursion without domain checks."""
    V = [V0]
    for k in range(1, T):
        V.append(gamma * sum(beta**j * V[k - 1 - j] for j in range(k)) + M)
    return V[:T]


# --- second moments ------------------------------------------------------------------


@dataclass
class SecondMomentTracker:
    num_agents: int
    sums: np.ndarray = field(init=False)
    counts: np.ndarray = field(init=False)
    values: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    agents: list = field(default_factory=list)

    def __post_init__(self):
        self.sums = np.zeros(self.num_agents)
        self.counts = np.zeros(self.num_agents, dtype=np.int64)

    def add(self, estimate: GradientEstimate, iteration: Optional[int] = None) -> "SecondMomentTracker":
        sq = estimate.squared_norm()
        self.sums[estimate.agent] += sq
        self.counts[estimate.agent] += 1
        self.values.append(sq)
        self.iterations.append(len(self.values) - 1 if iteration is None else iteration)
        self.agents.append(estimate.agent)
        return self

    def mean(self, agent: Optional[int] = None) -> float:
        if agent is None:
            return float(np.mean(self.values)) if self.values else 0.0
        c = self.counts[agent]
        return float(self.sums[agent] / c) if c else 0.0

    def window_mean(self, start: int, stop: int) -> float:
        """Mean over estimates recorded at iterations in [start, stop)."""
        sel = [v for v, k in zip(self.values, self.iterations) if start <= k < stop]
        return float(np.mean(sel)) if sel else 0.0

    def per_iteration(self, T: int) -> np.ndarray:
        """Squared norms indexed by iteration; iterations without an estimate hold 0."""
        out = np.zeros(T)
        for v, k in zip(self.values, self.iterations):
            if k < T:
                out[k] = v
        return out


def track_second_moment(tracker: SecondMomentTracker, estimate: GradientEstimate, iteration: Optional[int] = None) -> SecondMomentTracker:
    return tracker.add(estimate, iteration)


def second_moment_bound_rhs(per_iter: np.ndarray, n_bar: int, L0: float, alpha: float, mu: float, p_min: float) -> np.ndarray:
    """Right-hand side of the recursive second-moment bound evaluated on an observed
    sequence of squared estimate norms, one entry per iteration k >= 1."""
    beta = 1.0 - p_min
    M = 4.0 * L0**2 * ((4 + n_bar) ** 2 + n_bar**2)
    out = np.zeros(len(per_iter))
    weighted = 0.0
    for k in range(1, len(per_iter)):
        weighted = per_iter[k - 1] + beta * weighted
        out[k] = 2.0 * n_bar * L0**2 * alpha**2 * k / mu**2 * weighted + M
    out[0] = M
    return out
