"""Property checks behind ``asynczo verify``.

Each check returns a ``CheckResult``: a pass flag plus flat ``key = value`` report lines.
Hard failures name the violated inequality, the observed value, the bound and the
tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .analysis import (
    MC_SIGMAS,
    SecondMomentTracker,
    SequenceBoundParams,
    check_smoothing_bounds,
    extremal_recursion,
    recursion_step_bound,
    recursion_sum_bound,
    recursion_sum_exact,
    second_moment_bound_rhs,
)
from .core import STREAM_DATASET, BlockLayout, BlockVector, RngStream
from .estimators import residual_async
from .objectives import QuadraticObjective, benchmark_handle, make_benchmark, quadratic_handle
from .scheduler import ActivationModel, RunConfig, run_algorithm1

SELECTORS = ("lemma2", "lemma3", "lemma6", "moments")
REL_TOL = 1e-9


@dataclass
class CheckResult:
    name: str
    passed: bool
    lines: list = field(default_factory=list)

    def render(self) -> str:
        head = [f"[{self.name}]", f"status = {'PASS' if self.passed else 'FAIL'}"]
        return "\n".join(head + self.lines) + "\n"


def reference_quadratic(seed: int = 7, dims=(2, 3)):
    layout = BlockLayout(dims)
    quad = QuadraticObjective.random(layout.total_dim, RngStream(seed, STREAM_DATASET), condition=4.0)
    return quad, layout


def check_smoothing(seed: int = 0, points: int = 50, samples: int = 20000, l1_scale: float = 1.0, mus=(0.01, 0.1)) -> CheckResult:
    rng = RngStream(seed, 11)
    lines = [f"l1_scale = {l1_scale!r}"]
    passed = True
    quad, layout = reference_quadratic(seed + 7)
    qh = quadratic_handle(quad, layout)
    bench = benchmark_handle(make_benchmark(5, 20, 10, RngStream(seed, STREAM_DATASET)))
    for label, handle in (("quadratic", qh), ("benchmark", bench)):
        L1 = handle.metadata.smooth_L1 * l1_scale
        xs = [BlockVector(handle.layout, rng.standard_normal(handle.layout.total_dim)) for _ in range(points)]
        for mu in mus:
            rep = check_smoothing_bounds(handle, xs, mu, L1, samples=samples, rng=rng)
            lines.append(f"{label}.mu_{mu!r}.checks = {rep.checks}")
            lines.append(f"{label}.mu_{mu!r}.violations = {len(rep.violations)}")
            lines.append(f"{label}.mu_{mu!r}.max_ratio_value = {rep.max_ratio['value']:.6g}")
            lines.append(f"{label}.mu_{mu!r}.max_ratio_gradient = {rep.max_ratio['gradient']:.6g}")
            for v in rep.violations[:5]:
                lines.append(f"{label}.violation = {v.describe()}")
            passed &= rep.ok
    return CheckResult("lemma2", passed, lines)


def driver_states(handle, x_meas: BlockVector, burn_in: int, seed: int, mu: float, alpha: float = 0.002):
    """Agent memories produced by a real asynchronous run (all agents bootstrapped)."""
    model = ActivationModel.uniform(handle.layout.num_blocks)
    result = run_algorithm1(
        handle, model, RunConfig(max_iterations=burn_in, alpha=alpha, mu=mu, seed=seed), x0=x_meas
    )
    states = result.states
    for i, st in enumerate(states):
        if not st.bootstrap_done:
            _, states[i] = residual_async(handle, result.x, st, RngStream(seed, 50 + i))
    return states


def residual_mean_at(handle, x: BlockVector, agent: int, total: int, seed: int, mu: float, chunk: int = 1000):
    """MC mean and standard error of the residual estimate of ``agent`` at frozen ``x``.

    Memories come from short asynchronous runs, so the stored query was taken at a
    point where other agents (and this one) had since moved.
    """
    n_i = handle.layout.block_dims[agent]
    acc = np.zeros(n_i)
    acc2 = np.zeros(n_i)
    done = 0
    run = 0
    while done < total:
        states = driver_states(handle, x, burn_in=20, seed=seed * 100003 + run, mu=mu)
        st = states[agent]
        rng = RngStream(seed, 10_000 + run)
        for _ in range(min(chunk, total - done)):
            est, _ = residual_async(handle, x, st, rng)
            g = est.block
            acc += g
            acc2 += g * g
        done += min(chunk, total - done)
        run += 1
    mean = acc / total
    var = np.maximum(acc2 / total - mean**2, 0.0) * total / (total - 1)
    return mean, np.sqrt(var / total)


def check_unbiasedness(seed: int = 0, samples: int = 200_000, mu: float = 0.05) -> CheckResult:
    quad, layout = reference_quadratic(seed + 7, dims=(2, 2))
    handle = quadratic_handle(quad, layout)
    x = BlockVector(layout, RngStream(seed, 12).standard_normal(layout.total_dim))
    lines = [f"samples_per_agent = {samples}", f"mu = {mu!r}"]
    passed = True
    for agent in range(layout.num_blocks):
        mean, se = residual_mean_at(handle, x, agent, samples, seed, mu)
        exact = quad.smoothed_gradient_block(x.values, mu, layout.block_slice(agent))
        z = np.abs(mean - exact) / se
        ok = bool(np.all(z <= MC_SIGMAS))
        passed &= ok
        for c in range(len(mean)):
            lines.append(
                f"agent_{agent}.coord_{c} = mean {mean[c]:.6f} exact {exact[c]:.6f} stderr {se[c]:.2e} z {z[c]:.2f}"
            )
        if not ok:
            lines.append(f"agent_{agent}.violation = |mean - grad f_mu| exceeds {MC_SIGMAS} standard errors")
    return CheckResult("lemma3", passed, lines)


def random_recursion_params(rng: RngStream, count: int):
    """Random (params, T) with gamma + beta in (0, 0.99)."""
    out = []
    for _ in range(count):
        q = rng.uniform(0.01, 0.99)
        beta = q * rng.uniform(0.0, 1.0)
        gamma = q - beta
        if gamma <= 0:
            gamma, beta = q / 2, q / 2
        M = rng.uniform(0.0, 10.0)
        V0 = rng.uniform(0.0, 10.0)
        T = int(rng.generator.integers(2, 200))
        out.append((SequenceBoundParams(gamma, beta, M, V0, T), T))
    return out


def check_recursion(seed: int = 0, draws: int = 1000) -> CheckResult:
    rng = RngStream(seed, 13)
    step_viol = sum_viol = exact_viol = 0
    worst_sum = None
    for params, T in random_recursion_params(rng, draws):
        V = extremal_recursion(params, T)
        for k in range(1, T):
            if V[k] > recursion_step_bound(params, k) * (1 + REL_TOL):
                step_viol += 1
                break
        total = float(V.sum())
        bound = recursion_sum_bound(params, T)
        if total > bound + REL_TOL * max(abs(bound), abs(total)):
            sum_viol += 1
            gap = total - bound
            if worst_sum is None or gap > worst_sum[0]:
                worst_sum = (gap, params, T, total, bound)
        if total > recursion_sum_exact(params, T) * (1 + REL_TOL):
            exact_viol += 1
    lines = [
        f"draws = {draws}",
        f"relative_tolerance = {REL_TOL!r}",
        f"step_bound_violations = {step_viol}",
        f"sum_bound_violations = {sum_viol}",
        f"summed_step_bounds_violations = {exact_viol}",
    ]
    if worst_sum is not None:
        gap, p, T, total, bound = worst_sum
        lines.append(
            "sum_bound.violation = sum V_k <= (1-b)/(1-(g+b)) V0 + (T-1)(1-b)/(1-(g+b)) M - g/(1-(g+b))^2 M; "
            f"observed {total:.6e} > bound {bound:.6e} (tolerance {REL_TOL:g} relative) at "
            f"gamma={p.gamma:.4g} beta={p.beta:.4g} M={p.M_const:.4g} V0={p.V0:.4g} T={T}"
        )
    return CheckResult("lemma6", step_viol == 0 and sum_viol == 0, lines)


def check_moments(seed: int = 0, budget: int = 5000) -> CheckResult:
    """Run the benchmark with a second-moment tracker; the recursive bound is logged,
    finiteness is asserted."""
    handle = benchmark_handle(make_benchmark(5, 20, 10, RngStream(seed, STREAM_DATASET)))
    model = ActivationModel.uniform(5)
    tracker = SecondMomentTracker(5)

    def observer(k, agent, x, est):
        if est is not None:
            tracker.add(est, k)

    cfg = RunConfig(max_queries=budget, alpha=0.5, mu=0.1, seed=seed)
    result = run_algorithm1(handle, model, cfg, observer=observer)
    per_iter = tracker.per_iteration(result.clock.iteration)
    rhs = second_moment_bound_rhs(per_iter, 10, handle.metadata.lipschitz_L0, 0.5, 0.1, model.p_min)
    finite = bool(np.isfinite(tracker.mean())) and not result.diverged
    lines = [
        f"estimates = {len(tracker.values)}",
        f"mean_sq_norm = {tracker.mean()!r}",
        f"mean_sq_norm_first_half = {tracker.window_mean(0, result.clock.iteration // 2)!r}",
        f"mean_sq_norm_second_half = {tracker.window_mean(result.clock.iteration // 2, result.clock.iteration)!r}",
        f"L0_bound = {handle.metadata.lipschitz_L0!r}",
        f"recursive_bound_rhs_final = {float(rhs[-1])!r}",
        f"recursive_bound_rhs_min = {float(rhs[1:].min()) if len(rhs) > 1 else float('nan')!r}",
        "recursive_bound_note = logged only; the bound is worst-case",
    ]
    for i in range(5):
        lines.append(f"agent_{i}.mean_sq_norm = {tracker.mean(i)!r}")
    if not finite:
        lines.append("violation = second moment of the residual estimate is not finite")
    return CheckResult("moments", finite, lines)


CHECKS: dict[str, Callable[..., CheckResult]] = {
    "lemma2": check_smoothing,
    "lemma3": check_unbiasedness,
    "lemma6": check_recursion,
    "moments": check_moments,
}


def run_verification_suite(selector: str = "all", seed: int = 0, l1_scale: float = 1.0, quick: bool = False) -> list[CheckResult]:
    names = SELECTORS if selector == "all" else (selector,)
    results = []
    for name in names:
        if name not in CHECKS:
            raise ValueError(f"unknown selector {name!r}; expected one of {SELECTORS + ('all',)}")
        kwargs = {"seed": seed}
        if name == "lemma2":
            kwargs["l1_scale"] = l1_scale
            if quick:
                kwargs.update(points=10, samples=5000)
        if quick and name == "lemma3":
            kwargs["samples"] = 20000
        results.append(CHECKS[name](**kwargs))
    return results
