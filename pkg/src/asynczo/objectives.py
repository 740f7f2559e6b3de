"""Black-box objectives with query accounting and optional bounded noise.

Two concrete problems live here: a quadratic with closed-form smoothing, used as an
analytic oracle, and the distributed feature-learning logistic loss used as the
benchmark.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .core import (
    BlockLayout,
    BlockVector,
    ConfigurationError,
    EvaluationError,
    LayoutError,
    RngStream,
)

NOISE_KINDS = ("additive-uniform", "additive-gaussian-truncated")


@dataclass(frozen=True)
class ObjectiveMetadata:
    lipschitz_L0: Optional[float] = None
    smooth_L1: Optional[float] = None
    lower_bound_fstar: Optional[float] = None
    # True when the constants come from sampling rather than a proof
    empirical: bool = False

    def __post_init__(self):
        for name in ("lipschitz_L0", "smooth_L1"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConfigurationError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    variance_bound: float

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigurationError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not self.variance_bound >= 0:
            raise ConfigurationError(f"variance_bound must be >= 0, got {self.variance_bound}")

    def draw(self, rng: RngStream) -> float:
        if self.variance_bound == 0:
            return 0.0
        if self.kind == "additive-uniform":
            half_width = math.sqrt(3.0 * self.variance_bound)
            return float(rng.uniform(-half_width, half_width))
        # clipping a centred Gaussian keeps the mean at 0 and only shrinks the variance
        sigma = math.sqrt(self.variance_bound)
        return float(np.clip(sigma * rng.standard_normal(), -6 * sigma, 6 * sigma))


class QuadraticObjective:
    """f(x) = 0.5 x'Ax + b'x + c."""

    def __init__(self, A, b=None, c: float = 0.0):
        A = np.array(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ConfigurationError(f"A must be square, got shape {A.shape}")
        if np.max(np.abs(A - A.T), initial=0.0) > 1e-12:
            raise ConfigurationError("A must be symmetric")
        n = A.shape[0]
        b = np.zeros(n) if b is None else np.array(b, dtype=np.float64)
        if b.shape != (n,):
            raise ConfigurationError(f"b must have length {n}")
        self.A = A
        self.b = b
        self.c = float(c)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def spectral_norm(self) -> float:
        return float(np.linalg.norm(self.A, 2))

    def __call__(self, v: np.ndarray) -> float:
        return float(0.5 * v @ self.A @ v + self.b @ v + self.c)

    def gradient(self, v: np.ndarray) -> np.ndarray:
        return self.A @ v + self.b

    def batch(self, V: np.ndarray) -> np.ndarray:
        return 0.5 * np.einsum("si,ij,sj->s", V, self.A, V) + V @ self.b + self.c

    def smoothed_value(self, v: np.ndarray, mu: float, block: slice) -> float:
        """Exact Gaussian smoothing along one block: adds (mu^2/2) tr(A_block)."""
        return self(v) + 0.5 * mu**2 * float(np.trace(self.A[block, block]))

    def smoothed_gradient_block(self, v: np.ndarray, mu: float, block: slice) -> np.ndarray:
        # smoothing shifts a quadratic by a constant, so the gradient is unchanged
        return self.gradient(v)[block]

    def minimizer(self) -> np.ndarray:
        return -np.linalg.solve(self.A, self.b)

    @classmethod
    def random(cls, dim: int, rng: RngStream, condition: float = 10.0) -> "QuadraticObjective":
        """Random SPD quadratic with eigenvalues spread over [1, condition]."""
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        eig = np.geomspace(1.0, condition, dim) if dim > 1 else np.ones(1)
        A = (q * eig) @ q.T
        A = 0.5 * (A + A.T)
        return cls(A, rng.standard_normal(dim), 0.0)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _log1pexp(z):
    return np.logaddexp(0.0, z)


class FeatureLearningObjective:
    """Distributed feature-learning loss.

    Agent ``i`` maps its raw input ``D[i, j]`` to a scalar biomarker
    ``d[i, j] = sigmoid(x_i . D[i, j])``; a fixed logistic classifier ``W`` scores the
    concatenated biomarkers and the loss is the mean negative log-likelihood of the
    labels.
    """

    def __init__(self, raw_inputs, labels, classifier):
        D = np.array(raw_inputs, dtype=np.float64)
        y = np.array(labels, dtype=np.float64)
        W = np.array(classifier, dtype=np.float64)
        if D.ndim != 3:
            raise ConfigurationError("raw_inputs must have shape (agents, samples, input_dim)")
        N, J, _ = D.shape
        if y.shape != (J,) or not np.all(np.isin(y, (-1.0, 1.0))):
            raise ConfigurationError("labels must be a length-J vector of +-1")
        if W.shape != (N,):
            raise ConfigurationError(f"classifier must have length {N}")
        self.raw_inputs = D
        self.labels = y
        self.classifier = W
        self.layout = BlockLayout.uniform(N, D.shape[2])

    @property
    def num_agents(self) -> int:
        return self.raw_inputs.shape[0]

    @property
    def num_samples(self) -> int:
        return self.raw_inputs.shape[1]

    @property
    def input_dim(self) -> int:
        return self.raw_inputs.shape[2]

    def _margins(self, v: np.ndarray):
        weights = v.reshape(self.num_agents, self.input_dim)
        pre = np.einsum("ijk,ik->ij", self.raw_inputs, weights)
        d = _sigmoid(pre)
        return pre, d, self.labels * (self.classifier @ d)

    def __call__(self, v: np.ndarray) -> float:
        _, _, margin = self._margins(v)
        return float(np.mean(_log1pexp(-margin)))

    def batch(self, V: np.ndarray) -> np.ndarray:
        weights = V.reshape(V.shape[0], self.num_agents, self.input_dim)
        d = _sigmoid(np.einsum("ijk,sik->sij", self.raw_inputs, weights))
        margin = self.labels * np.einsum("i,sij->sj", self.classifier, d)
        return np.mean(_log1pexp(-margin), axis=1)

    def batch_along_block(self, v: np.ndarray, agent: int, D: np.ndarray) -> np.ndarray:
        """Values at ``v`` with agent's block shifted by each row of ``D``.

        Only that agent's features change, so the other agents' contributions to the
        margin are computed once.
        """
        _, d, _ = self._margins(v)
        rest = self.classifier @ d - self.classifier[agent] * d[agent]
        w = v.reshape(self.num_agents, self.input_dim)[agent] + D
        d_i = _sigmoid(w @ self.raw_inputs[agent].T)  # (S, J)
        margin = self.labels * (rest + self.classifier[agent] * d_i)
        return np.mean(_log1pexp(-margin), axis=1)

    def gradient(self, v: np.ndarray) -> np.ndarray:
        _, d, margin = self._margins(v)
        # d/dmargin of log(1+exp(-m)) is -sigmoid(-m)
        coef = -_sigmoid(-margin) * self.labels / self.num_samples
        local = coef[None, :] * self.classifier[:, None] * d * (1.0 - d)
        return np.einsum("ij,ijk->ik", local, self.raw_inputs).ravel()

    def lipschitz_bounds(self) -> tuple[float, float]:
        """Global upper bounds on (L0, L1) from the derivative bounds of the sigmoid.

        Uses |l'| <= 1, l'' <= 1/4 for the logistic loss, sigma' <= 1/4 and
        |sigma''| <= 1/(6 sqrt 3).
        """
        sq = np.sum(self.raw_inputs**2, axis=2)  # (N, J)
        W2 = self.classifier**2
        per_sample_grad = 0.25 * np.sqrt(W2 @ sq)
        L0 = float(np.mean(per_sample_grad))
        curvature = 0.25 * (W2 @ sq) / 16.0 + np.max(np.abs(self.classifier)) / (6.0 * math.sqrt(3.0)) * sq.max(axis=0)
        L1 = float(np.mean(curvature))
        return L0, L1

    def to_csv(self, directory) -> None:
        """Write ``inputs.csv`` (one row per agent/sample), ``labels.csv`` and ``classifier.csv``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "inputs.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["agent", "sample"] + [f"d{k}" for k in range(self.input_dim)])
            for i in range(self.num_agents):
                for j in range(self.num_samples):
                    w.writerow([i, j] + [repr(float(v)) for v in self.raw_inputs[i, j]])
        with open(directory / "labels.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "label"])
            for j, label in enumerate(self.labels):
                w.writerow([j, int(label)])
        with open(directory / "classifier.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["agent", "weight"])
            for i, weight in enumerate(self.classifier):
                w.writerow([i, repr(float(weight))])

    @classmethod
    def from_csv(cls, directory) -> "FeatureLearningObjective":
        directory = Path(directory)
        with open(directory / "inputs.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        N = 1 + max(int(r["agent"]) for r in rows)
        J = 1 + max(int(r["sample"]) for r in rows)
        keys = [k for k in rows[0] if k.startswith("d")]
        D = np.empty((N, J, len(keys)))
        for r in rows:
            D[int(r["agent"]), int(r["sample"])] = [float(r[k]) for k in keys]
        with open(directory / "labels.csv", newline="") as fh:
            y = np.array([float(r["label"]) for r in sorted(csv.DictReader(fh), key=lambda r: int(r["sample"]))])
        with open(directory / "classifier.csv", newline="") as fh:
            W = np.array([float(r["weight"]) for r in sorted(csv.DictReader(fh), key=lambda r: int(r["agent"]))])
        return cls(D, y, W)


def make_benchmark(num_agents: int, samples: int, input_dim: int, rng: RngStream) -> FeatureLearningObjective:
    if num_agents < 1 or samples < 1 or input_dim < 1:
        raise ConfigurationError("num_agents, samples and input_dim must all be >= 1")
    D = rng.standard_normal((num_agents, samples, input_dim))
    labels = np.where(np.arange(samples) % 2 == 0, 1.0, -1.0)
    labels = labels[rng.generator.permutation(samples)]
    W = rng.standard_normal(num_agents)
    return FeatureLearningObjective(D, labels, W)


@dataclass
class ObjectiveHandle:
    """Counted black-box view of a function over a block layout.

    ``evaluate`` is the oracle the algorithms use: every call counts as one query and
    may carry noise. ``value`` and ``gradient`` are uncounted, noiseless diagnostics.
    """

    function: Callable[[np.ndarray], float]
    layout: BlockLayout
    metadata: ObjectiveMetadata = field(default_factory=ObjectiveMetadata)
    noise: Optional[NoiseSpec] = None
    noise_rng: Optional[RngStream] = None
    gradient_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    query_count: int = 0

    def __post_init__(self):
        if self.noise is not None and self.noise.variance_bound > 0 and self.noise_rng is None:
            raise ConfigurationError("a noisy objective needs a noise_rng")

    def _check(self, x: BlockVector) -> None:
        if x.layout != self.layout:
            raise LayoutError(f"point layout {x.layout.block_dims} does not match objective {self.layout.block_dims}")

    def evaluate(self, x: BlockVector) -> float:
        self._check(x)
        self.query_count += 1
        value = float(self.function(x.values))
        if self.noise is not None:
            value += self.noise.draw(self.noise_rng)
        if not math.isfinite(value):
            raise EvaluationError(f"objective returned {value} at query {self.query_count}", x=x)
        return value

    def value(self, x: BlockVector) -> float:
        self._check(x)
        return float(self.function(x.values))

    def analytic_gradient(self, x: BlockVector) -> BlockVector:
        self._check(x)
        if self.gradient_fn is None:
            raise ConfigurationError("objective has no analytic gradient")
        if not np.all(np.isfinite(x.values)):
            raise EvaluationError("non-finite point", x=x)
        return BlockVector(self.layout, self.gradient_fn(x.values))

    def batch_values(self, V: np.ndarray) -> np.ndarray:
        """Uncounted, noiseless values at the rows of ``V``."""
        V = np.atleast_2d(np.asarray(V, dtype=np.float64))
        batch = getattr(self.function, "batch", None)
        if batch is not None:
            return np.asarray(batch(V), dtype=np.float64)
        return np.array([self.function(v) for v in V])

    def noiseless(self) -> "ObjectiveHandle":
        return ObjectiveHandle(self.function, self.layout, self.metadata, gradient_fn=self.gradient_fn)


def quadratic_handle(quad: QuadraticObjective, layout: BlockLayout, L0: Optional[float] = None, **kwargs) -> ObjectiveHandle:
    if layout.total_dim != quad.dim:
        raise LayoutError(f"layout dimension {layout.total_dim} does not match quadratic of dimension {quad.dim}")
    fstar = None
    if np.all(np.linalg.eigvalsh(quad.A) > 0):
        fstar = quad(quad.minimizer())
    meta = ObjectiveMetadata(lipschitz_L0=L0, smooth_L1=quad.spectral_norm, lower_bound_fstar=fstar)
    return ObjectiveHandle(quad, layout, meta, gradient_fn=quad.gradient, **kwargs)


def benchmark_handle(obj: FeatureLearningObjective, **kwargs) -> ObjectiveHandle:
    L0, L1 = obj.lipschitz_bounds()
    meta = ObjectiveMetadata(lipschitz_L0=L0, smooth_L1=L1, lower_bound_fstar=0.0)
    return ObjectiveHandle(obj, obj.layout, meta, gradient_fn=obj.gradient, **kwargs)


def estimate_constants(handle: ObjectiveHandle, points, rng: RngStream, probes: int = 8, eps: float = 1e-5) -> ObjectiveMetadata:
    """Empirical (L0, L1) over a cloud of points: max gradient norm and max
    finite-difference Hessian-vector quotient. Flagged ``empirical=True``."""
    L0 = 0.0
    L1 = 0.0
    for p in points:
        v = np.asarray(p.values if isinstance(p, BlockVector) else p, dtype=np.float64)
        g = handle.gradient_fn(v)
        L0 = max(L0, float(np.linalg.norm(g)))
        for _ in range(probes):
            d = rng.standard_normal(v.size)
            d /= np.linalg.norm(d)
            hv = (handle.gradient_fn(v + eps * d) - handle.gradient_fn(v - eps * d)) / (2 * eps)
            L1 = max(L1, float(np.linalg.norm(hv)))
    return ObjectiveMetadata(lipschitz_L0=L0 or None, smooth_L1=L1 or None, empirical=True)
