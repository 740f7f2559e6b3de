"""Block-structured vectors, seeded random streams and shared primitives."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class AsyncZOError(Exception):
    """Base class for all package errors."""


class LayoutError(AsyncZOError, ValueError):
    pass


class ConfigurationError(AsyncZOError, ValueError):
    pass


class EvaluationError(AsyncZOError, ArithmeticError):
    """A black-box query returned a non-finite value."""

    def __init__(self, message: str, x=None):
        super().__init__(message)
        self.x = x


class DivergenceError(AsyncZOError, ArithmeticError):
    def __init__(self, message: str, trial=None, iteration=None):
        super().__init__(message)
        self.trial = trial
        self.iteration = iteration


class DomainError(AsyncZOError, ValueError):
    pass


@dataclass(frozen=True)
class BlockLayout:
    block_dims: tuple[int, ...]

    def __init__(self, block_dims: Sequence[int]):
        dims = tuple(int(d) for d in block_dims)
        if len(dims) == 0:
            raise LayoutError("a layout needs at least one block")
        if any(d < 1 for d in dims):
            raise LayoutError(f"block dimensions must be positive, got {dims}")
        object.__setattr__(self, "block_dims", dims)
        object.__setattr__(self, "_offsets", tuple(np.concatenate([[0], np.cumsum(dims)]).tolist()))

    @classmethod
    def uniform(cls, num_blocks: int, dim: int) -> "BlockLayout":
        return cls([dim] * num_blocks)

    @property
    def num_blocks(self) -> int:
        return len(self.block_dims)

    @property
    def total_dim(self) -> int:
        return self._offsets[-1]

    @property
    def is_uniform(self) -> bool:
        return len(set(self.block_dims)) == 1

    @property
    def common_dim(self) -> int:
        """Shared block size; only defined for uniform layouts."""
        if not self.is_uniform:
            raise LayoutError(f"layout {self.block_dims} is not uniform")
        return self.block_dims[0]

    def offset(self, agent: int) -> int:
        self.check_agent(agent)
        return self._offsets[agent]

    def block_slice(self, agent: int) -> slice:
        self.check_agent(agent)
        return slice(self._offsets[agent], self._offsets[agent + 1])

    def check_agent(self, agent: int) -> None:
        if not 0 <= agent < len(self.block_dims):
            raise LayoutError(f"agent index {agent} out of range for {len(self.block_dims)} blocks")


@dataclass(frozen=True)
class BlockVector:
    layout: BlockLayout
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (self.layout.total_dim,):
            raise LayoutError(
                f"values of shape {values.shape} do not match layout of total dimension {self.layout.total_dim}"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, layout: BlockLayout) -> "BlockVector":
        return cls(layout, np.zeros(layout.total_dim))

    def block(self, agent: int) -> np.ndarray:
        return self.values[self.layout.block_slice(agent)]

    def with_block(self, agent: int, block_values) -> "BlockVector":
        values = self.values.copy()
        values[self.layout.block_slice(agent)] = block_values
        return BlockVector(self.layout, values)


@dataclass(frozen=True)
class PerturbationDirection:
    """Gaussian direction that is zero outside the block of a single agent."""

    layout: BlockLayout
    agent: int
    block_values: np.ndarray

    def __post_init__(self):
        self.layout.check_agent(self.agent)
        block = np.array(self.block_values, dtype=np.float64)
        if block.shape != (self.layout.block_dims[self.agent],):
            raise LayoutError(
                f"block of shape {block.shape} does not fit agent {self.agent} "
                f"of dimension {self.layout.block_dims[self.agent]}"
            )
        block.flags.writeable = False
        object.__setattr__(self, "block_values", block)

    def as_full_vector(self) -> np.ndarray:
        full = np.zeros(self.layout.total_dim)
        full[self.layout.block_slice(self.agent)] = self.block_values
        return full

    def squared_norm(self) -> float:
        return float(self.block_values @ self.block_values)


@dataclass
class RngStream:
    """Seeded generator addressed by ``(seed, stream_id)``.

    Streams with different ids are spawned from the same ``SeedSequence`` root, so
    they are independent while staying reproducible from the master seed alone.
    """

    seed: int
    stream_id: int = 0
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        seq = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id),))
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def exponential(self, scale=1.0, size=None):
        return self.generator.exponential(scale, size)

    def random(self, size=None):
        return self.generator.random(size)


# stream ids per role within one trial
STREAM_DATASET = 0
STREAM_SCHEDULER = 1
STREAM_NOISE = 2
STREAM_INIT = 3
STREAM_AGENT_BASE = 1000


def agent_stream(seed: int, agent: int) -> RngStream:
    return RngStream(seed, STREAM_AGENT_BASE + agent)


def sample_block_gaussian(layout: BlockLayout, agent: int, rng: RngStream) -> PerturbationDirection:
    layout.check_agent(agent)
    return PerturbationDirection(layout, agent, rng.standard_normal(layout.block_dims[agent]))


def validate_probs(probs: Sequence[float], strictly_positive: bool = False) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ConfigurationError("probabilities must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ConfigurationError(f"probabilities must be non-negative, got {p.tolist()}")
    if strictly_positive and np.any(p <= 0):
        raise ConfigurationError(f"every activation probability must be positive, got {p.tolist()}")
    if abs(p.sum() - 1.0) > 1e-12:
        raise ConfigurationError(f"probabilities sum to {p.sum()!r}, expected 1")
    return p


def sample_categorical(probs: Sequence[float], rng: RngStream) -> int:
    p = validate_probs(probs)
    cdf = np.cumsum(p)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(p) - 1)


def axpy_block(x: BlockVector, scale: float, u: PerturbationDirection) -> BlockVector:
    """Return ``x + scale * u`` where only the block owned by ``u.agent`` changes."""
    if x.layout != u.layout:
        raise LayoutError(f"layout mismatch: {x.layout.block_dims} vs {u.layout.block_dims}")
    values = x.values.copy()
    values[x.layout.block_slice(u.agent)] += scale * u.block_values
    return BlockVector(x.layout, values)
