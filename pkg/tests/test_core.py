import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asynczo.core import (
    BlockLayout,
    BlockVector,
    ConfigurationError,
    LayoutError,
    PerturbationDirection,
    RngStream,
    axpy_block,
    sample_block_gaussian,
    sample_categorical,
)

dims_strategy = st.lists(st.integers(1, 6), min_size=1, max_size=6)


@given(dims_strategy)
def test_layout_offsets_cover_range(dims):
    layout = BlockLayout(dims)
    assert layout.total_dim == sum(dims)
    covered = []
    for i in range(layout.num_blocks):
        s = layout.block_slice(i)
        covered.extend(range(s.start, s.stop))
    assert covered == list(range(layout.total_dim))


@pytest.mark.parametrize("dims", [[], [0], [2, -1]])
def test_layout_rejects_bad_dims(dims):
    with pytest.raises(LayoutError):
        BlockLayout(dims)


def test_uniform_predicate():
    assert BlockLayout([3, 3]).is_uniform
    assert BlockLayout([3, 3]).common_dim == 3
    assert not BlockLayout([2, 3]).is_uniform
    with pytest.raises(LayoutError):
        BlockLayout([2, 3]).common_dim


def test_block_vector_validates_length():
    with pytest.raises(LayoutError):
        BlockVector(BlockLayout([2, 2]), np.zeros(3))
    x = BlockVector(BlockLayout([2, 3]), np.arange(5.0))
    assert x.block(1).tolist() == [2.0, 3.0, 4.0]


def test_block_vector_is_immutable():
    x = BlockVector(BlockLayout([2]), np.zeros(2))
    with pytest.raises(ValueError):
        x.values[0] = 1.0


def test_sparsity_of_sampled_direction(rng):
    u = sample_block_gaussian(BlockLayout([2, 3]), 0, rng)
    full = u.as_full_vector()
    assert full[2:].tolist() == [0.0, 0.0, 0.0]
    assert np.isclose(full @ full, u.squared_norm())


@given(dims_strategy, st.integers(0, 2**32), st.data())
@settings(max_examples=50)
def test_direction_zero_outside_block(dims, seed, data):
    layout = BlockLayout(dims)
    agent = data.draw(st.integers(0, layout.num_blocks - 1))
    u = sample_block_gaussian(layout, agent, RngStream(seed))
    full = u.as_full_vector()
    mask = np.ones(layout.total_dim, bool)
    mask[layout.block_slice(agent)] = False
    assert np.all(full[mask] == 0.0)
    assert full @ full == pytest.approx(u.squared_norm(), rel=1e-12)


def test_sample_block_gaussian_agent_out_of_range(rng):
    with pytest.raises(LayoutError):
        sample_block_gaussian(BlockLayout([2, 3]), 2, rng)


def test_block_gaussian_moments():
    # CLT oracle: coordinate means within 4e-3 (3 sigma at 1e6 draws); E||u||^2 = n_i,
    # E||u||^4 = n_i (n_i + 2) for a chi-square with n_i degrees of freedom.
    layout = BlockLayout([1, 5])
    rng = RngStream(2024, 1)
    n = 1_000_000
    draws = np.empty((n, 5))
    for k in range(n):
        draws[k] = sample_block_gaussian(layout, 1, rng).block_values
    assert np.all(np.abs(draws.mean(axis=0)) < 4e-3)
    sq = np.sum(draws**2, axis=1)
    assert abs(sq.mean() - 5.0) < 0.02
    fourth = sq**2
    se = fourth.std(ddof=1) / np.sqrt(n)
    assert abs(fourth.mean() - 5 * 7) < 3 * se


def test_rng_streams_reproducible_and_distinct():
    a = RngStream(7, 3).standard_normal(8)
    b = RngStream(7, 3).standard_normal(8)
    c = RngStream(7, 4).standard_normal(8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_rng_streams_uncorrelated():
    a = RngStream(7, 3).standard_normal(200_000)
    b = RngStream(7, 4).standard_normal(200_000)
    # correlation of independent normals has sd 1/sqrt(n)
    assert abs(np.corrcoef(a, b)[0, 1]) < 3 / np.sqrt(200_000)


def test_categorical_degenerate(rng):
    assert all(sample_categorical([1.0], rng) == 0 for _ in range(100))


@pytest.mark.parametrize(
    "probs, index, expected, tol",
    [
        ([0.2] * 5, None, 0.2, 0.0012),
        ([0.9, 0.1], 0, 0.9, 0.0009),
    ],
)
def test_categorical_frequencies(probs, index, expected, tol):
    rng = RngStream(99, 5)
    n = 1_000_000
    counts = np.zeros(len(probs))
    for _ in range(n):
        counts[sample_categorical(probs, rng)] += 1
    freq = counts / n
    checked = freq if index is None else freq[[index]]
    assert np.all(np.abs(checked - expected) <= tol)


@pytest.mark.parametrize("probs", [[0.5, 0.6], [1.2, -0.2], [0.5, 0.5 - 1e-9], []])
def test_categorical_rejects_bad_probs(probs, rng):
    with pytest.raises(ConfigurationError):
        sample_categorical(probs, rng)


def test_categorical_never_picks_zero_probability():
    rng = RngStream(1, 1)
    picks = {sample_categorical([0.5, 0.0, 0.5], rng) for _ in range(10_000)}
    assert picks == {0, 2}


def test_axpy_examples():
    layout = BlockLayout([2, 1])
    x = BlockVector(layout, [1.0, 2.0, 3.0])
    u = PerturbationDirection(layout, 0, [5.0, 7.0])
    assert np.array_equal(axpy_block(x, 0.0, u).values, x.values)

    zero = BlockVector.zeros(BlockLayout([2, 3]))
    u = PerturbationDirection(zero.layout, 0, [1.0, 2.0])
    assert axpy_block(zero, 1.0, u).values.tolist() == [1.0, 2.0, 0.0, 0.0, 0.0]

    ones = BlockVector(BlockLayout([1, 1, 1]), [1.0, 1.0, 1.0])
    u = PerturbationDirection(ones.layout, 1, [3.0])
    assert axpy_block(ones, -2.0, u).values.tolist() == [1.0, -5.0, 1.0]


def test_axpy_layout_mismatch():
    x = BlockVector.zeros(BlockLayout([2, 1]))
    u = PerturbationDirection(BlockLayout([1, 2]), 0, [1.0])
    with pytest.raises(LayoutError):
        axpy_block(x, 1.0, u)


def test_replay_determinism():
    layout = BlockLayout([2, 3, 1])

    def replay():
        rng = RngStream(5, 9)
        x = BlockVector.zeros(layout)
        for k in range(50):
            agent = sample_categorical([0.3, 0.3, 0.4], rng)
            x = axpy_block(x, 0.1 * k, sample_block_gaussian(layout, agent, rng))
        return x.values.tobytes()

    assert replay() == replay()
