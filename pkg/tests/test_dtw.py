"""DTW against an exhaustive monotone-path enumeration oracle."""

from functools import lru_cache

import numpy as np
import pytest

from tasign.dtw import (
    DEFAULT_COST_CHANNELS,
    WarpingPath,
    apply_path,
    dtw_path,
    dtw_score,
    local_cost_matrix,
)
from tasign.errors import ConfigurationError, PathMismatchError
from tasign.features import ChannelId, N_CHANNELS, TimeFunctionSet


def tf_from_channels(channels: np.ndarray) -> TimeFunctionSet:
    return TimeFunctionSet(
        channels=np.asarray(channels, dtype=np.float64),
        normalized=True,
        source_meta={},
    )


def tf_from_series(series) -> TimeFunctionSet:
    """Single-channel sequence placed in dX; all other channels zero."""
    series = np.asarray(series, dtype=np.float64)
    channels = np.zeros((N_CHANNELS, series.size))
    channels[ChannelId.dX] = series
    return tf_from_channels(channels)


@lru_cache(maxsize=None)
def monotone_paths(ta: int, tb: int):
    """Every monotone continuous index path from (0,0) to (ta-1, tb-1)."""
    paths = []

    def walk(i, j, acc):
        if i == ta - 1 and j == tb - 1:
            paths.append(tuple(acc))
            return
        if i + 1 < ta and j + 1 < tb:
            walk(i + 1, j + 1, acc + [(i + 1, j + 1)])
        if i + 1 < ta:
            walk(i + 1, j, acc + [(i + 1, j)])
        if j + 1 < tb:
            walk(i, j + 1, acc + [(i, j + 1)])

    walk(0, 0, [(0, 0)])
    return paths


def enumerate_min_distance(cost: np.ndarray) -> float:
    """Brute-force oracle: min total cost over all enumerated paths."""
    best = np.inf
    for path in monotone_paths(*cost.shape):
        total = 0.0
        for i, j in path:
            total = total + cost[i, j]
        best = min(best, total)
    return best


class TestDtwPath:
    def test_identical_inputs_give_zero_and_diagonal(self):
        rng = np.random.default_rng(0)
        tf = tf_from_channels(rng.standard_normal((N_CHANNELS, 12)))
        distance, path = dtw_path(tf, tf)
        assert distance == 0.0
        np.testing.assert_array_equal(
            path.pairs, np.stack([np.arange(12), np.arange(12)], axis=1)
        )

    def test_worked_single_channel_example(self):
        # a = [0,1,2] vs b = [0,2]: minimum cost 1; optimal paths are
        # {(0,0),(1,1),(2,1)} and {(0,0),(1,0),(2,1)}, and the diagonal-first
        # backtrack deterministically returns the latter
        ta = tf_from_series([0.0, 1.0, 2.0])
        tb = tf_from_series([0.0, 2.0])
        distance, path = dtw_path(ta, tb)
        assert distance == 1.0
        cost = local_cost_matrix(ta, tb)
        assert enumerate_min_distance(cost) == 1.0
        assert [tuple(p) for p in path.pairs] == [(0, 0), (1, 0), (2, 1)]

    def test_matches_enumeration_on_random_small_pairs(self):
        rng = np.random.default_rng(7)
        for _ in range(150):
            ta = int(rng.integers(1, 7))
            tb = int(rng.integers(1, 7))
            a = tf_from_channels(rng.standard_normal((N_CHANNELS, ta)))
            b = tf_from_channels(rng.standard_normal((N_CHANNELS, tb)))
            cost = local_cost_matrix(a, b)
            distance, path = dtw_path(a, b)
            assert distance == enumerate_min_distance(cost)
            path.validate()
            # the returned path realizes the optimum
            realized = float(np.sum(cost[path.pairs[:, 0], path.pairs[:, 1]]))
            assert realized == pytest.approx(distance, abs=1e-12)

    def test_requires_normalized_inputs(self):
        tf = TimeFunctionSet(np.zeros((N_CHANNELS, 3)), normalized=False, source_meta={})
        with pytest.raises(ConfigurationError):
            dtw_path(tf, tf)

    def test_empty_cost_channels_rejected(self):
        tf = tf_from_series([1.0, 2.0])
        with pytest.raises(ConfigurationError):
            dtw_path(tf, tf, cost_channels=())

    def test_path_bounds_invariant(self):
        rng = np.random.default_rng(11)
        a = tf_from_channels(rng.standard_normal((N_CHANNELS, 9)))
        b = tf_from_channels(rng.standard_normal((N_CHANNELS, 5)))
        _, path = dtw_path(a, b)
        assert max(9, 5) <= path.length <= 9 + 5 - 1

    def test_equal_length_bounded_by_diagonal(self):
        rng = np.random.default_rng(13)
        a = tf_from_channels(rng.standard_normal((N_CHANNELS, 20)))
        b = tf_from_channels(rng.standard_normal((N_CHANNELS, 20)))
        cost = local_cost_matrix(a, b)
        distance, _ = dtw_path(a, b)
        assert distance <= np.trace(cost) + 1e-12


class TestApplyPath:
    def test_diagonal_is_identity(self):
        rng = np.random.default_rng(1)
        a = tf_from_channels(rng.standard_normal((N_CHANNELS, 8)))
        b = tf_from_channels(rng.standard_normal((N_CHANNELS, 8)))
        pairs = np.stack([np.arange(8), np.arange(8)], axis=1)
        aligned = apply_path(a, b, WarpingPath(pairs=pairs, ta=8, tb=8))
        np.testing.assert_array_equal(aligned.a, a.channels)
        np.testing.assert_array_equal(aligned.b, b.channels)

    def test_column_duplication(self):
        a = tf_from_series([0.0, 1.0])
        b = tf_from_series([0.0, 1.0])
        pairs = np.array([[0, 0], [1, 0], [1, 1]])
        aligned = apply_path(a, b, WarpingPath(pairs=pairs, ta=2, tb=2))
        np.testing.assert_array_equal(aligned.a[ChannelId.dX], [0.0, 1.0, 1.0])
        np.testing.assert_array_equal(aligned.b[ChannelId.dX], [0.0, 0.0, 1.0])
        assert aligned.a.shape[1] == aligned.b.shape[1] == 3

    def test_cost_along_path_reproduces_distance(self):
        rng = np.random.default_rng(2)
        a = tf_from_channels(rng.standard_normal((N_CHANNELS, 30)))
        b = tf_from_channels(rng.standard_normal((N_CHANNELS, 24)))
        distance, path = dtw_path(a, b)
        aligned = apply_path(a, b, path)
        idx = list(DEFAULT_COST_CHANNELS)
        per_step = np.linalg.norm(aligned.a[idx] - aligned.b[idx], axis=0)
        assert float(per_step.sum()) == pytest.approx(distance, rel=1e-12)

    def test_wrong_lengths_rejected(self):
        a = tf_from_series([0.0, 1.0, 2.0])
        b = tf_from_series([0.0, 1.0])
        pairs = np.array([[0, 0], [1, 1]])
        with pytest.raises(PathMismatchError):
            apply_path(a, b, WarpingPath(pairs=pairs, ta=2, tb=2))

    def test_invalid_steps_rejected(self):
        a = tf_from_series([0.0, 1.0, 2.0])
        b = tf_from_series([0.0, 1.0, 2.0])
        pairs = np.array([[0, 0], [2, 2]])  # jumps by 2
        with pytest.raises(PathMismatchError):
            apply_path(a, b, WarpingPath(pairs=pairs, ta=3, tb=3))


class TestDtwScore:
    def test_identical_signatures_score_zero(self):
        rng = np.random.default_rng(3)
        tf = tf_from_channels(rng.standard_normal((N_CHANNELS, 15)))
        assert dtw_score(tf, tf) == 0.0

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        a = tf_from_channels(rng.standard_normal((N_CHANNELS, 18)))
        b = tf_from_channels(rng.standard_normal((N_CHANNELS, 11)))
        assert dtw_score(a, b) == pytest.approx(dtw_score(b, a), abs=1e-12)

    def test_normalization_by_path_length(self):
        a = tf_from_series([0.0, 1.0, 2.0])
        b = tf_from_series([0.0, 2.0])
        distance, path = dtw_path(a, b)
        assert dtw_score(a, b) == distance / path.length
