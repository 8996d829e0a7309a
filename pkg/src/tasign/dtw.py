"""Dynamic time warping: optimal path, pair alignment, and the baseline score.

The local cost between sample i of one sequence and sample j of the other is
the Euclidean distance over a configurable channel subset (default: the x/y
first derivatives). The cumulative cost uses the symmetric step set
{(1,0), (0,1), (1,1)} with unit weights and no band constraint; backtracking
breaks ties preferring the diagonal step, then the i-advance, so returned
paths are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigurationError, PathMismatchError
from .features import ChannelId, TimeFunctionSet

DEFAULT_COST_CHANNELS = (ChannelId.dX, ChannelId.dY)


@dataclass
class WarpingPath:
    """Monotone, continuous index-pair path from (0,0) to (ta-1, tb-1)."""

    pairs: np.ndarray  # (L, 2) int array of (i, j)
    ta: int
    tb: int

    @property
    def length(self) -> int:
        return self.pairs.shape[0]

    def validate(self) -> None:
        p = self.pairs
        if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 1:
            raise PathMismatchError("path must be a non-empty (L, 2) index array")
        if tuple(p[0]) != (0, 0) or tuple(p[-1]) != (self.ta - 1, self.tb - 1):
            raise PathMismatchError("path must run from (0,0) to (ta-1, tb-1)")
        if p.min() < 0 or p[:, 0].max() >= self.ta or p[:, 1].max() >= self.tb:
            raise PathMismatchError("path index out of bounds")
        steps = np.diff(p, axis=0)
        if steps.size and (steps.min() < 0 or steps.max() > 1 or steps.max(axis=1).min() < 1):
            raise PathMismatchError("path steps must increment i, j, or both by 1")


@dataclass
class AlignedPair:
    """Two channel matrices resampled to a common length along a warping path."""

    a: np.ndarray  # (23, L)
    b: np.ndarray  # (23, L)
    path: WarpingPath


@numba.njit(cache=True)
def _accumulate(cost):  # pragma: no cover - exercised via dtw_path
    n, m = cost.shape
    acc = np.empty((n, m))
    acc[0, 0] = cost[0, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
        for j in range(1, m):
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = cost[i, j] + best
    return acc


def _backtrack(acc: np.ndarray) -> np.ndarray:
    """Walk the argmin path back from the far corner; diagonal wins ties."""
    i = acc.shape[0] - 1
    j = acc.shape[1] - 1
    rev = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag = acc[i - 1, j - 1]
            up = acc[i - 1, j]
            left = acc[i, j - 1]
            if diag <= up and diag <= left:
                i -= 1
                j -= 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        rev.append((i, j))
    return np.array(rev[::-1], dtype=np.int64)


def local_cost_matrix(
    tfa: TimeFunctionSet,
    tfb: TimeFunctionSet,
    cost_channels: tuple[ChannelId, ...] = DEFAULT_COST_CHANNELS,
) -> np.ndarray:
    idx = list(cost_channels)
    if not idx:
        raise ConfigurationError("cost_channels must not be empty")
    return cdist(tfa.channels[idx].T, tfb.channels[idx].T, metric="euclidean")


def dtw_path(
    tfa: TimeFunctionSet,
    tfb: TimeFunctionSet,
    cost_channels: tuple[ChannelId, ...] = DEFAULT_COST_CHANNELS,
) -> tuple[float, WarpingPath]:
    """Minimum cumulative cost and one arg-min warping path."""
    if not tfa.normalized or not tfb.normalized:
        raise ConfigurationError("dtw_path expects normalized time functions")
    cost = local_cost_matrix(tfa, tfb, cost_channels)
    acc = _accumulate(cost)
    pairs = _backtrack(acc)
    path = WarpingPath(pairs=pairs, ta=tfa.length, tb=tfb.length)
    return float(acc[-1, -1]), path


def apply_path(
    tfa: TimeFunctionSet, tfb: TimeFunctionSet, path: WarpingPath
) -> AlignedPair:
    """Duplicate columns along the path so both sides share its length."""
    if path.ta != tfa.length or path.tb != tfb.length:
        raise PathMismatchError(
            f"path built for ({path.ta}, {path.tb}) applied to "
            f"({tfa.length}, {tfb.length})"
        )
    path.validate()
    return AlignedPair(
        a=tfa.channels[:, path.pairs[:, 0]],
        b=tfb.channels[:, path.pairs[:, 1]],
        path=path,
    )


def dtw_score(
    tfa: TimeFunctionSet,
    tfb: TimeFunctionSet,
    cost_channels: tuple[ChannelId, ...] = DEFAULT_COST_CHANNELS,
) -> float:
    """Path-length-normalized DTW dissimilarity (higher = more dissimilar)."""
    distance, path = dtw_path(tfa, tfb, cost_channels)
    return distance / path.length
