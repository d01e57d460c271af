"""Equal-weight empirical measures and the Wasserstein-2 distance.

A point cloud ``{y^1, ..., y^N}`` in R^d stands for the probability measure
placing mass ``1/N`` on each point.  Only equal-size clouds are compared,
which keeps the distance exact: in one dimension the optimal coupling is the
sorted pairing, and in higher dimension it is an optimal assignment over the
``N x N`` squared-distance matrix.  Above :data:`ASSIGNMENT_MAX_N` points the
assignment problem is replaced by a sliced estimate (averaged random 1-d
projections), and the result is flagged as approximate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "ASSIGNMENT_MAX_N",
    "SLICED_PROJECTIONS",
    "EmpiricalMeasure",
    "W2Result",
    "mean",
    "second_moment",
    "wasserstein2",
]

# Exact assignment is O(N^3); beyond this size fall back to the sliced estimate.
ASSIGNMENT_MAX_N = 256
SLICED_PROJECTIONS = 128


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Equal-weight point cloud: mass ``1/N`` at each row of ``points``.

    ``points`` is coerced to a float64 array of shape ``(N, d)``; a 1-d input
    of length N is read as N scalar points.  All coordinates must be finite.
    The stored array is made read-only so measures can be shared freely
    across threads.
    """

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError(
                f"points must form a non-empty (N, d) array, got shape {np.shape(self.points)}"
            )
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain NaN or Inf coordinates")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class W2Result:
    """Wasserstein-2 value plus how it was obtained.

    ``exact`` is False only for the sliced branch, whose ``value`` is a
    projection-based estimate rather than the true distance.
    """

    value: float
    exact: bool
    method: str

    def __float__(self) -> float:
        return self.value


def mean(mu: EmpiricalMeasure) -> np.ndarray:
    """Componentwise arithmetic mean of the cloud, shape ``(d,)``."""
    return mu.points.mean(axis=0)


def second_moment(mu: EmpiricalMeasure) -> float:
    """Average squared Euclidean norm ``(1/N) sum |y^l|^2``."""
    return float(np.mean(np.einsum("nd,nd->n", mu.points, mu.points)))


def _sorted_1d_sq(x: np.ndarray, y: np.ndarray) -> float:
    diffs = np.sort(x) - np.sort(y)
    return float(np.mean(diffs * diffs))


def _assignment_sq(x: np.ndarray, y: np.ndarray) -> float:
    # cost[i, j] = |x_i - y_j|^2 via explicit differences, and matched costs
    # summed in sorted order, so swapping the arguments is bitwise neutral
    diff = x[:, None, :] - y[None, :, :]
    cost = np.einsum("ijk,ijk->ij", diff, diff)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sort(cost[rows, cols]).sum() / x.shape[0])


def _sliced_sq(x: np.ndarray, y: np.ndarray, n_projections: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_projections, x.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    proj_x = np.sort(x @ dirs.T, axis=0)
    proj_y = np.sort(y @ dirs.T, axis=0)
    return float(np.mean((proj_x - proj_y) ** 2))


def wasserstein2(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    *,
    n_projections: int = SLICED_PROJECTIONS,
    seed: int = 0,
) -> W2Result:
    """Wasserstein-2 distance between two equal-size clouds.

    Branches:
      * d == 1: exact, via the sorted-sample pairing.
      * d > 1 and N <= ASSIGNMENT_MAX_N: exact, via optimal assignment.
      * otherwise: sliced estimate over ``n_projections`` seeded random
        directions, flagged ``exact=False``.

    Raises ValueError on size or dimension mismatch.
    """
    if mu.n != nu.n:
        raise ValueError(f"cloud sizes differ: {mu.n} vs {nu.n}")
    if mu.dim != nu.dim:
        raise ValueError(f"cloud dimensions differ: {mu.dim} vs {nu.dim}")
    if mu.dim == 1:
        sq = _sorted_1d_sq(mu.points[:, 0], nu.points[:, 0])
        return W2Result(float(np.sqrt(sq)), exact=True, method="sorted_1d")
    if mu.n <= ASSIGNMENT_MAX_N:
        sq = _assignment_sq(mu.points, nu.points)
        return W2Result(float(np.sqrt(sq)), exact=True, method="assignment")
    sq = _sliced_sq(mu.points, nu.points, n_projections, seed)
    return W2Result(float(np.sqrt(sq)), exact=False, method="sliced")
