import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from mfsde.measure import EmpiricalMeasure, mean, second_moment, wasserstein2

from conftest import BASE_SEED


# ---------------------------------------------------------------------------
# construction and moments
# ---------------------------------------------------------------------------


def test_mean_two_points():
    assert mean(EmpiricalMeasure([1.0, 3.0])) == pytest.approx([2.0])


def test_mean_single_dirac():
    assert mean(EmpiricalMeasure([[0.7, -1.2]])) == pytest.approx([0.7, -1.2])


def test_mean_large_normal_cloud_seed_fixed():
    rng = np.random.default_rng(2024)
    cloud = EmpiricalMeasure(rng.standard_normal(1000))
    value = float(mean(cloud)[0])
    # law-of-large-numbers check; exact value frozen from this seed
    assert abs(value) < 0.1
    assert value == pytest.approx(0.014640167714440763, abs=1e-15)


def test_second_moment_values():
    assert second_moment(EmpiricalMeasure([0.0])) == 0.0
    assert second_moment(EmpiricalMeasure([1.0, -1.0])) == 1.0
    assert second_moment(EmpiricalMeasure([[3.0, 4.0]])) == 25.0


def test_rejects_non_finite_points():
    with pytest.raises(ValueError):
        EmpiricalMeasure([1.0, np.nan])
    with pytest.raises(ValueError):
        EmpiricalMeasure([[np.inf, 0.0]])


def test_rejects_empty_cloud():
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.empty((0, 2)))


def test_points_are_read_only():
    mu = EmpiricalMeasure([1.0, 2.0])
    with pytest.raises(ValueError):
        mu.points[0, 0] = 5.0


# ---------------------------------------------------------------------------
# wasserstein2: exact branches
# ---------------------------------------------------------------------------


def test_w2_identical_clouds_is_zero():
    mu = EmpiricalMeasure([[0.0, 1.0], [2.0, -1.0]])
    assert wasserstein2(mu, mu).value == 0.0


def test_w2_sorted_pairing_1d():
    result = wasserstein2(EmpiricalMeasure([0.0, 2.0]), EmpiricalMeasure([1.0, 3.0]))
    assert result.value == pytest.approx(1.0, abs=1e-15)
    assert result.exact and result.method == "sorted_1d"


def test_w2_mismatched_sizes_and_dims():
    with pytest.raises(ValueError):
        wasserstein2(EmpiricalMeasure([0.0]), EmpiricalMeasure([0.0, 1.0]))
    with pytest.raises(ValueError):
        wasserstein2(EmpiricalMeasure([[0.0, 0.0]]), EmpiricalMeasure([0.0]))


def _brute_force_w2(x: np.ndarray, y: np.ndarray) -> float:
    n = x.shape[0]
    best = np.inf
    for perm in itertools.permutations(range(n)):
        cost = sum(float(np.sum((x[i] - y[p]) ** 2)) for i, p in enumerate(perm))
        best = min(best, cost)
    return float(np.sqrt(best / n))


def test_w2_assignment_matches_permutation_enumeration():
    rng = np.random.default_rng(BASE_SEED)
    for _ in range(20):
        n = int(rng.integers(2, 7))
        x = rng.standard_normal((n, 2))
        y = rng.standard_normal((n, 2))
        result = wasserstein2(EmpiricalMeasure(x), EmpiricalMeasure(y))
        assert result.method == "assignment"
        assert result.value == pytest.approx(_brute_force_w2(x, y), abs=1e-12)


def test_w2_projection_lower_bound_n64():
    # 1-d projections contract the distance, so each sorted projected value
    # bounds the 2-d assignment value from below
    rng = np.random.default_rng(BASE_SEED + 1)
    x = rng.standard_normal((64, 2))
    y = 0.5 * rng.standard_normal((64, 2)) + 1.0
    exact = wasserstein2(EmpiricalMeasure(x), EmpiricalMeasure(y)).value
    for theta in np.linspace(0.0, np.pi, 7):
        u = np.array([np.cos(theta), np.sin(theta)])
        proj = wasserstein2(EmpiricalMeasure(x @ u), EmpiricalMeasure(y @ u)).value
        assert proj <= exact + 1e-12


def test_w2_sorted_equals_assignment_1d_100_instances():
    rng = np.random.default_rng(BASE_SEED + 2)
    for _ in range(100):
        n = int(rng.integers(2, 65))
        x = rng.standard_normal(n) * rng.uniform(0.5, 2.0)
        y = rng.standard_normal(n) + rng.uniform(-1.0, 1.0)
        sorted_value = wasserstein2(EmpiricalMeasure(x), EmpiricalMeasure(y)).value
        cost = (x[:, None] - y[None, :]) ** 2
        rows, cols = linear_sum_assignment(cost)
        assignment_value = float(np.sqrt(cost[rows, cols].sum() / n))
        assert abs(sorted_value - assignment_value) <= 1e-12


# ---------------------------------------------------------------------------
# metric properties
# ---------------------------------------------------------------------------

_cloud = st.integers(min_value=1, max_value=8).flatmap(
    lambda n: st.lists(
        st.floats(min_value=-50, max_value=50, allow_nan=False),
        min_size=n,
        max_size=n,
    )
)


@settings(max_examples=50, deadline=None)
@given(_cloud, _cloud, _cloud)
def test_w2_metric_axioms_1d(xs, ys, zs):
    n = min(len(xs), len(ys), len(zs))
    mu = EmpiricalMeasure(xs[:n])
    nu = EmpiricalMeasure(ys[:n])
    pi = EmpiricalMeasure(zs[:n])
    d_mn = wasserstein2(mu, nu).value
    assert d_mn >= 0.0
    assert wasserstein2(nu, mu).value == d_mn
    assert wasserstein2(mu, mu).value == 0.0
    assert d_mn <= wasserstein2(mu, pi).value + wasserstein2(pi, nu).value + 1e-12


def test_w2_metric_axioms_assignment_branch():
    rng = np.random.default_rng(BASE_SEED + 3)
    for _ in range(25):
        n = int(rng.integers(2, 10))
        a = EmpiricalMeasure(rng.standard_normal((n, 3)))
        b = EmpiricalMeasure(rng.standard_normal((n, 3)))
        c = EmpiricalMeasure(rng.standard_normal((n, 3)))
        dab = wasserstein2(a, b).value
        assert wasserstein2(b, a).value == dab
        assert dab <= wasserstein2(a, c).value + wasserstein2(c, b).value + 1e-12


def test_w2_translation():
    rng = np.random.default_rng(BASE_SEED + 4)
    x1 = rng.standard_normal(32)
    shift = 1.75
    d1 = wasserstein2(EmpiricalMeasure(x1), EmpiricalMeasure(x1 + shift)).value
    assert abs(d1 - shift) <= 1e-12
    x2 = rng.standard_normal((32, 2))
    a = np.array([0.6, -0.8])
    d2 = wasserstein2(EmpiricalMeasure(x2), EmpiricalMeasure(x2 + a)).value
    assert abs(d2 - 1.0) <= 1e-12  # |a| = 1


# ---------------------------------------------------------------------------
# sliced branch (N > 256, d > 1)
# ---------------------------------------------------------------------------


def test_w2_sliced_branch_flagged_and_bounded():
    rng = np.random.default_rng(BASE_SEED + 5)
    x = rng.standard_normal((300, 2))
    y = rng.standard_normal((300, 2)) + np.array([2.0, 0.0])
    result = wasserstein2(EmpiricalMeasure(x), EmpiricalMeasure(y))
    assert not result.exact and result.method == "sliced"
    # oracle: direct assignment (cutoff is a runtime policy, not a wall at 300)
    sq_x = np.einsum("nd,nd->n", x, x)
    sq_y = np.einsum("nd,nd->n", y, y)
    cost = sq_x[:, None] + sq_y[None, :] - 2.0 * (x @ y.T)
    rows, cols = linear_sum_assignment(cost)
    exact = float(np.sqrt(cost[rows, cols].sum() / 300))
    assert result.value <= exact + 1e-9
    assert result.value > 0.5 * exact  # sanity: estimate is not degenerate


def test_w2_sliced_deterministic():
    rng = np.random.default_rng(BASE_SEED + 6)
    x = EmpiricalMeasure(rng.standard_normal((257, 3)))
    y = EmpiricalMeasure(rng.standard_normal((257, 3)))
    assert wasserstein2(x, y).value == wasserstein2(x, y).value
