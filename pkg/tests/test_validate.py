import numpy as np
import pytest

from mfsde.coeffs import const_diff, full_linear, linear_mean
from mfsde.lions import (
    exp_mean_functional,
    second_moment_functional,
    squared_mean_functional,
)
from mfsde.noise import TimeGrid, generate
from mfsde.sim import InitialLaw, Scheme, simulate
from mfsde.validate import (
    bracket_criteria,
    bracket_study,
    closedform_criteria,
    closedform_study,
    equivalence_criteria,
    equivalence_study,
    exact_linear_mean_terminal,
    fit_loglog_slope,
    format_criteria,
    lions_criteria,
    lions_sweep,
)

from conftest import BASE_SEED

INIT = InitialLaw(mean=np.array([1.0]))
SEEDS4 = [BASE_SEED + i for i in range(4)]


def test_fit_loglog_slope_recovers_power_law():
    dts = [2.0**-k for k in range(3, 9)]
    errors = [3.0 * dt**0.5 for dt in dts]
    assert fit_loglog_slope(dts, errors) == pytest.approx(0.5, abs=1e-12)
    assert fit_loglog_slope(dts, errors, skip_first=True) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValueError):
        fit_loglog_slope([1.0], [1.0])
    with pytest.raises(ValueError):
        fit_loglog_slope([0.5, 0.25], [0.0, 1.0])


# ---------------------------------------------------------------------------
# equivalence
# ---------------------------------------------------------------------------


def test_equivalence_const_diff_degenerate():
    report = equivalence_study(const_diff(), 32, TimeGrid(1.0, 8), 3, SEEDS4[:2], INIT)
    assert report.corrected_gaps == report.uncorrected_gaps
    assert all(g == 0.0 for g in report.corrected_gaps)
    results = equivalence_criteria(report, expect_uncorrected_bias=False)
    assert all(r.passed for r in results)


def test_equivalence_linear_mean_discriminates():
    cs = linear_mean(beta=0.1, c=0.5, a=0.0, s=0.3)
    report = equivalence_study(cs, 200, TimeGrid(1.0, 16), 4, SEEDS4, INIT)
    # fitted per-halving decay: corrected shrinks, uncorrected plateaus near 1
    assert report.corrected_per_halving > report.uncorrected_per_halving
    assert report.uncorrected_per_halving == pytest.approx(1.0, abs=0.15)
    assert report.uncorrected_gaps[-1] > 5 * report.corrected_gaps[-1]
    assert not report.uncorrected_monotone  # the negative control
    results = equivalence_criteria(report)
    by_id = {r.cid: r for r in results}
    assert by_id["scheme-equivalence/negative-control"].passed
    assert by_id["scheme-equivalence/uncorrected-excess"].passed


def test_equivalence_thread_count_does_not_change_results():
    cs = linear_mean(beta=0.1, c=0.5, a=0.0, s=0.3)
    r1 = equivalence_study(cs, 64, TimeGrid(1.0, 8), 3, SEEDS4, INIT, n_threads=1)
    r4 = equivalence_study(cs, 64, TimeGrid(1.0, 8), 3, SEEDS4, INIT, n_threads=4)
    assert r1.corrected_gaps == r4.corrected_gaps
    assert r1.uncorrected_gaps == r4.uncorrected_gaps


def test_equivalence_variant_discrimination_full_linear():
    # state-dependent diffusion: the copy-evaluated correction tracks the
    # Euler limit more closely than the self-evaluated one
    cs = full_linear(beta=0.1, c=0.5, gamma=0.2, s=0.3)
    inside = equivalence_study(cs, 200, TimeGrid(1.0, 16), 6, SEEDS4, INIT, variant="inside")
    displayed = equivalence_study(cs, 200, TimeGrid(1.0, 16), 6, SEEDS4, INIT, variant="displayed")
    assert inside.corrected_gaps[-1] < displayed.corrected_gaps[-1]


# ---------------------------------------------------------------------------
# closed form
# ---------------------------------------------------------------------------


def test_closedform_requires_linear_mean_with_zero_a():
    with pytest.raises(ValueError):
        closedform_study(const_diff(), 16, TimeGrid(1.0, 4), 2, SEEDS4[:1], INIT)
    with pytest.raises(ValueError):
        closedform_study(linear_mean(a=0.5), 16, TimeGrid(1.0, 4), 2, SEEDS4[:1], INIT)


def test_closedform_deterministic_reduction_is_exact():
    # c = s = 0, beta = 1: dY = dt integrates exactly on every level
    cs = linear_mean(beta=1.0, c=0.0, a=0.0, s=0.0)
    report = closedform_study(cs, 8, TimeGrid(1.0, 4), 3, SEEDS4[:2], INIT)
    assert max(report.errors) <= 1e-12


def test_closedform_exact_solution_identity():
    # beta = 0: Y_T = Y_0 + m0 (e^{c W0_T - c^2 T/2} - 1) + s W1_T
    cs = linear_mean(beta=0.0, c=0.5, a=0.0, s=0.3)
    bundle = generate(BASE_SEED, TimeGrid(1.0, 64), 8, 1)
    x0 = np.full((8, 1), 1.0)
    exact = exact_linear_mean_terminal(bundle, x0, beta=0.0, c=0.5, s=0.3, m0=1.0)
    w0 = bundle.common[:, 0].sum()
    w1 = bundle.idio[:, :, 0].sum(axis=1)
    by_hand = 1.0 + 1.0 * (np.exp(0.5 * w0 - 0.125) - 1.0) + 0.3 * w1
    assert np.allclose(exact, by_hand, atol=1e-14)


def test_closedform_strong_error_study_small():
    # N = 1000 keeps the finite-ensemble floor below the discretization error
    # over this dt range (recorded slope 0.537)
    cs = linear_mean(beta=0.0, c=0.5, a=0.0, s=0.3)
    seeds = [BASE_SEED + i for i in range(8)]
    report = closedform_study(cs, 1000, TimeGrid(1.0, 16), 5, seeds, INIT, n_threads=2)
    assert all(e > 0 for e in report.errors)
    assert report.errors[0] > report.errors[-1]
    assert 0.2 <= report.slope <= 1.2
    reference = closedform_study(cs, 100, TimeGrid(1.0, 16), 5, seeds, INIT, n_threads=2)
    results = closedform_criteria(report, reference, min_error_drop=1.5)
    assert results[0].cid == "closed-form/strong-order"


def test_closedform_beta_nonzero_uses_time_integral():
    # s = 0 collapses the cloud onto the conditional mean, so the only error
    # left is time discretization; this isolates the m_T = e^{...}(m0 + beta I_T)
    # branch (recorded decay 6.3e-2 -> 8.2e-3 over four halvings)
    cs = linear_mean(beta=0.4, c=0.5, a=0.0, s=0.0)
    seeds = [BASE_SEED + i for i in range(4)]
    report = closedform_study(cs, 4, TimeGrid(1.0, 16), 5, seeds, INIT)
    assert report.errors[-1] < report.errors[0]
    assert report.errors[-1] < 0.02


def test_conditional_mean_error_halves_from_500_to_2000_particles():
    """Ensemble-size consistency probe at fixed dt (recorded ratio 0.63)."""
    cs = linear_mean(beta=0.0, c=0.5, a=0.0, s=0.3)
    seeds = [BASE_SEED + i for i in range(16)]

    def cond_mean_error(n: int) -> float:
        errs = []
        for seed in seeds:
            bundle = generate(seed, TimeGrid(1.0, 256), n, 1)
            path = simulate(cs, Scheme.ITO_EULER, bundle, INIT.sample(seed, n))
            exact = np.exp(0.5 * bundle.common[:, 0].sum() - 0.125)
            errs.append(abs(path.terminal[:, 0].mean() - exact))
        return float(np.mean(errs))

    ratio = cond_mean_error(2000) / cond_mean_error(500)
    assert 0.4 <= ratio <= 0.8


# ---------------------------------------------------------------------------
# bracket
# ---------------------------------------------------------------------------


def test_bracket_study_small_scale():
    cs = linear_mean(beta=0.1, c=0.5, a=0.0, s=0.3)
    seeds = [BASE_SEED + i for i in range(20)]
    report = bracket_study(cs, 500, TimeGrid(1.0, 256), seeds, INIT, n_threads=2)
    # recorded at this scale: relative deviation 1.2%, z = 1.35
    assert report.relative_deviation <= 0.10
    assert abs(report.w1_z_score) <= 3.5
    results = bracket_criteria(report)
    assert results[0].passed


def test_bracket_study_rejects_state_dependent_models():
    with pytest.raises(ValueError):
        bracket_study(full_linear(), 16, TimeGrid(1.0, 8), SEEDS4[:1], INIT)


def test_bracket_const_diff_exactly_zero():
    report = bracket_study(const_diff(), 64, TimeGrid(1.0, 64), SEEDS4, INIT)
    assert report.w0_bracket_mean == 0.0
    assert report.correction_integral_mean == 0.0
    assert report.w1_bracket_mean == 0.0


# ---------------------------------------------------------------------------
# lions sweep
# ---------------------------------------------------------------------------


def _gallery():
    return {
        "second_moment": second_moment_functional(),
        "squared_mean": squared_mean_functional(),
        "exp_mean": exp_mean_functional(),
    }


def test_lions_sweep_quadratics_exact_and_exp_second_order():
    report = lions_sweep(_gallery(), [2, 16], [1e-3, 1e-4], seed=BASE_SEED)
    for name in ("second_moment", "squared_mean"):
        for n in (2, 16):
            # central differences are exact on quadratics, deviations at rounding
            assert report.deviations[name][n][1e-3] < 1e-9
            assert np.isnan(report.slopes[name][n])
    assert report.slopes["exp_mean"][2] == pytest.approx(2.0, abs=0.1)


def test_lions_sweep_criteria():
    report = lions_sweep(_gallery(), [2, 16, 128], [1e-3, 1e-4, 1e-5], seed=BASE_SEED)
    results = lions_criteria(report)
    assert all(r.passed for r in results)
    assert report.max_deviation_at(1e-4) <= 1e-5


def test_lions_sweep_requires_analytic_derivative():
    from mfsde.lions import MeasureFunctional

    with pytest.raises(ValueError):
        lions_sweep({"bare": MeasureFunctional(evaluate=lambda mu: 0.0)}, [2], [1e-4], seed=0)


def test_format_criteria_lines():
    report = lions_sweep(_gallery(), [2], [1e-3, 1e-4], seed=BASE_SEED)
    text = format_criteria(lions_criteria(report))
    assert text.startswith("PASS lions-identity/max-deviation")
    assert text.endswith("\n")
