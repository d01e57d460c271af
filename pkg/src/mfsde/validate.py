"""Experiment layer: studies that turn the conversion claims into numbers.

Four study families:

* **equivalence**: simulate the Euler and Heun schemes on the *same*
  refined noise bundles and track the RMS terminal gap level by level.  The
  corrected Heun gap must shrink under refinement; the uncorrected one
  stalls at the bias whenever the common-noise diffusion depends on the
  measure (the built-in negative control).
* **closed form**: strong error of a scheme against the exact terminal
  state of the linear-mean model, evaluated on the finest refinement of the
  same paths.
* **bracket**: the realized discrete cross-variation of the diffusion path
  against the common noise, compared with twice the time integral of the
  measure correction along the same paths, and against an idiosyncratic
  noise where it must vanish.
* **lions sweep**: finite-difference versus analytic measure derivatives
  over a functional gallery, cloud sizes and step sizes, with the expected
  second-order step dependence.

Every study is reproducible bit for bit from its arguments: seeds map to
noise bundles deterministically, seed-level tasks may run on a thread pool
but are aggregated in fixed seed order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .coeffs import CoefficientSet
from .correction import VARIANT_INSIDE, discrete_cross_variation, measure_correction
from .lions import MeasureFunctional, fd_lions_derivative
from .measure import EmpiricalMeasure
from .noise import NoiseBundle, TimeGrid, generate, refine
from .sim import InitialLaw, Scheme, simulate

__all__ = [
    "ConvergenceReport",
    "EquivalenceReport",
    "BracketReport",
    "LionsSweepReport",
    "CriterionResult",
    "fit_loglog_slope",
    "equivalence_study",
    "closedform_study",
    "bracket_study",
    "lions_sweep",
    "equivalence_criteria",
    "closedform_criteria",
    "bracket_criteria",
    "lions_criteria",
    "format_criteria",
]


def _run_seeds(task: Callable[[int], object], seeds: Sequence[int], n_threads: int) -> list:
    if n_threads <= 1:
        return [task(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        return list(pool.map(task, seeds))


def fit_loglog_slope(xs: Sequence[float], ys: Sequence[float], skip_first: bool = False) -> float:
    """Least-squares slope of log2(y) against log2(x).

    ``skip_first`` drops the first (coarsest) point, which is routinely
    pre-asymptotic in step-size studies.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if skip_first:
        xs, ys = xs[1:], ys[1:]
    if xs.size < 2:
        raise ValueError("need at least two points to fit a slope")
    if np.any(ys <= 0) or np.any(xs <= 0):
        raise ValueError("log-log fit needs positive values")
    lx = np.log2(xs)
    ly = np.log2(ys)
    lx = lx - lx.mean()
    return float((lx @ (ly - ly.mean())) / (lx @ lx))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceReport:
    """Step sizes, errors and the fitted log-log slope of one error study."""

    dts: tuple[float, ...]
    errors: tuple[float, ...]
    slope: float
    metric: str
    model: str
    scheme: str
    n_particles: int
    seeds: tuple[int, ...]
    notes: str = ""


@dataclass(frozen=True)
class EquivalenceReport:
    """Per-level RMS terminal gaps between schemes under shared noise.

    ``*_decay_factors`` are the raw consecutive-level ratios; they fluctuate
    at desk-scale seed counts because the scheme gap is common to all
    particles of an ensemble (only the seeds average it).  The decay flags
    therefore test ``*_per_halving``, the per-halving factor fitted by
    log-log least squares across the whole level range.
    """

    dts: tuple[float, ...]
    corrected_gaps: tuple[float, ...]
    uncorrected_gaps: tuple[float, ...]
    corrected_decay_factors: tuple[float, ...]
    uncorrected_decay_factors: tuple[float, ...]
    corrected_per_halving: float
    uncorrected_per_halving: float
    min_decay_factor: float
    corrected_monotone: bool
    uncorrected_monotone: bool
    model: str
    n_particles: int
    seeds: tuple[int, ...]
    variant: str


@dataclass(frozen=True)
class BracketReport:
    """Seed-averaged discrete brackets against both noises."""

    w0_bracket_mean: float
    correction_integral_mean: float
    relative_deviation: float
    w1_bracket_mean: float
    w1_bracket_se: float
    w1_z_score: float
    model: str
    n_particles: int
    n_steps: int
    seeds: tuple[int, ...]


@dataclass(frozen=True)
class LionsSweepReport:
    """Max FD-vs-analytic deviations over a (functional, N, h) table."""

    cloud_sizes: tuple[int, ...]
    step_sizes: tuple[float, ...]
    deviations: Mapping[str, Mapping[int, Mapping[float, float]]]
    slopes: Mapping[str, Mapping[int, float]]
    seed: int

    def max_deviation_at(self, h: float) -> float:
        return max(
            per_n[h] for per_func in self.deviations.values() for per_n in per_func.values()
        )


@dataclass(frozen=True)
class CriterionResult:
    """One pass/fail line of a study, keyed by a stable identifier."""

    cid: str
    passed: bool
    detail: str


def format_criteria(results: Sequence[CriterionResult]) -> str:
    lines = [f"{'PASS' if r.passed else 'FAIL'} {r.cid}: {r.detail}" for r in results]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Scheme equivalence
# ---------------------------------------------------------------------------


def equivalence_study(
    cs: CoefficientSet,
    n_particles: int,
    base_grid: TimeGrid,
    n_levels: int,
    seeds: Sequence[int],
    initial: InitialLaw,
    *,
    variant: str = VARIANT_INSIDE,
    fd_fallback: bool = True,
    min_decay_factor: float = 1.3,
    n_threads: int = 1,
) -> EquivalenceReport:
    """RMS terminal gaps between Euler and both Heun variants per level.

    Every scheme at every level consumes the same refined bundle and the
    same initial cloud, so the gaps isolate pure scheme differences.
    """
    if n_levels < 1:
        raise ValueError("need at least one refinement level")

    def one_seed(seed: int) -> tuple[np.ndarray, np.ndarray]:
        bundle = generate(seed, base_grid, n_particles, cs.m)
        x0 = initial.sample(seed, n_particles)
        sq_corr = np.empty(n_levels)
        sq_unc = np.empty(n_levels)
        for level in range(n_levels):
            ito = simulate(cs, Scheme.ITO_EULER, bundle, x0)
            heun = simulate(
                cs, Scheme.STRAT_HEUN_CORRECTED, bundle, x0, variant=variant, fd_fallback=fd_fallback
            )
            plain = simulate(
                cs,
                Scheme.STRAT_HEUN_UNCORRECTED,
                bundle,
                x0,
                variant=variant,
                fd_fallback=fd_fallback,
            )
            sq_corr[level] = np.mean(np.sum((ito.terminal - heun.terminal) ** 2, axis=1))
            sq_unc[level] = np.mean(np.sum((ito.terminal - plain.terminal) ** 2, axis=1))
            if level + 1 < n_levels:
                bundle = refine(bundle)
        return sq_corr, sq_unc

    per_seed = _run_seeds(one_seed, seeds, n_threads)
    sq_corr = np.mean([r[0] for r in per_seed], axis=0)
    sq_unc = np.mean([r[1] for r in per_seed], axis=0)
    corrected = np.sqrt(sq_corr)
    uncorrected = np.sqrt(sq_unc)
    dts = tuple(base_grid.horizon / (base_grid.n_steps * 2**lv) for lv in range(n_levels))

    def factors(gaps: np.ndarray) -> tuple[float, ...]:
        # 0/0 means the schemes coincide exactly; call that a neutral factor
        out = []
        for i in range(len(gaps) - 1):
            if gaps[i + 1] > 0:
                out.append(float(gaps[i] / gaps[i + 1]))
            else:
                out.append(float("inf") if gaps[i] > 0 else 1.0)
        return tuple(out)

    def per_halving(gaps: np.ndarray) -> float:
        # gap ~ C * dt^alpha, so the factor gained per halving is 2^alpha
        if n_levels <= 1:
            return 1.0
        if np.any(gaps <= 0):  # exact scheme coincidence somewhere
            return float("inf")
        return float(2.0 ** fit_loglog_slope(dts, gaps))

    f_corr = per_halving(corrected)
    f_unc = per_halving(uncorrected)
    return EquivalenceReport(
        dts=dts,
        corrected_gaps=tuple(map(float, corrected)),
        uncorrected_gaps=tuple(map(float, uncorrected)),
        corrected_decay_factors=factors(corrected),
        uncorrected_decay_factors=factors(uncorrected),
        corrected_per_halving=f_corr,
        uncorrected_per_halving=f_unc,
        min_decay_factor=min_decay_factor,
        corrected_monotone=f_corr >= min_decay_factor,
        uncorrected_monotone=f_unc >= min_decay_factor,
        model=cs.name,
        n_particles=n_particles,
        seeds=tuple(seeds),
        variant=variant,
    )


def equivalence_criteria(
    report: EquivalenceReport,
    *,
    min_uncorrected_ratio: float = 5.0,
    expect_uncorrected_bias: bool = True,
) -> list[CriterionResult]:
    out = [
        CriterionResult(
            "scheme-equivalence/corrected-decay",
            report.corrected_monotone,
            f"corrected gap shrinks by {report.corrected_per_halving:.3f} per halving "
            f"(need >= {report.min_decay_factor}; raw level ratios "
            f"{tuple(round(f, 3) for f in report.corrected_decay_factors)})",
        )
    ]
    if expect_uncorrected_bias:
        ratio = report.uncorrected_gaps[-1] / report.corrected_gaps[-1]
        out.append(
            CriterionResult(
                "scheme-equivalence/uncorrected-excess",
                ratio >= min_uncorrected_ratio,
                f"uncorrected/corrected terminal gap ratio {ratio:.2f} (need >= {min_uncorrected_ratio})",
            )
        )
        out.append(
            CriterionResult(
                "scheme-equivalence/negative-control",
                not report.uncorrected_monotone,
                "uncorrected gaps must fail the monotone-decay test; per-halving factor "
                f"{report.uncorrected_per_halving:.3f} (plateau at {report.uncorrected_gaps[-1]:.3e})",
            )
        )
    return out


# ---------------------------------------------------------------------------
# Closed-form strong error
# ---------------------------------------------------------------------------


def exact_linear_mean_terminal(
    bundle: NoiseBundle, x0: np.ndarray, beta: float, c: float, s: float, m0: float
) -> np.ndarray:
    """Exact terminal states of the linear-mean model on the bundle's paths.

    The limiting conditional mean solves ``dm = beta dt + c m dW0``, giving
    ``m_T = e^{c W0_T - c^2 T / 2} (m0 + beta I_T)`` with
    ``I_T = int_0^T e^{-c W0_u + c^2 u / 2} du`` (trapezoidal on the
    bundle's grid), and each particle satisfies
    ``Y_T = Y_0 + (m_T - m0) + s W1_T``.
    """
    times = bundle.grid.times()
    w0 = np.concatenate(([0.0], np.cumsum(bundle.common[:, 0])))
    horizon = bundle.grid.horizon
    disc = np.exp(c * w0[-1] - 0.5 * c * c * horizon)
    if beta != 0.0:
        integrand = np.exp(-c * w0 + 0.5 * c * c * times)
        m_t = disc * (m0 + beta * float(np.trapezoid(integrand, times)))
    else:
        m_t = m0 * disc
    w1_t = bundle.idio[:, :, 0].sum(axis=1)
    return x0[:, 0] + (m_t - m0) + s * w1_t


def closedform_study(
    cs: CoefficientSet,
    n_particles: int,
    base_grid: TimeGrid,
    n_levels: int,
    seeds: Sequence[int],
    initial: InitialLaw,
    *,
    scheme: Scheme = Scheme.ITO_EULER,
    variant: str = VARIANT_INSIDE,
    n_threads: int = 1,
) -> ConvergenceReport:
    """Strong terminal error of ``scheme`` on the linear-mean model.

    Requires the ``LinearMean`` model with ``a = 0`` (the closed form does
    not extend to ``a != 0``).  The exact solution is evaluated on the
    finest refinement of the same bundle family.
    """
    if cs.name != "LinearMean":
        raise ValueError(f"closed-form study requires the LinearMean model, got {cs.name!r}")
    if cs.params.get("a", 0.0) != 0.0:
        raise ValueError("closed-form study requires a = 0")
    beta = cs.params["beta"]
    c = cs.params["c"]
    s = cs.params["s"]
    m0 = float(initial.mean[0])
    scheme = Scheme(scheme)

    def one_seed(seed: int) -> np.ndarray:
        bundles = [generate(seed, base_grid, n_particles, cs.m)]
        for _ in range(n_levels - 1):
            bundles.append(refine(bundles[-1]))
        x0 = initial.sample(seed, n_particles)
        exact = exact_linear_mean_terminal(bundles[-1], x0, beta, c, s, m0)
        errs = np.empty(n_levels)
        for level, bundle in enumerate(bundles):
            path = simulate(cs, scheme, bundle, x0, variant=variant)
            errs[level] = np.mean(np.abs(path.terminal[:, 0] - exact))
        return errs

    per_seed = _run_seeds(one_seed, seeds, n_threads)
    errors = np.mean(per_seed, axis=0)
    dts = tuple(base_grid.horizon / (base_grid.n_steps * 2**lv) for lv in range(n_levels))
    if n_levels > 2 and np.all(errors > 0):
        slope = fit_loglog_slope(dts, errors, skip_first=True)
    else:  # deterministic reductions can integrate exactly
        slope = float("nan")
    return ConvergenceReport(
        dts=dts,
        errors=tuple(map(float, errors)),
        slope=slope,
        metric="mean_abs_terminal_error",
        model=cs.name,
        scheme=scheme.value,
        n_particles=n_particles,
        seeds=tuple(seeds),
        notes="slope fitted excluding the coarsest level",
    )


def closedform_criteria(
    main: ConvergenceReport,
    reference: ConvergenceReport,
    *,
    slope_band: tuple[float, float] = (0.35, 1.1),
    min_error_drop: float = 4.0,
) -> list[CriterionResult]:
    lo, hi = slope_band
    in_band = lo <= main.slope <= hi
    drop = reference.errors[0] / main.errors[-1]
    return [
        CriterionResult(
            "closed-form/strong-order",
            in_band,
            f"fitted strong-order slope {main.slope:.3f} in [{lo}, {hi}]: {in_band}",
        ),
        CriterionResult(
            "closed-form/error-drop",
            drop >= min_error_drop,
            f"error drop {reference.errors[0]:.3e} (N={reference.n_particles}, coarsest) -> "
            f"{main.errors[-1]:.3e} (N={main.n_particles}, finest): factor {drop:.2f} "
            f"(need >= {min_error_drop})",
        ),
    ]


# ---------------------------------------------------------------------------
# Bracket consistency
# ---------------------------------------------------------------------------


def bracket_study(
    cs: CoefficientSet,
    n_particles: int,
    grid: TimeGrid,
    seeds: Sequence[int],
    initial: InitialLaw,
    *,
    variant: str = VARIANT_INSIDE,
    n_threads: int = 1,
) -> BracketReport:
    """Discrete brackets of the common-noise diffusion path per seed.

    Simulates the Euler scheme, records ``sigma0(t, mu_t)`` along the path,
    and compares its bracket against the common noise (summed over noise
    columns and state components) with twice the left-point time integral
    of the measure correction; the bracket against the first particle's
    idiosyncratic noise is the vanishing control.
    """
    if cs.depends_on_x:
        raise ValueError("bracket study requires measure-only coefficients")
    probe = np.zeros(cs.d)

    def one_seed(seed: int) -> tuple[float, float, float]:
        bundle = generate(seed, grid, n_particles, cs.m)
        path = simulate(cs, Scheme.ITO_EULER, bundle, initial.sample(seed, n_particles))
        times = grid.times()
        sig = np.empty((grid.n_steps + 1, cs.d, cs.m))
        corr_integral = 0.0
        for k in range(grid.n_steps + 1):
            mu = path.measure_at(k)
            sig[k] = np.asarray(cs.sigma0(times[k], probe, mu), dtype=np.float64)
            if k < grid.n_steps:
                corr = measure_correction(cs, times[k], probe, mu, variant=variant)
                corr_integral += 2.0 * float(np.sum(corr)) * grid.dt
        b0 = float(np.sum(discrete_cross_variation(sig, bundle.common)))
        b1 = float(np.sum(discrete_cross_variation(sig, bundle.idio[0])))
        return b0, corr_integral, b1

    rows = np.asarray(_run_seeds(one_seed, seeds, n_threads))
    b0_mean = float(rows[:, 0].mean())
    corr_mean = float(rows[:, 1].mean())
    w1 = rows[:, 2]
    w1_mean = float(w1.mean())
    w1_se = float(w1.std(ddof=1) / np.sqrt(len(seeds))) if len(seeds) > 1 else float("inf")
    rel = abs(b0_mean - corr_mean) / max(abs(corr_mean), np.finfo(float).tiny)
    return BracketReport(
        w0_bracket_mean=b0_mean,
        correction_integral_mean=corr_mean,
        relative_deviation=float(rel),
        w1_bracket_mean=w1_mean,
        w1_bracket_se=w1_se,
        w1_z_score=float(w1_mean / w1_se) if np.isfinite(w1_se) and w1_se > 0 else float("inf"),
        model=cs.name,
        n_particles=n_particles,
        n_steps=grid.n_steps,
        seeds=tuple(seeds),
    )


def bracket_criteria(
    report: BracketReport, *, max_relative_deviation: float = 0.10, max_z: float = 3.0
) -> list[CriterionResult]:
    return [
        CriterionResult(
            "bracket/w0-match",
            report.relative_deviation <= max_relative_deviation,
            f"bracket {report.w0_bracket_mean:.4e} vs correction integral "
            f"{report.correction_integral_mean:.4e}: relative deviation "
            f"{report.relative_deviation:.3%} (need <= {max_relative_deviation:.0%})",
        ),
        CriterionResult(
            "bracket/w1-vanish",
            abs(report.w1_z_score) <= max_z,
            f"idiosyncratic bracket mean {report.w1_bracket_mean:.3e} "
            f"(se {report.w1_bracket_se:.3e}, z {report.w1_z_score:.2f}, need |z| <= {max_z})",
        ),
    ]


# ---------------------------------------------------------------------------
# Lions identity sweep
# ---------------------------------------------------------------------------


def lions_sweep(
    functionals: Mapping[str, MeasureFunctional],
    cloud_sizes: Sequence[int],
    step_sizes: Sequence[float],
    seed: int,
    dim: int = 1,
) -> LionsSweepReport:
    """FD-vs-analytic deviation table over functionals, cloud sizes and steps.

    Clouds are standard-normal draws keyed by ``(seed, N)``.  For each cell
    the deviation is the worst componentwise error over all atoms; per
    ``(functional, N)`` a log-log slope of deviation against step size is
    fitted.  The fit only uses step sizes whose deviation clears a float64
    rounding-floor estimate ``8 eps (|u| + 1) N / (2h)`` -- below that the
    difference quotient measures arithmetic noise, not the truncation order
    -- and is NaN when fewer than two steps clear it (quadratic functionals
    are exact to rounding at every step).
    """
    eps = float(np.finfo(np.float64).eps)
    deviations: dict[str, dict[int, dict[float, float]]] = {}
    slopes: dict[str, dict[int, float]] = {}
    for name, func in functionals.items():
        if func.lions_derivative is None:
            raise ValueError(f"functional {name!r} carries no analytic derivative")
        deviations[name] = {}
        slopes[name] = {}
        for size in cloud_sizes:
            rng = np.random.default_rng((seed, size))
            mu = EmpiricalMeasure(rng.standard_normal((size, dim)))
            scale = abs(float(func.evaluate(mu))) + 1.0
            per_h: dict[float, float] = {}
            for h in step_sizes:
                worst = 0.0
                for j in range(size):
                    fd = fd_lions_derivative(func, mu, j, h)
                    exact = np.asarray(func.lions_derivative(mu, mu.points[j]))
                    worst = max(worst, float(np.max(np.abs(fd - exact))))
                per_h[h] = worst
            deviations[name][size] = per_h
            usable = [
                (h, per_h[h])
                for h in step_sizes
                if per_h[h] > 8.0 * eps * scale * size / (2.0 * h)
            ]
            if len(usable) >= 2:
                slopes[name][size] = fit_loglog_slope(
                    [h for h, _ in usable], [d for _, d in usable]
                )
            else:
                slopes[name][size] = float("nan")
    return LionsSweepReport(
        cloud_sizes=tuple(cloud_sizes),
        step_sizes=tuple(step_sizes),
        deviations=deviations,
        slopes=slopes,
        seed=seed,
    )


def lions_criteria(
    report: LionsSweepReport,
    *,
    tol: float = 1e-5,
    at_step: float = 1e-4,
    slope_functional: str = "exp_mean",
    slope_band: tuple[float, float] = (1.7, 2.3),
) -> list[CriterionResult]:
    worst = report.max_deviation_at(at_step)
    smallest_n = min(report.cloud_sizes)
    slope = report.slopes[slope_functional][smallest_n]
    lo, hi = slope_band
    in_band = np.isfinite(slope) and lo <= slope <= hi
    return [
        CriterionResult(
            "lions-identity/max-deviation",
            worst <= tol,
            f"worst FD-vs-analytic deviation {worst:.3e} at h={at_step:g} (need <= {tol:g})",
        ),
        CriterionResult(
            "lions-identity/h-order",
            bool(in_band),
            f"step-size slope of {slope_functional!r} deviation at N={smallest_n}: "
            f"{slope:.3f} (need within [{lo}, {hi}])",
        ),
    ]
