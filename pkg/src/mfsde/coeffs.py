"""Coefficient sets for mean-field dynamics, plus a gallery of test models.

A :class:`CoefficientSet` bundles the drift ``b`` and the two diffusion
matrices ``sigma0`` (against the common noise) and ``sigma1`` (against the
idiosyncratic noise), together with optional analytic derivatives:

* ``dmu_sigma0(t, x, mu, v)`` -- the Lions derivative of each entry of
  ``sigma0`` with respect to the measure, indexed ``(i, j, k)`` for entry
  ``(i, j)`` differentiated in coordinate ``k`` of the atom ``v``;
* ``dy_sigma0`` / ``dy_sigma1`` -- spatial gradients, same ``(i, j, k)``
  layout with ``k`` the state coordinate.

Batching convention: the state argument ``x`` has shape ``(..., d)`` and all
callables broadcast over the leading batch dimensions, returning
``(..., d)`` for ``b``, ``(..., d, m)`` for the diffusions and
``(..., d, m, d)`` for derivative tensors.  ``dmu_sigma0`` broadcasts the
batch dimensions of ``x`` and ``v`` together.

The gallery models are one-dimensional (``d = m = 1``) and each supplies its
analytic derivatives in closed form, so correction terms computed from them
are exact.
"""

from __future__ import annotations

import inspect
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .lions import DEFAULT_STEP_SCALE, MeasureFunctional, fd_lions_derivative
from .measure import EmpiricalMeasure, mean, second_moment

__all__ = [
    "CoefficientSet",
    "CoefficientValues",
    "DerivativeCheck",
    "eval_coefficients",
    "fd_check_derivatives",
    "linear_mean",
    "const_diff",
    "var_diff",
    "full_linear",
    "GALLERY",
    "make_model",
]

CoefficientFn = Callable[[float, np.ndarray, EmpiricalMeasure], np.ndarray]
MeasureDerivativeFn = Callable[[float, np.ndarray, EmpiricalMeasure, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CoefficientSet:
    """Drift and diffusion maps ``(b, sigma0, sigma1)`` with optional derivatives.

    ``depends_on_x`` is False when all maps ignore the state argument, in
    which case spatial correction terms vanish identically.
    ``dmu_depends_on_x`` marks whether ``dmu_sigma0`` varies with ``x``
    (False for every gallery model); correction assembly uses it to avoid a
    per-particle loop.
    """

    d: int
    m: int
    b: CoefficientFn
    sigma0: CoefficientFn
    sigma1: CoefficientFn
    dmu_sigma0: Optional[MeasureDerivativeFn] = None
    dy_sigma0: Optional[CoefficientFn] = None
    dy_sigma1: Optional[CoefficientFn] = None
    depends_on_x: bool = False
    dmu_depends_on_x: bool = False
    name: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.d < 1 or self.m < 1:
            raise ValueError(f"dimensions must be positive, got d={self.d}, m={self.m}")


class CoefficientValues(NamedTuple):
    b: np.ndarray
    sigma0: np.ndarray
    sigma1: np.ndarray


def eval_coefficients(
    cs: CoefficientSet, t: float, x: np.ndarray, mu: EmpiricalMeasure
) -> CoefficientValues:
    """The triple ``(b, sigma0, sigma1)`` at ``(t, x, mu)``, shapes checked."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != cs.d:
        raise ValueError(f"state has dimension {x.shape[-1]}, coefficients expect {cs.d}")
    if mu.dim != cs.d:
        raise ValueError(f"measure has dimension {mu.dim}, coefficients expect {cs.d}")
    batch = x.shape[:-1]
    bv = np.asarray(cs.b(t, x, mu), dtype=np.float64)
    s0 = np.asarray(cs.sigma0(t, x, mu), dtype=np.float64)
    s1 = np.asarray(cs.sigma1(t, x, mu), dtype=np.float64)
    if bv.shape != batch + (cs.d,):
        raise ValueError(f"drift returned shape {bv.shape}, expected {batch + (cs.d,)}")
    expected = batch + (cs.d, cs.m)
    if s0.shape != expected or s1.shape != expected:
        raise ValueError(
            f"diffusions returned shapes {s0.shape}, {s1.shape}, expected {expected}"
        )
    return CoefficientValues(bv, s0, s1)


# ---------------------------------------------------------------------------
# Derivative verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DerivativeCheck:
    """Worst deviations between analytic and finite-difference derivatives."""

    passed: bool
    max_deviation: float
    measure_deviation: Optional[float]
    spatial_deviation: Optional[float]


def _fd_spatial(
    sigma: CoefficientFn, t: float, x: np.ndarray, mu: EmpiricalMeasure, h: float
) -> np.ndarray:
    """Central differences of ``sigma`` in the state, laid out ``(i, j, k)``."""
    d = x.shape[-1]
    base = np.asarray(sigma(t, x, mu), dtype=np.float64)
    out = np.empty(base.shape + (d,))
    for k in range(d):
        xp = np.array(x)
        xp[..., k] += h
        xm = np.array(x)
        xm[..., k] -= h
        up = np.asarray(sigma(t, xp, mu), dtype=np.float64)
        down = np.asarray(sigma(t, xm, mu), dtype=np.float64)
        out[..., k] = (up - down) / (2.0 * h)
    return out


def fd_check_derivatives(
    cs: CoefficientSet,
    t: float,
    x: np.ndarray,
    mu: EmpiricalMeasure,
    tol: float,
    h: float | None = None,
) -> DerivativeCheck:
    """Validate the supplied analytic derivatives entrywise.

    ``dmu_sigma0`` is checked against the finite-difference Lions derivative
    of each entry ``sigma0[i, j]`` at every atom of ``mu``; ``dy_sigma0`` and
    ``dy_sigma1`` against central spatial differences.  ``x`` must be a
    single state of shape ``(d,)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (cs.d,):
        raise ValueError(f"expected a single state of shape ({cs.d},), got {x.shape}")
    measure_dev: Optional[float] = None
    spatial_dev: Optional[float] = None

    if cs.dmu_sigma0 is not None:
        analytic = np.asarray(cs.dmu_sigma0(t, x, mu, mu.points), dtype=np.float64)
        worst = 0.0
        for i in range(cs.d):
            for j in range(cs.m):
                entry = MeasureFunctional(
                    evaluate=lambda nu, i=i, j=j: float(
                        np.asarray(cs.sigma0(t, x, nu))[i, j]
                    )
                )
                for l in range(mu.n):
                    fd = fd_lions_derivative(entry, mu, l, h)
                    worst = max(worst, float(np.max(np.abs(fd - analytic[l, i, j, :]))))
        measure_dev = worst

    if cs.depends_on_x:
        hx = h if h is not None else DEFAULT_STEP_SCALE * (1.0 + float(np.linalg.norm(x)))
        worst = 0.0
        for sigma, dy in ((cs.sigma0, cs.dy_sigma0), (cs.sigma1, cs.dy_sigma1)):
            if dy is None:
                continue
            fd = _fd_spatial(sigma, t, x, mu, hx)
            analytic = np.asarray(dy(t, x, mu), dtype=np.float64)
            worst = max(worst, float(np.max(np.abs(fd - analytic))))
        spatial_dev = worst

    devs = [v for v in (measure_dev, spatial_dev) if v is not None]
    max_dev = max(devs) if devs else 0.0
    return DerivativeCheck(
        passed=max_dev <= tol,
        max_deviation=max_dev,
        measure_deviation=measure_dev,
        spatial_deviation=spatial_dev,
    )


# ---------------------------------------------------------------------------
# Model gallery (d = m = 1)
# ---------------------------------------------------------------------------


def _const_field(value: float, x: np.ndarray, trailing: tuple[int, ...]) -> np.ndarray:
    return np.broadcast_to(np.float64(value), np.shape(x)[:-1] + trailing)


def _const_dmu(value: float, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    bshape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(v)[:-1])
    return np.broadcast_to(np.float64(value), bshape + (1, 1, 1))


def linear_mean(beta: float = 0.0, c: float = 0.5, a: float = 0.0, s: float = 0.3) -> CoefficientSet:
    """Common-noise diffusion linear in the mean: sigma0 = c m1(mu) + a.

    Drift beta and idiosyncratic diffusion s are constant.  With ``a = 0``
    the conditional mean solves a closed-form scalar equation, which makes
    this the reference model for convergence studies.
    """
    return CoefficientSet(
        d=1,
        m=1,
        b=lambda t, x, mu: _const_field(beta, x, (1,)),
        sigma0=lambda t, x, mu: _const_field(c * float(mean(mu)[0]) + a, x, (1, 1)),
        sigma1=lambda t, x, mu: _const_field(s, x, (1, 1)),
        dmu_sigma0=lambda t, x, mu, v: _const_dmu(c, x, v),
        name="LinearMean",
        params={"beta": beta, "c": c, "a": a, "s": s},
    )


def const_diff(sigma0: float = 1.0, sigma1: float = 0.5) -> CoefficientSet:
    """Constant diffusions, no measure or state dependence (zero correction)."""
    return CoefficientSet(
        d=1,
        m=1,
        b=lambda t, x, mu: _const_field(0.0, x, (1,)),
        sigma0=lambda t, x, mu, _v=sigma0: _const_field(_v, x, (1, 1)),
        sigma1=lambda t, x, mu, _v=sigma1: _const_field(_v, x, (1, 1)),
        dmu_sigma0=lambda t, x, mu, v: _const_dmu(0.0, x, v),
        name="ConstDiff",
        params={"sigma0": sigma0, "sigma1": sigma1},
    )


def var_diff(s: float = 0.3) -> CoefficientSet:
    """Common-noise diffusion equal to the variance of the measure."""

    def _sigma0(t: float, x: np.ndarray, mu: EmpiricalMeasure) -> np.ndarray:
        m1 = float(mean(mu)[0])
        return _const_field(second_moment(mu) - m1 * m1, x, (1, 1))

    def _dmu(t: float, x: np.ndarray, mu: EmpiricalMeasure, v: np.ndarray) -> np.ndarray:
        m1 = float(mean(mu)[0])
        val = 2.0 * np.asarray(v, dtype=np.float64)[..., 0] - 2.0 * m1
        bshape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(v)[:-1])
        return np.broadcast_to(
            np.broadcast_to(val, bshape)[..., None, None, None], bshape + (1, 1, 1)
        )

    return CoefficientSet(
        d=1,
        m=1,
        b=lambda t, x, mu: _const_field(0.0, x, (1,)),
        sigma0=_sigma0,
        sigma1=lambda t, x, mu: _const_field(s, x, (1, 1)),
        dmu_sigma0=_dmu,
        name="VarDiff",
        params={"s": s},
    )


def full_linear(
    beta: float = 0.0, c: float = 0.5, gamma: float = 0.2, s: float = 0.3
) -> CoefficientSet:
    """State- and measure-dependent model: sigma0 = c m1(mu) + gamma x."""

    def _sigma0(t: float, x: np.ndarray, mu: EmpiricalMeasure) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (c * float(mean(mu)[0]) + gamma * x[..., 0])[..., None, None]

    return CoefficientSet(
        d=1,
        m=1,
        b=lambda t, x, mu: _const_field(beta, x, (1,)),
        sigma0=_sigma0,
        sigma1=lambda t, x, mu: _const_field(s, x, (1, 1)),
        dmu_sigma0=lambda t, x, mu, v: _const_dmu(c, x, v),
        dy_sigma0=lambda t, x, mu: _const_field(gamma, x, (1, 1, 1)),
        dy_sigma1=lambda t, x, mu: _const_field(0.0, x, (1, 1, 1)),
        depends_on_x=True,
        name="FullLinear",
        params={"beta": beta, "c": c, "gamma": gamma, "s": s},
    )


GALLERY: dict[str, Callable[..., CoefficientSet]] = {
    "LinearMean": linear_mean,
    "ConstDiff": const_diff,
    "VarDiff": var_diff,
    "FullLinear": full_linear,
}


def make_model(name: str, **params: float) -> CoefficientSet:
    """Instantiate a gallery model by name, validating parameter keys."""
    if name not in GALLERY:
        known = ", ".join(sorted(GALLERY))
        raise ValueError(f"unknown model {name!r}; available models: {known}")
    factory = GALLERY[name]
    allowed = set(inspect.signature(factory).parameters)
    unknown = sorted(set(params) - allowed)
    if unknown:
        raise ValueError(
            f"unknown parameter(s) {unknown} for model {name!r}; accepted: {sorted(allowed)}"
        )
    for key, value in params.items():
        if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
            raise ValueError(f"parameter {key!r} of model {name!r} must be a finite number")
    return factory(**params)
