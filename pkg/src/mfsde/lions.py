"""Measure functionals on point clouds and their Lions derivatives.

A scalar functional ``u`` on probability measures restricts to a function of
N points by evaluating it on the equal-weight cloud.  Differentiating that
restriction in a single point and rescaling by N recovers the Lions
(measure) derivative of ``u`` at that atom; the finite-difference routines
here do exactly that with central differences.  Analytic derivatives, when a
functional carries one, are checked against the finite-difference value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .measure import EmpiricalMeasure, mean, second_moment

__all__ = [
    "DEFAULT_STEP_SCALE",
    "MeasureFunctional",
    "IdentityCheck",
    "empirical_projection",
    "fd_lions_derivative",
    "check_projection_identity",
    "second_moment_functional",
    "squared_mean_functional",
    "exp_mean_functional",
    "FUNCTIONAL_GALLERY",
]

# Central differences on order-1 data: h = 1e-4 * (1 + |y^j|) balances
# truncation (h^2) against rounding (eps / h).
DEFAULT_STEP_SCALE = 1e-4


@dataclass(frozen=True)
class MeasureFunctional:
    """A scalar functional of an empirical measure.

    ``evaluate`` must be deterministic and finite on valid clouds.
    ``lions_derivative``, when present, is the continuous version of the
    measure derivative, evaluated as ``lions_derivative(mu, v)`` for ``v``
    an atom of ``mu`` and returning a ``(d,)`` vector.
    """

    evaluate: Callable[[EmpiricalMeasure], float]
    lions_derivative: Optional[Callable[[EmpiricalMeasure, np.ndarray], np.ndarray]] = None
    name: str = ""


def empirical_projection(u: MeasureFunctional, points: np.ndarray) -> float:
    """Evaluate ``u`` on the equal-weight cloud of ``points``."""
    return float(u.evaluate(EmpiricalMeasure(points)))


def _default_step(point: np.ndarray) -> float:
    return DEFAULT_STEP_SCALE * (1.0 + float(np.linalg.norm(point)))


def fd_lions_derivative(
    u: MeasureFunctional,
    mu: EmpiricalMeasure,
    j: int,
    h: float | None = None,
) -> np.ndarray:
    """Finite-difference Lions derivative of ``u`` at atom ``j`` of ``mu``.

    Component k is ``N * (u(.., y^j + h e_k, ..) - u(.., y^j - h e_k, ..)) / (2h)``
    where the perturbed cloud keeps every other atom fixed.  ``j`` is 0-based.
    ``h`` defaults to ``DEFAULT_STEP_SCALE * (1 + |y^j|)``.
    """
    if not 0 <= j < mu.n:
        raise ValueError(f"atom index {j} outside [0, {mu.n - 1}]")
    if h is None:
        h = _default_step(mu.points[j])
    if h <= 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    pts = np.array(mu.points)
    base = pts[j].copy()
    out = np.empty(mu.dim)
    for k in range(mu.dim):
        pts[j, k] = base[k] + h
        up = u.evaluate(EmpiricalMeasure(pts))
        pts[j, k] = base[k] - h
        down = u.evaluate(EmpiricalMeasure(pts))
        pts[j, k] = base[k]
        out[k] = mu.n * (up - down) / (2.0 * h)
    return out


@dataclass(frozen=True)
class IdentityCheck:
    """Outcome of comparing finite-difference and analytic derivatives."""

    passed: bool
    max_deviation: float
    worst_atom: int


def check_projection_identity(
    u: MeasureFunctional,
    points: np.ndarray,
    tol: float,
    h: float | None = None,
) -> IdentityCheck:
    """Compare the FD Lions derivative against the analytic one at every atom.

    Passes iff the worst absolute componentwise deviation is at most ``tol``.
    Requires ``u.lions_derivative``.
    """
    if u.lions_derivative is None:
        raise ValueError("functional carries no analytic Lions derivative")
    mu = EmpiricalMeasure(points)
    worst = -1.0
    worst_atom = -1
    for j in range(mu.n):
        fd = fd_lions_derivative(u, mu, j, h)
        exact = np.asarray(u.lions_derivative(mu, mu.points[j]), dtype=np.float64)
        dev = float(np.max(np.abs(fd - exact)))
        if dev > worst:
            worst, worst_atom = dev, j
    return IdentityCheck(passed=worst <= tol, max_deviation=worst, worst_atom=worst_atom)


# ---------------------------------------------------------------------------
# Functional gallery (all carry analytic derivatives)
# ---------------------------------------------------------------------------


def second_moment_functional() -> MeasureFunctional:
    """u(mu) = integral of |y|^2, with derivative 2v."""
    return MeasureFunctional(
        evaluate=lambda mu: second_moment(mu),
        lions_derivative=lambda mu, v: 2.0 * np.asarray(v, dtype=np.float64),
        name="second_moment",
    )


def squared_mean_functional() -> MeasureFunctional:
    """u(mu) = |m1(mu)|^2, with derivative 2 m1(mu) (constant in v)."""
    return MeasureFunctional(
        evaluate=lambda mu: float(np.sum(mean(mu) ** 2)),
        lions_derivative=lambda mu, v: 2.0 * mean(mu),
        name="squared_mean",
    )


def exp_mean_functional(direction: np.ndarray | float = 1.0) -> MeasureFunctional:
    """u(mu) = exp(a . m1(mu)), with derivative exp(a . m1) a.

    ``direction`` is the vector a; a scalar is read as a 1-d direction.
    """
    a = np.atleast_1d(np.asarray(direction, dtype=np.float64))

    def _eval(mu: EmpiricalMeasure) -> float:
        return float(np.exp(a @ mean(mu)))

    def _lions(mu: EmpiricalMeasure, v: np.ndarray) -> np.ndarray:
        return float(np.exp(a @ mean(mu))) * a

    return MeasureFunctional(evaluate=_eval, lions_derivative=_lions, name="exp_mean")


FUNCTIONAL_GALLERY = {
    "second_moment": second_moment_functional,
    "squared_mean": squared_mean_functional,
    "exp_mean": exp_mean_functional,
}
