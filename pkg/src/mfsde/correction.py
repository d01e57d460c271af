"""Drift correction linking the Ito and midpoint (Stratonovich) dynamics.

The correction has up to three pieces, all with the classical ``1/2`` factor:

* a measure part, the ensemble estimate of
  ``E[(dmu_sigma0_{ij})_k(t, x, mu, Y') sigma0_{kj}(t, Y', mu)]`` summed over
  ``(k, j)``, where the expectation runs over an independent copy ``Y'`` of
  the state and is estimated by averaging over the atoms of ``mu``;
* two spatial parts, ``sum_{k,j} dy_k sigma_{ij} sigma_{kj}`` for each of
  the two diffusions, present only when the coefficients depend on ``x``.

Subtracting the total from the drift of the midpoint scheme reproduces the
Ito dynamics; omitting it leaves a bias observable at desk scale.

Two evaluation conventions exist for the measure part when the diffusion
depends on the state: ``sigma0`` evaluated at the copy, inside the ensemble
average ("inside", the default, consistent with the particle-level
cross-variation), or at the particle itself, outside the average
("displayed").  They coincide whenever ``sigma0`` ignores ``x``.

Indexing convention throughout: ``sigma_{kj}`` means state row ``k``, noise
column ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coeffs import CoefficientSet
from .lions import DEFAULT_STEP_SCALE, MeasureFunctional, fd_lions_derivative
from .measure import EmpiricalMeasure

__all__ = [
    "VARIANT_INSIDE",
    "VARIANT_DISPLAYED",
    "CorrectionValue",
    "measure_correction",
    "spatial_correction",
    "total_correction",
    "discrete_cross_variation",
]

VARIANT_INSIDE = "inside"
VARIANT_DISPLAYED = "displayed"
_VARIANTS = (VARIANT_INSIDE, VARIANT_DISPLAYED)


@dataclass(frozen=True)
class CorrectionValue:
    """Correction drift split into its three contributions.

    Each field has the shape of the state batch it was evaluated for,
    ``(..., d)``; ``total`` is their componentwise sum.
    """

    measure_part: np.ndarray
    spatial0_part: np.ndarray
    spatial1_part: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.measure_part + self.spatial0_part + self.spatial1_part


def _fd_dmu_sigma0(
    cs: CoefficientSet,
    t: float,
    x: np.ndarray,
    mu: EmpiricalMeasure,
    h: float | None,
) -> np.ndarray:
    """Finite-difference ``dmu_sigma0`` at every atom, shape ``(L, d, m, d)``.

    Wraps each entry of ``sigma0`` as a measure functional of ``mu`` with
    ``(t, x)`` frozen and differentiates atom by atom.
    """
    out = np.empty((mu.n, cs.d, cs.m, cs.d))
    for i in range(cs.d):
        for j in range(cs.m):
            entry = MeasureFunctional(
                evaluate=lambda nu, i=i, j=j: float(np.asarray(cs.sigma0(t, x, nu))[i, j])
            )
            for l in range(mu.n):
                out[l, i, j, :] = fd_lions_derivative(entry, mu, l, h)
    return out


def _dmu_at_atoms(
    cs: CoefficientSet,
    t: float,
    x_ref: np.ndarray,
    mu: EmpiricalMeasure,
    fd_fallback: bool,
    h: float | None,
) -> np.ndarray:
    if cs.dmu_sigma0 is not None:
        return np.asarray(cs.dmu_sigma0(t, x_ref, mu, mu.points), dtype=np.float64)
    if not fd_fallback:
        raise ValueError(
            f"model {cs.name or '<anonymous>'} supplies no dmu_sigma0 and the "
            "finite-difference fallback is disabled"
        )
    return _fd_dmu_sigma0(cs, t, x_ref, mu, h)


def measure_correction(
    cs: CoefficientSet,
    t: float,
    x: np.ndarray,
    mu: EmpiricalMeasure,
    *,
    variant: str = VARIANT_INSIDE,
    fd_fallback: bool = True,
    h: float | None = None,
) -> np.ndarray:
    """Measure part of the correction at state ``x``, shape ``(..., d)``.

    Component ``i`` is ``1/2 sum_{k,j} (1/L) sum_l dmu[l, i, j, k] * s0[k, j]``
    with ``s0`` evaluated at atom ``l`` ("inside") or at ``x`` ("displayed").
    The returned value is the amount to subtract from the drift of the
    midpoint scheme.
    """
    if variant not in _VARIANTS:
        raise ValueError(f"unknown correction variant {variant!r}; use one of {_VARIANTS}")
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim > 1

    if batched and cs.dmu_depends_on_x:
        # no structure to exploit: evaluate particle by particle
        rows = [
            measure_correction(cs, t, xi, mu, variant=variant, fd_fallback=fd_fallback, h=h)
            for xi in x
        ]
        return np.stack(rows)

    x_ref = x[0] if batched else x
    dmu = _dmu_at_atoms(cs, t, x_ref, mu, fd_fallback, h)  # (L, d, m, d)

    if variant == VARIANT_INSIDE:
        sig_atoms = np.asarray(cs.sigma0(t, mu.points, mu), dtype=np.float64)  # (L, d, m)
        vec = 0.5 * np.einsum("lijk,lkj->i", dmu, sig_atoms) / mu.n
        if batched:
            return np.broadcast_to(vec, x.shape[:-1] + (cs.d,))
        return vec

    # displayed: average the derivative first, then multiply by sigma0 at x
    avg_dmu = dmu.mean(axis=0)  # (d, m, d)
    sig_x = np.asarray(cs.sigma0(t, x, mu), dtype=np.float64)  # (..., d, m)
    return 0.5 * np.einsum("ijk,...kj->...i", avg_dmu, sig_x)


def spatial_correction(
    cs: CoefficientSet,
    t: float,
    x: np.ndarray,
    mu: EmpiricalMeasure,
    *,
    fd_fallback: bool = True,
    h: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Spatial correction pair ``(for sigma0, for sigma1)``, each ``(..., d)``.

    Component ``i`` of each is ``1/2 sum_{k,j} dy_k sigma_{ij} sigma_{kj}``
    at ``(t, x, mu)``.  Identically zero for state-independent coefficients.
    """
    x = np.asarray(x, dtype=np.float64)
    zero = np.zeros(x.shape[:-1] + (cs.d,))
    if not cs.depends_on_x:
        return zero, zero

    def one(sigma, dy) -> np.ndarray:
        if dy is not None:
            grad = np.asarray(dy(t, x, mu), dtype=np.float64)  # (..., d, m, d)
        elif fd_fallback:
            grad = _fd_spatial_batch(sigma, t, x, mu, h)
        else:
            raise ValueError(
                f"model {cs.name or '<anonymous>'} supplies no spatial derivative "
                "and the finite-difference fallback is disabled"
            )
        sig = np.asarray(sigma(t, x, mu), dtype=np.float64)  # (..., d, m)
        return 0.5 * np.einsum("...ijk,...kj->...i", grad, sig)

    return one(cs.sigma0, cs.dy_sigma0), one(cs.sigma1, cs.dy_sigma1)


def _fd_spatial_batch(sigma, t: float, x: np.ndarray, mu: EmpiricalMeasure, h: float | None) -> np.ndarray:
    d = x.shape[-1]
    base = np.asarray(sigma(t, x, mu), dtype=np.float64)
    out = np.empty(base.shape + (d,))
    for k in range(d):
        step = h if h is not None else DEFAULT_STEP_SCALE * (1.0 + np.abs(x[..., k]))
        xp = np.array(x)
        xp[..., k] += step
        xm = np.array(x)
        xm[..., k] -= step
        up = np.asarray(sigma(t, xp, mu), dtype=np.float64)
        down = np.asarray(sigma(t, xm, mu), dtype=np.float64)
        denom = np.asarray(2.0 * step)
        out[..., k] = (up - down) / denom[..., None, None] if denom.ndim else (up - down) / denom
    return out


def total_correction(
    cs: CoefficientSet,
    t: float,
    x: np.ndarray,
    mu: EmpiricalMeasure,
    *,
    variant: str = VARIANT_INSIDE,
    fd_fallback: bool = True,
    h: float | None = None,
) -> CorrectionValue:
    """All correction pieces at ``(t, x, mu)`` as a :class:`CorrectionValue`."""
    meas = measure_correction(cs, t, x, mu, variant=variant, fd_fallback=fd_fallback, h=h)
    sp0, sp1 = spatial_correction(cs, t, x, mu, fd_fallback=fd_fallback, h=h)
    meas = np.broadcast_to(meas, sp0.shape)
    return CorrectionValue(measure_part=meas, spatial0_part=sp0, spatial1_part=sp1)


def discrete_cross_variation(sigma_path: np.ndarray, increments: np.ndarray):
    """Realized discrete bracket of a coefficient path against noise increments.

    ``sigma_path`` holds ``n + 1`` values on the grid, either scalars (shape
    ``(n + 1,)``) or matrices (shape ``(n + 1, d, m)``); ``increments`` holds
    the ``n`` corresponding noise increments, shape ``(n,)`` or ``(n, m)``.
    Entry ``(i, j)`` of the result is
    ``sum_n (sigma[n+1, i, j] - sigma[n, i, j]) * dW[n, j]``; scalar inputs
    return a plain float.
    """
    sp = np.asarray(sigma_path, dtype=np.float64)
    dw = np.asarray(increments, dtype=np.float64)
    scalar_in = sp.ndim == 1
    if scalar_in:
        sp = sp[:, None, None]
    if dw.ndim == 1:
        dw = dw[:, None]
    if sp.ndim != 3 or dw.ndim != 2:
        raise ValueError(
            f"expected sigma path (n+1, d, m) and increments (n, m), got {sp.shape}, {dw.shape}"
        )
    if sp.shape[0] != dw.shape[0] + 1:
        raise ValueError(
            f"length mismatch: {sp.shape[0]} path values vs {dw.shape[0]} increments"
        )
    if sp.shape[2] != dw.shape[1]:
        raise ValueError(f"noise column mismatch: {sp.shape[2]} vs {dw.shape[1]}")
    bracket = np.einsum("nij,nj->ij", np.diff(sp, axis=0), dw)
    return float(bracket[0, 0]) if scalar_in else bracket
