"""Propagation of the interacting particle system under a fixed noise bundle.

All particles share the common increments and each consumes its own
idiosyncratic row, with the empirical measure of the current cloud fed back
into the coefficients.  Two steppers are provided:

* left-point Euler for the Ito dynamics;
* a predictor-corrector (Heun) step consistent with midpoint stochastic
  integration: the predictor is a full Euler step on every particle, the
  corrector re-evaluates the diffusions at the averaged state and at the
  empirical measure of the averaged cloud (the midpoint in the lifted
  product space), while the drift is integrated trapezoidally and the
  correction drift left-point.

With the correction enabled the Heun scheme converges to the same limit as
the Euler scheme; with it disabled it converges to a different process
whenever the common-noise diffusion genuinely depends on the measure, which
is exactly the failure mode the validation studies measure.

Everything is deterministic given ``(bundle, initial states, scheme)``:
per-step particle updates are vectorized elementwise and reductions use
numpy's fixed pairwise summation, so results do not depend on thread count.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import IO, Union

import numpy as np

from .coeffs import CoefficientSet
from .correction import VARIANT_INSIDE, total_correction
from .measure import EmpiricalMeasure
from .noise import NoiseBundle, TimeGrid, initial_normals

__all__ = [
    "Scheme",
    "InitialLaw",
    "EnsemblePath",
    "SimulationError",
    "ito_euler_step",
    "strat_heun_step",
    "simulate",
    "write_trajectory_csv",
    "write_summary_csv",
]


class Scheme(str, enum.Enum):
    ITO_EULER = "ito_euler"
    STRAT_HEUN_CORRECTED = "strat_heun_corrected"
    # exists to demonstrate the failure mode: omitting the correction biases the limit
    STRAT_HEUN_UNCORRECTED = "strat_heun_uncorrected"


class SimulationError(RuntimeError):
    """Raised when a step produces non-finite states; carries the step index."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class InitialLaw:
    """Square-integrable initial condition: point mass or isotropic normal.

    ``std = 0`` gives i.i.d. copies of the point ``mean``; otherwise each
    particle draws ``mean + std * Z`` with ``Z`` standard normal from the
    dedicated per-particle initial-condition stream of the seed.
    """

    mean: np.ndarray
    std: float = 0.0

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        if mean.ndim != 1 or not np.all(np.isfinite(mean)):
            raise ValueError("initial mean must be a finite vector")
        if not (self.std >= 0 and np.isfinite(self.std)):
            raise ValueError(f"initial std must be finite and nonnegative, got {self.std}")
        mean.flags.writeable = False
        object.__setattr__(self, "mean", mean)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def sample(self, seed: int, n_particles: int) -> np.ndarray:
        states = np.tile(self.mean, (n_particles, 1))
        if self.std > 0:
            states = states + self.std * initial_normals(seed, n_particles, self.dim)
        return states


@dataclass(frozen=True)
class EnsemblePath:
    """Time-indexed states of all particles under one scheme and bundle."""

    grid: TimeGrid
    states: np.ndarray  # (n_steps + 1, N, d)
    scheme: Scheme
    model: str
    seed: int

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=np.float64)
        if states.ndim != 3 or states.shape[0] != self.grid.n_steps + 1:
            raise ValueError(
                f"states must have shape (n_steps + 1, N, d), got {states.shape}"
            )
        states.flags.writeable = False
        object.__setattr__(self, "states", states)

    @property
    def n_particles(self) -> int:
        return self.states.shape[1]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]

    def measure_at(self, step: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.states[step])


def _apply_diffusions(
    s0: np.ndarray, s1: np.ndarray, dw0: np.ndarray, dw1: np.ndarray, n: int, d: int, m: int
) -> np.ndarray:
    common = s0 @ dw0  # (..., d, m) @ (m,) -> (..., d)
    idio = np.einsum("ndm,nm->nd", np.broadcast_to(s1, (n, d, m)), dw1)
    return common + idio


def ito_euler_step(
    cs: CoefficientSet,
    t: float,
    states: np.ndarray,
    mu: EmpiricalMeasure,
    dw0: np.ndarray,
    dw1: np.ndarray,
    dt: float,
) -> np.ndarray:
    """One left-point Euler step for the whole cloud.

    ``states`` is ``(N, d)``, ``dw0`` the shared common increment ``(m,)``
    and ``dw1`` the per-particle increments ``(N, m)``.
    """
    n, d = states.shape
    bv = np.asarray(cs.b(t, states, mu), dtype=np.float64)
    s0 = np.asarray(cs.sigma0(t, states, mu), dtype=np.float64)
    s1 = np.asarray(cs.sigma1(t, states, mu), dtype=np.float64)
    return states + bv * dt + _apply_diffusions(s0, s1, dw0, dw1, n, d, cs.m)


def strat_heun_step(
    cs: CoefficientSet,
    t: float,
    states: np.ndarray,
    mu: EmpiricalMeasure,
    dw0: np.ndarray,
    dw1: np.ndarray,
    dt: float,
    *,
    corrected: bool = True,
    variant: str = VARIANT_INSIDE,
    fd_fallback: bool = True,
) -> np.ndarray:
    """One predictor-corrector step of the midpoint scheme.

    Predictor: full Euler step with drift ``b - correction``.  Corrector:
    diffusions at ``(t + dt/2, (Y + predictor)/2)`` and the empirical
    measure of the averaged cloud, reusing the same increments; drift
    trapezoidal between the endpoint clouds; correction drift left-point.
    With ``corrected=False`` the correction is still a (zero) array so both
    branches execute identical arithmetic.
    """
    n, d = states.shape
    if corrected:
        corr = total_correction(cs, t, states, mu, variant=variant, fd_fallback=fd_fallback).total
    else:
        corr = np.zeros((n, d))

    b_start = np.asarray(cs.b(t, states, mu), dtype=np.float64)
    s0 = np.asarray(cs.sigma0(t, states, mu), dtype=np.float64)
    s1 = np.asarray(cs.sigma1(t, states, mu), dtype=np.float64)
    noise = _apply_diffusions(s0, s1, dw0, dw1, n, d, cs.m)
    predictor = states + (b_start - corr) * dt + noise

    midpoint = 0.5 * (states + predictor)
    mu_mid = EmpiricalMeasure(midpoint)
    t_mid = t + 0.5 * dt
    s0_mid = np.asarray(cs.sigma0(t_mid, midpoint, mu_mid), dtype=np.float64)
    s1_mid = np.asarray(cs.sigma1(t_mid, midpoint, mu_mid), dtype=np.float64)

    mu_pred = EmpiricalMeasure(predictor)
    b_end = np.asarray(cs.b(t + dt, predictor, mu_pred), dtype=np.float64)

    drift = 0.5 * (b_start + b_end) - corr
    return states + drift * dt + _apply_diffusions(s0_mid, s1_mid, dw0, dw1, n, d, cs.m)


def simulate(
    cs: CoefficientSet,
    scheme: Scheme,
    bundle: NoiseBundle,
    initial: Union[InitialLaw, np.ndarray],
    *,
    variant: str = VARIANT_INSIDE,
    fd_fallback: bool = True,
) -> EnsemblePath:
    """Full trajectory of the particle system on the bundle's grid.

    ``initial`` is either an :class:`InitialLaw` (sampled from the bundle's
    seed) or a ready ``(N, d)`` state array, which callers use to share one
    initial cloud across schemes and refinement levels.
    """
    scheme = Scheme(scheme)
    grid = bundle.grid
    n_particles = bundle.n_particles
    if bundle.m != cs.m:
        raise ValueError(f"bundle has {bundle.m} noise columns, coefficients expect {cs.m}")

    if isinstance(initial, InitialLaw):
        if initial.dim != cs.d:
            raise ValueError(f"initial law has dimension {initial.dim}, expected {cs.d}")
        x0 = initial.sample(bundle.seed, n_particles)
    else:
        x0 = np.asarray(initial, dtype=np.float64)
        if x0.shape != (n_particles, cs.d):
            raise ValueError(
                f"initial states have shape {x0.shape}, expected {(n_particles, cs.d)}"
            )
        if not np.all(np.isfinite(x0)):
            raise ValueError("initial states contain NaN or Inf")

    times = grid.times()
    dt = grid.dt
    idio_by_step = np.ascontiguousarray(bundle.idio.transpose(1, 0, 2))  # (n, N, m)
    states = np.empty((grid.n_steps + 1, n_particles, cs.d))
    states[0] = x0
    cur = x0
    for k in range(grid.n_steps):
        mu = EmpiricalMeasure(cur)
        dw0 = bundle.common[k]
        dw1 = idio_by_step[k]
        if scheme is Scheme.ITO_EULER:
            nxt = ito_euler_step(cs, times[k], cur, mu, dw0, dw1, dt)
        else:
            nxt = strat_heun_step(
                cs,
                times[k],
                cur,
                mu,
                dw0,
                dw1,
                dt,
                corrected=scheme is Scheme.STRAT_HEUN_CORRECTED,
                variant=variant,
                fd_fallback=fd_fallback,
            )
        if not np.all(np.isfinite(nxt)):
            bad = int(np.argwhere(~np.isfinite(nxt))[0][0])
            raise SimulationError(
                k, f"non-finite state for particle {bad} (model {cs.name or '<anonymous>'})"
            )
        states[k + 1] = nxt
        cur = nxt
    return EnsemblePath(grid=grid, states=states, scheme=scheme, model=cs.name, seed=bundle.seed)


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trajectory_csv(path: EnsemblePath, stream: IO[str]) -> None:
    """Long-format trajectory table with columns ``t,particle,component,value``."""
    times = path.grid.times()
    stream.write("t,particle,component,value\n")
    for step, t in enumerate(times):
        frame = path.states[step]
        ts = _fmt(t)
        for particle in range(path.n_particles):
            for comp in range(path.dim):
                stream.write(f"{ts},{particle},{comp},{_fmt(frame[particle, comp])}\n")


def write_summary_csv(path: EnsemblePath, stream: IO[str]) -> None:
    """Per-time conditional moments: mean per component plus second moment."""
    times = path.grid.times()
    headers = ["t"] + [f"cond_mean_{k}" for k in range(path.dim)] + ["cond_second_moment"]
    stream.write(",".join(headers) + "\n")
    for step, t in enumerate(times):
        frame = path.states[step]
        means = frame.mean(axis=0)
        second = float(np.mean(np.einsum("nd,nd->n", frame, frame)))
        cells = [_fmt(t)] + [_fmt(v) for v in means] + [_fmt(second)]
        stream.write(",".join(cells) + "\n")
