"""Brownian increment tables with counter-based generation and refinement.

One bundle holds the increments of the common Brownian motion and of the N
idiosyncratic ones on a uniform grid.  Every stream is addressed by
``(seed, role, particle)`` through a Philox key, and within a stream the
refinement level selects a disjoint counter block, so any entry is
reproducible in isolation: generation order and parallelism cannot change
the tables, and refining a bundle draws bridge midpoints from counter
blocks never touched by coarser levels.

Normals are produced by inverse-CDF transform of one 64-bit Philox word
each, which keeps the entry-to-counter correspondence exact.

Refinement halves the step: each coarse increment ``D`` over ``[t, t+dt]``
splits into ``D/2 + Z`` and its complement, with ``Z`` normal of variance
``dt/4`` -- the conditional (bridge) law of the midpoint -- and the
complement computed as an exact difference so consecutive fine pairs sum
back to the coarse increment to rounding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

__all__ = [
    "TimeGrid",
    "NoiseBundle",
    "generate",
    "refine",
    "initial_normals",
    "save_bundle",
    "load_bundle",
]

ROLE_COMMON = 0
ROLE_IDIO = 1
ROLE_INITIAL = 2

_MASK64 = (1 << 64) - 1
_HEADER = struct.Struct("<QQQQdQ")  # seed, N, m, n_steps, horizon, level


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on ``[0, horizon]`` with ``n_steps`` steps."""

    horizon: float
    n_steps: int

    def __post_init__(self) -> None:
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise ValueError(f"horizon must be positive and finite, got {self.horizon}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be at least 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def times(self) -> np.ndarray:
        """Grid times ``t_0 = 0, ..., t_{n_steps} = horizon`` (exact endpoints)."""
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    def refined(self) -> "TimeGrid":
        return TimeGrid(self.horizon, 2 * self.n_steps)


@dataclass(frozen=True)
class NoiseBundle:
    """Increment tables for one realization of all driving noises.

    ``common`` has shape ``(n_steps, m)`` and ``idio`` shape
    ``(N, n_steps, m)``; entries are increments, already scaled to variance
    ``dt``.  ``level`` counts how many refinements produced this bundle and
    selects the counter block used for the next one.
    """

    grid: TimeGrid
    common: np.ndarray
    idio: np.ndarray
    seed: int
    level: int = 0

    def __post_init__(self) -> None:
        common = np.asarray(self.common, dtype=np.float64)
        idio = np.asarray(self.idio, dtype=np.float64)
        n = self.grid.n_steps
        if common.ndim != 2 or common.shape[0] != n:
            raise ValueError(f"common table has shape {common.shape}, expected ({n}, m)")
        if idio.ndim != 3 or idio.shape[1] != n or idio.shape[2] != common.shape[1]:
            raise ValueError(
                f"idio table has shape {idio.shape}, expected (N, {n}, {common.shape[1]})"
            )
        common = common.copy()
        idio = idio.copy()
        common.flags.writeable = False
        idio.flags.writeable = False
        object.__setattr__(self, "common", common)
        object.__setattr__(self, "idio", idio)

    @property
    def n_particles(self) -> int:
        return self.idio.shape[0]

    @property
    def m(self) -> int:
        return self.common.shape[1]


def _standard_normals(seed: int, role: int, particle: int, level: int, count: int) -> np.ndarray:
    """``count`` deterministic N(0,1) draws for one (seed, role, particle, level)."""
    key = [np.uint64(seed & _MASK64), np.uint64(((role & 0xF) << 60) | particle)]
    bg = Philox(key=key, counter=[0, 0, np.uint64(level), 0])
    raw = bg.random_raw(count)
    u = (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53 + 2.0**-54
    return ndtri(u)


def generate(seed: int, grid: TimeGrid, n_particles: int, m: int) -> NoiseBundle:
    """Fresh increment tables for ``n_particles`` idiosyncratic noises plus the common one."""
    if n_particles < 1 or m < 1:
        raise ValueError(f"need n_particles >= 1 and m >= 1, got {n_particles}, {m}")
    n = grid.n_steps
    scale = np.sqrt(grid.dt)
    common = _standard_normals(seed, ROLE_COMMON, 0, 0, n * m).reshape(n, m) * scale
    idio = np.empty((n_particles, n, m))
    for l in range(n_particles):
        idio[l] = _standard_normals(seed, ROLE_IDIO, l, 0, n * m).reshape(n, m) * scale
    return NoiseBundle(grid=grid, common=common, idio=idio, seed=seed, level=0)


def _refine_row(
    coarse: np.ndarray, seed: int, role: int, particle: int, level: int, dt_fine: float
) -> np.ndarray:
    n, m = coarse.shape
    xi = _standard_normals(seed, role, particle, level, n * m).reshape(n, m)
    first = 0.5 * coarse + np.sqrt(0.5 * dt_fine) * xi
    second = coarse - first
    fine = np.empty((2 * n, m))
    fine[0::2] = first
    fine[1::2] = second
    return fine


def refine(bundle: NoiseBundle) -> NoiseBundle:
    """Bridge-refined bundle on twice as many steps, same underlying paths."""
    grid = bundle.grid.refined()
    level = bundle.level + 1
    dt_fine = grid.dt
    common = _refine_row(bundle.common, bundle.seed, ROLE_COMMON, 0, level, dt_fine)
    idio = np.empty((bundle.n_particles, grid.n_steps, bundle.m))
    for l in range(bundle.n_particles):
        idio[l] = _refine_row(bundle.idio[l], bundle.seed, ROLE_IDIO, l, level, dt_fine)
    return NoiseBundle(grid=grid, common=common, idio=idio, seed=bundle.seed, level=level)


def initial_normals(seed: int, n_particles: int, d: int) -> np.ndarray:
    """Per-particle N(0,1) draws for initial conditions, shape ``(N, d)``.

    Streamed per particle so permuting particles together with their noise
    rows permutes the sampled initial states identically.
    """
    out = np.empty((n_particles, d))
    for l in range(n_particles):
        out[l] = _standard_normals(seed, ROLE_INITIAL, l, 0, d)
    return out


# ---------------------------------------------------------------------------
# Binary dump/load (documented little-endian layout)
# ---------------------------------------------------------------------------
#
# header: seed, N, m, n_steps as uint64; horizon as float64; level as uint64
# body:   common table then idio table, row-major float64


def save_bundle(bundle: NoiseBundle, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                bundle.seed & _MASK64,
                bundle.n_particles,
                bundle.m,
                bundle.grid.n_steps,
                bundle.grid.horizon,
                bundle.level,
            )
        )
        fh.write(np.ascontiguousarray(bundle.common, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(bundle.idio, dtype="<f8").tobytes())


def load_bundle(path: str) -> NoiseBundle:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise ValueError(f"{path}: truncated bundle header")
        seed, n_particles, m, n_steps, horizon, level = _HEADER.unpack(header)
        grid = TimeGrid(horizon, int(n_steps))
        body = np.frombuffer(fh.read(), dtype="<f8")
    expected = n_steps * m + n_particles * n_steps * m
    if body.size != expected:
        raise ValueError(f"{path}: expected {expected} table entries, found {body.size}")
    common = body[: n_steps * m].reshape(int(n_steps), int(m))
    idio = body[n_steps * m :].reshape(int(n_particles), int(n_steps), int(m))
    return NoiseBundle(grid=grid, common=common, idio=idio, seed=int(seed), level=int(level))
