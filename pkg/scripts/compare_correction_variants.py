#!/usr/bin/env python3
"""Discriminate the two evaluation conventions of the measure correction.

For a state-dependent common-noise diffusion the correction can evaluate
``sigma0`` at the copy particles inside the ensemble average ("inside") or
at the particle itself outside it ("displayed").  Both variants drive a
corrected midpoint scheme here against the Euler scheme on shared noise;
the variant consistent with the particle-level cross-variation tracks the
Euler limit more closely as the step shrinks.
"""

import sys

import numpy as np

from mfsde.coeffs import full_linear
from mfsde.noise import TimeGrid
from mfsde.sim import InitialLaw
from mfsde.validate import equivalence_study

BASE_SEED = 20240817


def main() -> int:
    cs = full_linear(beta=0.1, c=0.5, gamma=0.2, s=0.3)
    init = InitialLaw(mean=np.array([1.0]))
    seeds = [BASE_SEED + i for i in range(4)]
    reports = {
        variant: equivalence_study(
            cs, 500, TimeGrid(1.0, 16), 6, seeds, init, variant=variant
        )
        for variant in ("inside", "displayed")
    }
    print(f"{'dt':>12} {'inside gap':>14} {'displayed gap':>14}")
    for i, dt in enumerate(reports["inside"].dts):
        print(
            f"{dt:>12.6f} {reports['inside'].corrected_gaps[i]:>14.4e} "
            f"{reports['displayed'].corrected_gaps[i]:>14.4e}"
        )
    finest_inside = reports["inside"].corrected_gaps[-1]
    finest_displayed = reports["displayed"].corrected_gaps[-1]
    verdict = "inside" if finest_inside < finest_displayed else "displayed"
    print(f"\nsmaller terminal gap at the finest step: {verdict}")
    return 0 if verdict == "inside" else 1


if __name__ == "__main__":
    sys.exit(main())
