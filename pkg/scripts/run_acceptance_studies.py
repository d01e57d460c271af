#!/usr/bin/env python3
"""Run the four heavyweight validation studies at contract scale.

Standalone mirror of tests/test_acceptance.py for interactive use: prints
one line per criterion and exits 1 if any fails.  Expect a couple of
minutes of runtime on a laptop.
"""

import sys
import time

import numpy as np

from mfsde.coeffs import linear_mean
from mfsde.lions import (
    exp_mean_functional,
    second_moment_functional,
    squared_mean_functional,
)
from mfsde.noise import TimeGrid
from mfsde.sim import InitialLaw
from mfsde.validate import (
    bracket_criteria,
    bracket_study,
    closedform_criteria,
    closedform_study,
    equivalence_criteria,
    equivalence_study,
    format_criteria,
    lions_criteria,
    lions_sweep,
)

BASE_SEED = 20240817
THREADS = 4


def main() -> int:
    init = InitialLaw(mean=np.array([1.0]))
    results = []

    t0 = time.monotonic()
    sweep = lions_sweep(
        {
            "second_moment": second_moment_functional(),
            "squared_mean": squared_mean_functional(),
            "exp_mean": exp_mean_functional(),
        },
        [2, 16, 128],
        [1e-3, 1e-4, 1e-5],
        seed=BASE_SEED,
    )
    results += lions_criteria(sweep)
    print(f"lions sweep done ({time.monotonic() - t0:.1f}s)")

    t0 = time.monotonic()
    cs = linear_mean(beta=0.1, c=0.5, a=0.0, s=0.3)
    equivalence = equivalence_study(
        cs, 2000, TimeGrid(1.0, 16), 6, [BASE_SEED + i for i in range(8)], init, n_threads=THREADS
    )
    results += equivalence_criteria(equivalence)
    print(f"equivalence study done ({time.monotonic() - t0:.1f}s)")
    print("  per-level corrected gaps:", [f"{g:.3e}" for g in equivalence.corrected_gaps])
    print("  per-level uncorrected gaps:", [f"{g:.3e}" for g in equivalence.uncorrected_gaps])

    t0 = time.monotonic()
    cs0 = linear_mean(beta=0.0, c=0.5, a=0.0, s=0.3)
    seeds16 = [BASE_SEED + i for i in range(16)]
    main_run = closedform_study(cs0, 2000, TimeGrid(1.0, 16), 6, seeds16, init, n_threads=THREADS)
    reference = closedform_study(cs0, 500, TimeGrid(1.0, 16), 6, seeds16, init, n_threads=THREADS)
    results += closedform_criteria(main_run, reference)
    print(f"closed-form study done ({time.monotonic() - t0:.1f}s)")
    print("  errors:", [f"{e:.3e}" for e in main_run.errors], f"slope {main_run.slope:.3f}")

    t0 = time.monotonic()
    bracket = bracket_study(
        cs, 5000, TimeGrid(1.0, 1024), [BASE_SEED + i for i in range(100)], init, n_threads=THREADS
    )
    results += bracket_criteria(bracket)
    print(f"bracket study done ({time.monotonic() - t0:.1f}s)")

    print()
    print(format_criteria(results), end="")
    return 0 if all(r.passed for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
