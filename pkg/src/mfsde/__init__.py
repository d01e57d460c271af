"""Interacting particle systems for mean-field SDEs with common noise.

The package simulates N-particle approximations of dynamics whose
coefficients depend on the conditional law of the state given a shared
Brownian motion, under both left-point (Ito) and midpoint (Stratonovich)
stepping, and measures the drift correction that makes the two agree:
a Lions-derivative term estimated over the ensemble plus the classical
spatial terms.

Modules
-------
measure     equal-weight empirical measures and the Wasserstein-2 distance
lions       measure functionals, empirical projection, Lions derivatives
coeffs      coefficient sets and the built-in model gallery
noise       counter-based Brownian increment tables with dyadic refinement
correction  the Ito/Stratonovich drift correction and discrete brackets
sim         particle propagation under Euler and Heun stepping
validate    equivalence, closed-form, bracket and Lions-identity studies
cli         config-driven command line emitting CSV artifacts
"""

from .measure import EmpiricalMeasure, W2Result, mean, second_moment, wasserstein2
from .lions import (
    MeasureFunctional,
    check_projection_identity,
    empirical_projection,
    fd_lions_derivative,
)
from .coeffs import CoefficientSet, GALLERY, eval_coefficients, fd_check_derivatives, make_model
from .noise import NoiseBundle, TimeGrid, generate, load_bundle, refine, save_bundle
from .correction import (
    CorrectionValue,
    discrete_cross_variation,
    measure_correction,
    spatial_correction,
    total_correction,
)
from .sim import EnsemblePath, InitialLaw, Scheme, SimulationError, simulate

__version__ = "0.1.0"

__all__ = [
    "EmpiricalMeasure",
    "W2Result",
    "mean",
    "second_moment",
    "wasserstein2",
    "MeasureFunctional",
    "empirical_projection",
    "fd_lions_derivative",
    "check_projection_identity",
    "CoefficientSet",
    "GALLERY",
    "make_model",
    "eval_coefficients",
    "fd_check_derivatives",
    "TimeGrid",
    "NoiseBundle",
    "generate",
    "refine",
    "save_bundle",
    "load_bundle",
    "CorrectionValue",
    "measure_correction",
    "spatial_correction",
    "total_correction",
    "discrete_cross_variation",
    "Scheme",
    "InitialLaw",
    "EnsemblePath",
    "SimulationError",
    "simulate",
    "__version__",
]
