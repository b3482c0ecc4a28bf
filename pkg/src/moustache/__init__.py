"""Simulation and verification toolkit for the radial diffusion of planar
Brownian motion repelled from the unit disk.

Layout:

* :mod:`moustache.laws` -- exact densities, tails, samplers and bounds.
* :mod:`moustache.sde` -- Euler integrators in natural and geometric time,
  Bessel comparisons and pathwise couplings.
* :mod:`moustache.regeneration` -- single-cycle simulation and log-domain
  renewal assembly reaching astronomically large natural times.
* :mod:`moustache.estimators` -- confidence intervals, KS distances, tail
  and ergodic estimators, random-difference-equation diagnostics.
* :mod:`moustache.acceptance` -- the executable verification suite.
* :mod:`moustache.cli` -- command-line driver.
"""

from moustache.errors import (
    BlowupError,
    ConfigError,
    DriftDomainError,
    MoustacheError,
    PhaseThrashError,
    StepLimitError,
)

__version__ = "0.1.0"

__all__ = [
    "MoustacheError",
    "ConfigError",
    "StepLimitError",
    "BlowupError",
    "DriftDomainError",
    "PhaseThrashError",
    "__version__",
]
