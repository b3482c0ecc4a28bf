"""Exception types raised by the simulation and estimation layers."""


class MoustacheError(Exception):
    """Base class for all package errors."""


class ConfigError(MoustacheError):
    """Invalid configuration value or unparsable config input."""


class StepLimitError(MoustacheError):
    """Step halving exhausted near a boundary; the base step is too coarse."""


class BlowupError(MoustacheError):
    """A trajectory produced a non-finite value (configuration error)."""


class DriftDomainError(MoustacheError):
    """Geometric-time drift denominator underflow; the represented radial
    path approached 1 and the caller must switch to natural-time stepping."""


class PhaseThrashError(MoustacheError):
    """Cycle simulation exceeded the natural/geometric phase-switch budget."""
