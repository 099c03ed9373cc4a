"""Stochastic error cancellation in analog quantum simulation.

Builds local spin Hamiltonians, perturbs them with random chi-deformed
Gaussian couplings and measures how observable errors, fidelities and their
fluctuations scale with system size, noise strength and time.
"""

from .errors import ConfigError, NumericalDiagnosticError, ResourceCeilingError, StochCancelError

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "StochCancelError",
    "ConfigError",
    "ResourceCeilingError",
    "NumericalDiagnosticError",
]
