"""Semiclassical Weyl propagators, energy resolvents and periodic-orbit sums."""
from .models import (ConfigError, DomainError, HamiltonianModel, IntegrationError,
                     evaluate, symplectic_j)
from .dynamics import (DEFAULT_TOL, Tolerances, TrajectorySegment, energy_shell_sample,
                       flow, period_1dof)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DomainError", "HamiltonianModel", "IntegrationError", "evaluate",
    "symplectic_j", "DEFAULT_TOL", "Tolerances", "TrajectorySegment", "energy_shell_sample",
    "flow", "period_1dof",
]
