"""Exception types shared across the package."""


class CoagFragError(Exception):
    """Base class for all package errors."""


class DomainError(CoagFragError, ValueError):
    """A quantity was evaluated outside its admissible domain."""


class ConfigError(CoagFragError, ValueError):
    """Inconsistent or unusable configuration (exit code 2 in the CLI)."""


class InvalidScenarioError(ConfigError):
    """Scenario that is well formed but mathematically unusable."""


class UnboundedKernelError(ConfigError):
    """A finite kernel bound was requested for a kernel that has none."""


class SingularProfileError(CoagFragError, ValueError):
    """Equilibrium profile vanished where a ratio against it is needed."""


class StiffnessError(CoagFragError, RuntimeError):
    """Adaptive step size underflowed (exit code 3 in the CLI)."""

    def __init__(self, message: str, cell_index: int | None = None, t: float | None = None):
        super().__init__(message)
        self.cell_index = cell_index
        self.t = t


class PicardError(CoagFragError, RuntimeError):
    """Fixed-point iteration left the admissible set or failed to settle."""


class FitError(CoagFragError, ValueError):
    """Decay fit impossible on the requested window."""
