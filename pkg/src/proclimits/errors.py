"""Exception types raised by proclimits."""


class ProcLimitsError(Exception):
    """Base class for all package errors."""


class NonFiniteValueError(ProcLimitsError, ValueError):
    """A NaN or infinite measurement was offered to a model."""


class RevertGuardError(ProcLimitsError, RuntimeError):
    """Reverting would leave fewer than two samples in the model."""


class ConfigError(ProcLimitsError, ValueError):
    pass


class DomainError(ProcLimitsError, ValueError):
    """Probability argument outside the open interval (0, 1)."""


class BracketError(ProcLimitsError, ValueError):
    """Root-finder bracket does not enclose the target."""


class ConvergenceError(ProcLimitsError, ArithmeticError):
    pass


class RestoreError(ProcLimitsError, ValueError):
    """Snapshot document is corrupt or has an unsupported schema."""


class ScenarioError(ProcLimitsError, ValueError):
    pass


class AlignmentError(ProcLimitsError, ValueError):
    """Detector outputs and labels do not line up sample for sample."""
