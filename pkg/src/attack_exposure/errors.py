"""Exception types shared across the package."""


class AttackExposureError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(AttackExposureError, ValueError):
    """An operand has the wrong shape. Carries the operand name."""

    def __init__(self, operand: str, expected, got):
        self.operand = operand
        self.expected = expected
        self.got = got
        super().__init__(f"{operand}: expected shape {expected}, got {got}")


class ParameterError(AttackExposureError, ValueError):
    """A scalar or matrix parameter is outside its admissible range."""


class SynthesisError(AttackExposureError, RuntimeError):
    """Feedback synthesis failed (non-stabilizable pair or stalled iteration)."""


class CertificationError(AttackExposureError, ValueError):
    """A decay certificate could not be established for the closed loop."""


class FrozenUpdateError(AttackExposureError, RuntimeError):
    """A measurement update was requested while the filter is frozen."""


class AttackInfeasibleError(AttackExposureError, RuntimeError):
    """The attacker cannot realize its planned bias through the filter gain."""


class ExposureInfeasibleError(AttackExposureError, RuntimeError):
    """No shake sequence satisfies the tightened exposure constraint.

    Signals that the shake budget is below the required minimum. Carries the
    best achievable left-hand side and the required right-hand side of the
    binding constraint.
    """

    def __init__(self, message: str, achievable: float = float("nan"),
                 required: float = float("nan")):
        self.achievable = achievable
        self.required = required
        super().__init__(message)


class ConfigError(AttackExposureError, ValueError):
    """A run configuration file is malformed or inconsistent."""
