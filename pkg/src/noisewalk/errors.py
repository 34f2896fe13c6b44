"""Exception types shared across the package."""


class NoiseWalkError(Exception):
    """Base class for all package errors."""


class InputError(NoiseWalkError, ValueError):
    """Malformed input: bad letters, weights, ranks, or parameter ranges."""


class ValidationError(NoiseWalkError, ValueError):
    """Structurally valid input that violates a contract (e.g. measure kind mismatch)."""


class TruncationError(NoiseWalkError, RuntimeError):
    """Exact computation would exceed the support cap in strict mode.

    Carries the level at which the cap was hit and the mass that would
    have been dropped so far.
    """

    def __init__(self, message: str, level: int, lost_mass: float):
        super().__init__(message)
        self.level = level
        self.lost_mass = lost_mass


class BudgetError(NoiseWalkError, RuntimeError):
    """Requested computation exceeds a hard size or time budget."""


class UnsupportedRegimeError(NoiseWalkError, ValueError):
    """Operation is only defined for a different group/semigroup regime."""
