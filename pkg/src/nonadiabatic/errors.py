"""Exception and warning types shared across the package."""


class NonadiabaticError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(NonadiabaticError, ValueError):
    """A model or experiment parameter is missing or invalid."""

    def __init__(self, field, message=None):
        self.field = field
        super().__init__(message or f"invalid or missing parameter: {field!r}")


class InvalidDimensionError(ConfigurationError):
    def __init__(self, dim):
        super().__init__("dim", f"matrix dimension must be >= 1, got {dim}")


class SingularityProximityError(NonadiabaticError):
    """Evaluation point is inside the guard radius of a matrix-element pole."""

    def __init__(self, tau, pole, distance):
        self.tau = tau
        self.pole = pole
        self.distance = distance
        super().__init__(
            f"tau={tau} lies {distance:.3g} from the pole at {pole}"
        )


class ContractViolation(NonadiabaticError):
    pass


class ContinuationStepTooLarge(NonadiabaticError):
    """Eigenvalue matching between two frames was ambiguous."""


class RefinementFailed(NonadiabaticError):
    pass


class PairingError(NonadiabaticError):
    pass


class ActionPathBlocked(NonadiabaticError):
    pass


class StepTooLargeError(NonadiabaticError):
    def __init__(self, drift, suggested_h):
        self.drift = drift
        self.suggested_h = suggested_h
        super().__init__(
            f"norm drift {drift:.3g} exceeds tolerance; try h <= {suggested_h:.3g}"
        )


class InsufficientDataError(NonadiabaticError):
    def __init__(self, message, flags=None):
        self.flags = flags or {}
        super().__init__(message)


class DegenerateGapError(NonadiabaticError):
    pass


class ResolventSingularError(NonadiabaticError):
    def __init__(self, tau):
        self.tau = tau
        super().__init__(f"E_m - H_PP is singular near tau={tau}")


class DependencyError(NonadiabaticError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"missing upstream artifact: {name}")


class NearDegenerateWarning(UserWarning):
    """Two eigenvalues are closer than the degeneracy tolerance.

    This is a branch-point detection signal rather than a failure.
    """

    def __init__(self, i, j, gap):
        self.i = i
        self.j = j
        self.gap = gap
        super().__init__(f"levels {i} and {j} nearly degenerate (|gap|={gap:.3g})")


class RegionClippedWarning(UserWarning):
    pass


class SuspiciousPointWarning(UserWarning):
    pass


class IndeterminateVerdictWarning(UserWarning):
    pass
