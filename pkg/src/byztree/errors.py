"""Exception and warning types shared across the package."""


class ValidationError(ValueError):
    """Invalid model input (topology, configuration, probabilities)."""


class InfeasiblePlacementError(ValidationError):
    """Byzantine counts cannot be placed without ancestor/descendant overlap."""


class ApproximationDomainError(ArithmeticError):
    """A normal-approximation quantity is outside its usable domain."""


class EnumerationLimitError(RuntimeError):
    """A brute-force oracle was asked to enumerate more cases than allowed."""


class BlindingRegionWarning(UserWarning):
    """An attack covers at least half of the decisions at some level."""


class NormalApproximationWarning(UserWarning):
    """Window length too short for the normal approximation to be reliable."""


class DegenerateStatisticWarning(UserWarning):
    """The fusion statistic is constant, so calibration carries no information."""
