"""Exception hierarchy shared by every connlab module."""


class ConnLabError(Exception):
    """Base class for all connlab failures."""


class InvalidInputError(ConnLabError, ValueError):
    """Input violates a precondition (non-finite cell, bad shape, bad argument)."""


class DegenerateInputError(ConnLabError, ValueError):
    """Input has no variance to normalize."""


class DatasetLoadError(ConnLabError, ValueError):
    """Dataset manifest or matrix file could not be loaded."""


class NetworkFormatError(ConnLabError, ValueError):
    """Serialized model could not be parsed or does not match its spec."""


class DivergedTrainingError(ConnLabError, RuntimeError):
    """Training produced a non-finite loss or parameter."""

    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(
            message or f"training diverged at iteration {iteration} (learning rate too high?)"
        )


class UnsupportedError(ConnLabError, ValueError):
    """Operation is not defined for this network configuration."""


class AttributionError(ConnLabError, ValueError):
    """Feature ranking or back-projection request cannot be satisfied."""


class ReportIntegrityError(ConnLabError, RuntimeError):
    """Report aggregates disagree with the raw records."""
