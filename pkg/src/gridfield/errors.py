"""Exception hierarchy shared across the package."""


class GridfieldError(Exception):
    """Base class for all package-specific errors."""


class DomainError(GridfieldError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class FormatError(GridfieldError):
    """A payload on disk could not be parsed at all (distinct from an
    invariant violation, which is reported by the validator)."""


class ContractViolation(GridfieldError):
    """A caller broke an ordering/state contract (e.g. unsorted splats)."""


class GenerationError(GridfieldError):
    """Synthetic scene generation produced an unusable scene."""


class TrainingDiverged(GridfieldError):
    """Feature optimization hit a non-finite loss."""

    def __init__(self, iteration: int, message: str | None = None):
        self.iteration = iteration
        super().__init__(message or f"non-finite loss at iteration {iteration}")
