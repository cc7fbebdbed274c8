"""Exception hierarchy shared by all nwkit modules.

Every error carries an ``exit_code`` used by the CLI: 2 for usage errors,
3 for data errors, 4 for numerical failures.
"""


class NWError(Exception):
    """Base class for all nwkit errors."""

    exit_code = 3


class InvalidArgumentError(NWError):
    """A parameter is outside its documented range (bad top_n, epsilon, grid...)."""

    exit_code = 2


class InvalidTemperatureError(InvalidArgumentError):
    """Temperature must be a finite positive number."""


class DimensionMismatchError(NWError):
    """Query and support feature dimensions disagree."""


class EmptySupportError(NWError):
    """An operation received an empty support/distance vector."""


class CannotRemoveLastError(NWError):
    """Leave-one-out is undefined on a single-element support set."""


class DegenerateWeightError(NWError):
    """A support weight is so close to 1 that renormalization blows up."""

    exit_code = 4


class UndefinedLossError(NWError):
    """The query's class has zero probability (absent from the support set)."""


class InfeasibleKError(NWError):
    """k-means was asked for more clusters than there are distinct points."""


class InsufficientClassError(NWError):
    """A class has too few members for the requested operation."""


class ParseError(NWError):
    """A persisted file failed to parse; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StratificationError(NWError):
    """A class is too small to appear in every requested split."""


class GenerationError(NWError):
    """Synthetic data generation could not satisfy its constraints."""


class UnknownIdError(NWError):
    """An example id was not found in the dataset."""


class MissingSplitError(NWError):
    """A command needs a dataset split that is not present."""


class DivergenceError(NWError):
    """Training produced a non-finite loss."""

    exit_code = 4
