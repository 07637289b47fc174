"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: I/O and ingestion problems
exit 3, contract violations exit 4.
"""


class TdfexError(Exception):
    """Base class for all package errors."""


class FormatError(TdfexError):
    """A file does not match its declared binary or text format."""


class IngestionError(TdfexError):
    """Dataset or corpus input is missing or unusable."""


class ContractError(TdfexError):
    """An argument violates an operation's precondition."""


class CalibrationError(TdfexError):
    """Calibration data is insufficient or degenerate."""


class SimulationError(TdfexError):
    """A behavioral simulation diverged or left its valid operating region."""
