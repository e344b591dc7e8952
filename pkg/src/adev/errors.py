"""Exception taxonomy.

Two families matter to callers (and to the CLI's exit codes):

* :class:`ValidationError` — the inputs were malformed (shapes, argument
  ranges, unparseable files).  These are caller mistakes and map to exit
  code 1.
* :class:`NumericError` — the inputs were well-formed but a computation
  failed (non-finite values, diverging training, covariance degeneration).
  These map to exit code 2.
"""


class AdevError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(AdevError, ValueError):
    """Malformed input: bad shapes, bad argument values, bad files."""


class ShapeError(ValidationError):
    """Array dimensions do not line up."""


class ArgumentError(ValidationError):
    """A scalar argument is out of its documented range."""


class ParseError(ValidationError):
    """A data file could not be parsed; carries a row number when known."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row


class UndefinedConditionalError(ValidationError):
    """Conditioning on a zero-probability atom of a finite process."""


class NumericError(AdevError, ArithmeticError):
    """A numerical computation failed on well-formed input."""


class UnitarityError(NumericError):
    """A matrix that must be unitary violated the unitarity tolerance."""


class TrainingError(NumericError):
    """Training diverged (non-finite loss or parameters)."""


class GenerationError(NumericError):
    """Sampling a synthetic process failed (e.g. covariance not PD)."""
