"""Exception types shared by every kwbeam module."""


class KwbeamError(Exception):
    """Base class for errors raised by kwbeam."""


class ValidationError(KwbeamError, ValueError):
    """Bad input: wrong shape, out-of-range value, inconsistent config."""


class FormatError(ValidationError):
    """A file on disk does not match the expected binary or text layout."""


class NumericError(KwbeamError, ArithmeticError):
    """A computation produced non-finite values or failed to converge.

    ``diagnostics`` carries whatever context the raiser could collect
    (offending batch index, degenerate bins, ...).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
