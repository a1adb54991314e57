"""Exception hierarchy shared by every xsecbench module."""


class XsecError(Exception):
    """Base class for all library errors."""


class DimensionError(XsecError, ValueError):
    """An array does not have the shape an operation requires."""


class ValidationError(XsecError, ValueError):
    """An argument is out of its allowed domain (non-finite, bad index, ...)."""


class ParseError(XsecError, ValueError):
    """A file could not be parsed. The message names the offending line, row or field."""


class VersionError(ParseError):
    """A model file declares a format version this build cannot read."""


class DegenerateError(XsecError, ArithmeticError):
    """A statistic or fit is undefined for the given input."""


class NothingToExplainError(XsecError, ValueError):
    """The input is already classified as the benign class."""


class NumericalError(XsecError, ArithmeticError):
    """Training diverged (non-finite loss or parameters)."""
