"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line interface, so
scripts can tell failure modes apart without parsing messages.
"""


class SpdGaussError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(SpdGaussError, ValueError):
    exit_code = 3


class NotSquare(ValidationError):
    pass


class NotSymmetric(ValidationError):
    pass


class NotPositiveDefinite(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    exit_code = 4


class BaseMismatch(ValidationError):
    exit_code = 4


class SingularTransform(ValidationError):
    pass


class InvalidSigma(ValidationError):
    pass


class OutOfTableRange(SpdGaussError, ValueError):
    """Requested value lies outside the tabulated dispersion range."""

    exit_code = 5


class NonMonotoneTable(SpdGaussError):
    """Tabulated ``sigma**3 * dlog(zeta)/dsigma`` is not strictly increasing."""

    exit_code = 6


class MaxItersExceeded(SpdGaussError):
    """Iterative solver hit its iteration cap.

    The best iterate and its diagnostics are attached as ``result``.
    """

    exit_code = 7

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class EmptyInput(SpdGaussError, ValueError):
    exit_code = 8


class EmptyComponent(SpdGaussError):
    """A mixture component received (almost) no responsibility mass."""

    exit_code = 9

    def __init__(self, message, components=()):
        super().__init__(message)
        self.components = tuple(components)


class UnknownLabel(SpdGaussError, KeyError):
    exit_code = 10

    def __str__(self):
        return Exception.__str__(self)


class FormatError(SpdGaussError, ValueError):
    """Malformed or mismatched input file."""

    exit_code = 11


class ImpreciseTable(SpdGaussError):
    """Monte-Carlo error left too few usable grid points."""

    exit_code = 6
