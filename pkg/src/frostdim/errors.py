"""Exception hierarchy.

The CLI maps :class:`InputError` to exit code 2 and :class:`InfeasibleError`
to exit code 3; anything else is an internal error (exit code 1).
"""

from __future__ import annotations


class FrostdimError(Exception):
    """Base class for all package errors."""


class InputError(FrostdimError, ValueError):
    """Malformed or out-of-range user input."""


class InfeasibleError(FrostdimError, ValueError):
    """Parameters that cannot be honoured at the available resolution."""


class DomainError(FrostdimError, ValueError):
    """A query outside the domain of an operation (e.g. an unoccupied cube)."""


# dyadic core

class NoParentError(DomainError):
    pass


class MonotonicityError(InputError):
    def __init__(self, parent, child):
        super().__init__(
            f"oracle rejected {parent} but accepted its child {child}"
        )
        self.parent = parent
        self.child = child


class EmptySetError(InputError):
    pass


class PointRangeError(InputError):
    def __init__(self, index: int, point):
        super().__init__(f"point {index} lies outside [0,1)^d: {tuple(point)}")
        self.index = index


class TreeFormatError(InputError):
    pass


class BadMagicError(TreeFormatError):
    pass


class VersionMismatchError(TreeFormatError):
    pass


class TruncatedStreamError(TreeFormatError):
    pass


class ChecksumError(TreeFormatError):
    pass


# set models

class SetSpecError(InputError):
    pass


class PointFileError(InputError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


# estimators / frostman

class InfeasibleScaleError(InfeasibleError):
    def __init__(self, message: str, required_n_max: int | None = None):
        if required_n_max is not None:
            message = f"{message}; realize the set with n_max >= {required_n_max}"
        super().__init__(message)
        self.required_n_max = required_n_max


class InfeasibleParamsError(InfeasibleError):
    pass
