"""Exception types and small input-checking helpers shared by every module."""

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's preconditions."""


class UnsupportedFormatError(InvalidInputError):
    """Raised for audio encodings other than uncompressed PCM / IEEE float."""


class CorruptionError(ValueError):
    """Raised when a binary cache or model file fails integrity checks."""


class ManifestError(ValueError):
    """Raised when a dataset manifest cannot be parsed.

    Parameters
    ----------
    message : str
        Human-readable description.
    line : int or None
        1-based line number in the source file, when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def check_finite(a, name="input"):
    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return a


def check_2d(X, name="X", dtype=np.float64):
    X = np.asarray(X, dtype=dtype)
    if X.ndim == 1:
        X = X[np.newaxis, :]
    if X.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {X.shape}")
    if X.shape[0] == 0:
        raise InvalidInputError(f"{name} is empty")
    return check_finite(X, name)


def check_positive_int(value, name):
    if int(value) != value or value < 1:
        raise InvalidInputError(f"{name} must be a positive integer, got {value!r}")
    return int(value)
