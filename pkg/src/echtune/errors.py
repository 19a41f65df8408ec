"""Shared exception classes and warnings."""

from __future__ import annotations


class SchemaError(ValueError):
    """Input shape, length, or field mismatch against a declared schema."""


class NoFlatTop(ValueError):
    """No qualifying flat-top window found in a trajectory."""


class DegenerateData(ValueError):
    """Input set carries no variance to decompose."""


class DegenerateProfile(ValueError):
    """Profile amplitude below the fitting floor.

    Carries the fallback zero-amplitude parameters in ``params``.
    """

    def __init__(self, message: str, params=None):
        super().__init__(message)
        self.params = params


class EmptyDatasetWarning(UserWarning):
    """A filter left no rows; downstream consumers get an empty table."""


class EmptyDataset(ValueError):
    """An operation that requires at least one row got none."""


class SingleClassWarning(UserWarning):
    """Classifier training data contained one class; model is constant."""


class NonFiniteLoss(RuntimeError):
    """Training loss became NaN/inf; aborted with diagnostics."""


class EmptyCandidates(ValueError):
    """Acquisition maximization received an empty candidate set."""


class NumericalFailure(RuntimeError):
    """Matrix factorization failed even at the maximum jitter level."""


class RangeError(ValueError):
    """A value fell outside its declared physical range."""


class NoGyrotrons(ValueError):
    """Angle fitting requested with zero gyrotrons available."""


class DatasetNotFound(FileNotFoundError):
    """Referenced dataset file does not exist."""


class SessionNotFound(KeyError):
    """Unknown session id."""


class StaleWrite(RuntimeError):
    """Optimistic-concurrency version token did not match."""
