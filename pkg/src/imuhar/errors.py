"""Exception and warning types shared across the package."""


class ImuharError(Exception):
    """Base class for all errors raised by this package."""


class EmptyRecording(ImuharError):
    """Recording too short for the requested operation."""


class NonMonotonicTimestamps(ImuharError):
    """Timestamps are not strictly increasing."""


class NonDivisibleWindow(ImuharError):
    """High-level window length is not an integer multiple of the low-level one."""


class NonIntegralWindow(ImuharError):
    """Window or stride does not land on an integer number of samples."""


class ShapeMismatch(ImuharError):
    """Input tensor shape does not match what the layer expects."""


class GraphNotRecorded(ImuharError):
    """backward() called without a preceding forward() in training mode."""


class FormatVersionMismatch(ImuharError):
    """Checkpoint was written by an incompatible format version."""


class CorruptCheckpoint(ImuharError):
    """Checkpoint file is truncated or fails its checksum."""


class DivergenceDetected(ImuharError):
    """Training loss became non-finite."""


class InfeasibleSplit(ImuharError):
    """No participant-disjoint stratified split exists for the given samples."""


class EmptyEvaluation(ImuharError):
    """evaluate() called with zero samples."""


class DegenerateData(ImuharError):
    """Data has zero variance; PCA components are undefined."""


class ParseError(ImuharError):
    """Malformed cell in an ingested CSV file."""

    def __init__(self, path, line, column, message):
        self.path = str(path)
        self.line = line
        self.column = column
        super().__init__(f"{path}:{line}:{column}: {message}")


class UnknownLabel(ImuharError):
    """Recording label is not in the manifest vocabulary."""


class SpecParseError(ImuharError):
    """Model spec file is malformed or carries unknown keys."""


class DegenerateChannelWarning(UserWarning):
    """A channel's standard deviation fell below the epsilon floor."""
