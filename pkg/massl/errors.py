"""Exceptions raised by the massl library and the exit codes the CLI maps
them to.
"""

EXIT_OK = 0
ERR_CONFIG = 2
ERR_RUNTIME = 3

error_codes = {
    EXIT_OK: "Success",
    ERR_CONFIG: "Configuration error, check the config file and arguments",
    ERR_RUNTIME: "Runtime error, check the massl log",
}


def error_lookup(errcode):
    try:
        return error_codes[errcode]
    except KeyError:
        # Not a code we control; hand it back for the caller to report.
        return errcode


class MasslError(Exception):
    """Base class for every error raised by the massl package."""


class NearZeroNorm(MasslError):
    """A vector too close to zero to be normalized."""


class DimMismatch(MasslError):
    """Operand dimensions do not agree."""


class NonPositiveTemperature(MasslError):
    """A softmax temperature that is zero or negative."""


class InvalidShape(MasslError):
    """A requested shape or size is degenerate."""


class InvalidParameter(MasslError):
    """A parameter is outside its allowed range."""


class BatchTooLarge(MasslError):
    """More vectors enqueued at once than the memory holds."""


class NotUnitNorm(MasslError):
    """A vector expected to lie on the unit sphere does not."""


class IndivisibleBlockSize(MasslError):
    """The memory size is not a multiple of the block size."""


class IndexOutOfRange(MasslError):
    """A memory position outside [0, K)."""


class EmptyViewSet(MasslError):
    """No (student, teacher) view pair is left to compare."""


class MismatchedBatch(MasslError):
    """Views of one step disagree on batch size or dimension."""


class StaleCache(MasslError):
    """A forward cache used after the parameters changed."""


class ShapeMismatch(MasslError):
    """Two parameter trees do not have the same layout."""


class NonFiniteGrad(MasslError):
    """A gradient containing NaN or infinity."""


class OutOfRangeStep(MasslError):
    """A schedule evaluated outside [0, T]."""


class ParseError(MasslError):
    """A malformed line in an input file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyFile(MasslError):
    """An input file without data rows."""


class EmptyReferenceSet(MasslError):
    """A k-NN probe without reference points."""


class DegenerateClustering(MasslError):
    """k-means left a cluster empty."""


class ConfigError(MasslError):
    """Invalid or inconsistent configuration."""


class CorruptCheckpoint(MasslError):
    """A checkpoint file that is not in the massl format."""


class CheckpointVersionMismatch(MasslError):
    """A checkpoint written by an incompatible format version."""
