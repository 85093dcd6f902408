"""Exception types raised across the package.

Each class maps to one failure mode so callers and tests can catch
precisely what they expect instead of pattern-matching messages.
"""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NormalizationError(ValueError):
    """A probability matrix has rows that do not sum to 1."""


class DivergenceError(FloatingPointError):
    """A gradient or loss went non-finite; carries the offending block name."""


class UsageError(ValueError):
    """An operation was called with arguments it cannot meaningfully process."""


class EstimationError(ValueError):
    """A distribution estimate was requested from an empty selection."""


class ProtocolError(ValueError):
    """A label-shift spec cannot be realized on the given dataset."""


class FormatError(ValueError):
    """A binary input file has the wrong magic number or layout."""


class ConsistencyError(ValueError):
    """Paired input files disagree (e.g. image count vs label count)."""


class LengthError(ValueError):
    """An input file is shorter than its header promises."""


class SamplerError(ValueError):
    """A batch sampler cannot run (e.g. a class has no samples)."""


class MetricError(ValueError):
    """A metric is undefined for the given inputs; names the class."""


class TableError(ValueError):
    """Run reports passed to the table renderer have mismatched schemas."""


class CheckpointError(ValueError):
    """A checkpoint file is unreadable or from an incompatible version."""
