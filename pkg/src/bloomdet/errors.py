"""Exception hierarchy.

Three operational families, each mapped to a process exit code by the CLI:
config problems (2), data problems (3), training divergence (4). Everything
raised by this package derives from BloomdetError so callers can catch one
root type.
"""


class BloomdetError(Exception):
    exit_code = 1


class ConfigError(BloomdetError):
    """Invalid or contradictory run configuration."""

    exit_code = 2


class UnsatisfiableConfigError(ConfigError):
    """Configuration is well formed but cannot be satisfied by the data,
    e.g. no valid window origin exists under the requested window size."""


class DataError(BloomdetError):
    """Malformed, inconsistent or missing data."""

    exit_code = 3


class FormatError(DataError):
    """Byte-level container violation: bad magic, header, truncated payload."""


class IntegrityError(DataError):
    """Container parsed but contents are inconsistent: shape mismatches,
    non-finite values where finite ones are required, label out of range."""


class DegenerateChannelError(DataError):
    """A channel has (numerically) zero variance so it cannot be standardized."""


class OutOfBoundsError(DataError):
    """A requested patch or window does not fit inside its raster."""


class WindowTooSmallError(DataError):
    """A window is smaller than one receptive field in some direction."""


class ShapeError(DataError):
    """A tensor handed to a model has the wrong rank or spatial size."""


class LabelError(DataError):
    """A label value or coordinate violates its declared contract."""


class CannotComposeBatchError(DataError):
    """A batch with the requested composition cannot be built, e.g. the
    positive set is empty."""


class NoAdversaryError(DataError):
    """An adversarial label was requested but no non-true category exists."""


class UndefinedMetricError(DataError):
    """A metric was requested on inputs for which it is undefined, e.g. a
    ROC curve with no positive pixels."""


class DivergenceError(BloomdetError):
    """Training produced a non-finite loss or parameter."""

    exit_code = 4
