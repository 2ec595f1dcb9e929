"""Exception hierarchy shared across the package.

Every error type carries an ``exit_code`` consumed by the CLI: 3 for
problems attributable to inputs (bad files, bad shapes, degenerate data),
4 for violated internal invariants.
"""


class SslhopError(Exception):
    """Base class for all package errors."""

    exit_code = 3


# -- array geometry ----------------------------------------------------------

class ShapeMismatchError(SslhopError):
    pass


class OutOfBoundsError(SslhopError):
    pass


class WindowTooLargeError(SslhopError):
    pass


class IndexOutOfRangeError(SslhopError):
    pass


# -- statistics / fitting ----------------------------------------------------

class DegenerateInputError(SslhopError):
    pass


class SingleClassError(SslhopError):
    pass


class TooFewSamplesError(SslhopError):
    pass


class MissingClassError(SslhopError):
    pass


class NonFiniteValuesError(SslhopError):
    pass


class OneClassOnlyError(SslhopError):
    pass


class TooFewSubjectsError(SslhopError):
    pass


# -- files -------------------------------------------------------------------

class BadHeaderError(SslhopError):
    pass


class ChecksumMismatchError(SslhopError):
    pass


class CorruptFileError(SslhopError):
    pass


class VersionMismatchError(SslhopError):
    pass


class DuplicateSubjectError(SslhopError):
    pass


class UnknownLabelError(SslhopError):
    pass


class MissingFileError(SslhopError):
    pass


# -- internal invariants -----------------------------------------------------

class ShapeLedgerMismatchError(SslhopError):
    """A computed map shape disagrees with the dry-run shape ledger."""

    exit_code = 4


# -- warnings ----------------------------------------------------------------

class DegenerateInputWarning(RuntimeWarning):
    """Fit data had no residual variance; kernel padded with zero anchors."""


class ClusterCollapseWarning(RuntimeWarning):
    """k-means produced an empty cluster even after one re-seed."""
