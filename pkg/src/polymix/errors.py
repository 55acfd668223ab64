"""Shared exception types.

Everything raised on bad data (as opposed to bad usage) derives from
PolymixError so the CLI can map it to a single exit code.
"""


class PolymixError(Exception):
    """Base class for data and pipeline errors."""


class ManifestError(PolymixError):
    """Raised when a manifest file is malformed or violates record invariants."""


class AudioFormatError(PolymixError):
    """Raised when an audio file cannot be decoded into the internal format."""


class NoPeriodicityError(PolymixError):
    """Raised when tempo estimation finds no usable periodicity in an envelope."""


class RetrySignal(PolymixError):
    """Internal signal: the sampled instrument combination cannot be satisfied
    by the corpus under the active strategy; the caller should draw a new one.
    """


class InfeasibleCombinationError(PolymixError):
    """Raised when repeated resampling never found a satisfiable combination."""
