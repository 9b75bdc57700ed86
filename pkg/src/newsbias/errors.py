"""Exception hierarchy shared across the toolkit.

``NewsbiasError`` and its subclasses cover everything a user can trigger
through bad inputs or infeasible configuration; the CLI maps them to exit
code 1.  ``InternalError`` marks violated invariants that should never be
reachable from the outside and maps to exit code 2.
"""


class NewsbiasError(Exception):
    """Base class for user-facing errors (bad data, bad config)."""


class DataError(NewsbiasError):
    """A record or file could not be parsed or failed validation."""


class ConfigError(NewsbiasError):
    """A configuration is invalid or cannot be satisfied by the data."""


class TrainingDiverged(NewsbiasError):
    """Training hit a non-finite loss; carries the step diagnostic."""


class InternalError(Exception):
    """An internal invariant was violated (a bug, not a user error)."""
