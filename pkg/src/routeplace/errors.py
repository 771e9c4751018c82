"""Exception types shared across the package.

Everything user-facing derives from RouteplaceError so the CLI can map
domain failures to a single exit code.
"""


class RouteplaceError(Exception):
    """Base class for all domain errors."""


class ParseError(RouteplaceError):
    """Malformed input file; message carries the line number."""


class DanglingReferenceError(ParseError):
    """A pin names a cell or net id that was never declared."""


class InvariantError(RouteplaceError):
    """A structural invariant of the data model is violated."""


class InfeasibleSpecError(RouteplaceError):
    """A synthetic generator spec cannot be satisfied."""


class ConfigError(RouteplaceError):
    """Bad configuration value or file."""


class ChecksumError(RouteplaceError):
    """Checkpoint bytes fail CRC or are truncated."""


class StaleActivationsError(RouteplaceError):
    """backward() called twice on the same forward activations."""


class DivergenceError(RouteplaceError):
    """Optimizer hit a non-finite objective it could not back out of."""
