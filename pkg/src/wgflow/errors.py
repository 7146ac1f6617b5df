"""Exception types shared across the package.

Library code raises these where a caller (in particular the command-line
layer) needs to tell failure classes apart; plain ``ValueError`` is used for
ordinary argument-contract violations.
"""


class EngineError(Exception):
    """Base class for package-specific errors."""


class ConfigError(EngineError):
    """Invalid or inconsistent configuration."""


class DataError(EngineError):
    """Malformed input data: files, streams, observation records."""


class NumericalError(EngineError):
    """A numerical precondition failed: instability, rank deficiency,
    indefiniteness, singular model matrices."""


class UnsafeStepError(EngineError):
    """Requested step size exceeds the stability cap and was not forced."""
