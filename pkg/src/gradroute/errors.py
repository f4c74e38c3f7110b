"""Exception and warning types shared across the package."""

from __future__ import annotations


class GradrouteError(Exception):
    """Base class for every error raised by gradroute."""


class ConfigurationError(GradrouteError, ValueError):
    """An invalid configuration value. ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class InputError(GradrouteError, ValueError):
    pass


class EmptyResponseError(InputError):
    """Truncation (or an empty mask) left no response token to score."""


class ParameterError(GradrouteError, ValueError):
    pass


class EmptyCorpusError(GradrouteError, ValueError):
    pass


class CorpusConsistencyError(GradrouteError, ValueError):
    """Inputs that are expected to describe the same corpus do not."""


class DegenerateInputError(GradrouteError, ValueError):
    """A statistic is undefined for the given input (e.g. all ranks tied)."""


class ParseError(GradrouteError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(ParseError):
    """A record parsed but violates a format invariant."""


class CorruptedManifestError(ValidationError):
    pass


class DegeneratePartitionWarning(UserWarning):
    """Routing produced an empty side, usually because every score is equal."""


class DegenerateStepWarning(UserWarning):
    """A finite-difference step was too small to change the loss at all."""
