"""Exception types raised across the package."""

import numpy as np


class RelayGPError(Exception):
    """Base class for package errors."""


class ParameterDomainError(RelayGPError, ValueError):
    """A parameter lies outside its admissible domain."""


class SingularityError(RelayGPError, np.linalg.LinAlgError):
    """SPD factorization failed even after jitter escalation."""

    def __init__(self, message, jitter=None):
        super().__init__(message)
        self.jitter = jitter


class DegeneracyError(RelayGPError, np.linalg.LinAlgError):
    """A pivot, Schur complement or small linear system is numerically degenerate."""


class CapacityError(RelayGPError):
    """Problem size exceeds a configured cap."""


class ConfigError(RelayGPError, ValueError):
    """Invalid experiment configuration."""

    def __init__(self, message, line=None, key=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.key = key
