"""Exception hierarchy shared across the package.

Every error raised on purpose derives from CxrgenError so callers (and the
CLI exit-code mapping) can distinguish our failures from genuine bugs.
"""


class CxrgenError(Exception):
    """Base class for all package errors."""


class ShapeError(CxrgenError, ValueError):
    """Operands have incompatible shapes for the requested operation."""


class ContractError(CxrgenError, ValueError):
    """A documented precondition or invariant was violated by the caller."""


class ConfigError(CxrgenError, ValueError):
    """A configuration value is missing, malformed, or inconsistent."""


class IntegrityError(CxrgenError, ValueError):
    """Persisted data is corrupt, truncated, or fails its checksum."""


class DegenerateInputError(CxrgenError, ValueError):
    """Input is formally valid but statistically degenerate (e.g. zero variance)."""


class SizingError(CxrgenError, ValueError):
    """A sampling request asks for more data than the pool provides."""


class TrainingError(CxrgenError, RuntimeError):
    """Training produced a non-finite loss or otherwise diverged."""
