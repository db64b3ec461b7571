"""Exception hierarchy shared across the package.

Everything raised on purpose derives from :class:`MpsError`, so callers
(including the CLI) can map failures to exit codes without matching on
message strings.
"""


class MpsError(Exception):
    """Base class for all package-specific errors."""


class ArgumentError(MpsError, ValueError):
    """An argument is malformed, out of range, or inconsistent."""


class DimensionError(ArgumentError):
    """Shape or dimension mismatch between operands."""


class DomainError(ArgumentError):
    """Input value lies outside the embedding support."""


class CapabilityError(ArgumentError):
    """The embedding's Gram matrix is not diagonal, so exact sampling
    is unavailable for models built on it."""


class NotSpdError(MpsError, ValueError):
    """Matrix failed a symmetric positive semi-definiteness check."""


class NumericalError(MpsError, ArithmeticError):
    """A numerical routine hit a degenerate or non-finite regime."""


class DegenerateContractionError(NumericalError):
    """An intermediate contraction vector collapsed to all zeros."""


class DegenerateDensityError(NumericalError):
    """A (conditional) density carries no mass over the support."""


class ModelFormatError(MpsError, ValueError):
    """Model file is malformed, truncated, or fails its checksum."""


class TrainingFailedError(MpsError, RuntimeError):
    """Training aborted.  Carries diagnostics and, where one exists, the
    last checkpoint that still satisfied the run's constraints."""

    def __init__(self, message, checkpoint=None, diagnostics=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.diagnostics = dict(diagnostics or {})
