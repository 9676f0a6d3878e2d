"""Exception taxonomy shared across the toolkit.

Exit-code mapping for the CLI: usage problems are handled by argparse,
data/validation problems raise ClothlitError subclasses (exit 2), and
numerical failures raise ConvergenceError/DivergenceError (exit 3).
"""


class ClothlitError(Exception):
    """Base class for all toolkit errors."""


class DecodeError(ClothlitError):
    """Malformed or undecodable image bytes."""


class FormatError(ClothlitError):
    """Unsupported image format (bit depth, channel layout, bad header)."""


class DimensionError(ClothlitError):
    """Raster shapes or channel counts are incompatible."""


class ParameterError(ClothlitError):
    """An argument violates a documented precondition."""


class DegenerateRegionError(ClothlitError):
    """A region or support has zero/negative mean, empty pixels, etc."""


class UndefinedAccuracyError(ClothlitError):
    """Edge accuracies requested with an empty edge set."""


class ParseError(ClothlitError):
    """Malformed serialized document."""


class MergeConflictError(ClothlitError):
    """Two annotation documents cannot be merged (different images/params)."""


class AnnotationValidationError(ClothlitError):
    """An annotation document failed validation; carries the violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__(
            "annotation failed validation: "
            + "; ".join(str(v) for v in self.violations[:5])
            + ("..." if len(self.violations) > 5 else "")
        )


class ConvergenceError(ClothlitError):
    """An iterative solver did not reach its tolerance."""

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class DivergenceError(ClothlitError):
    """An iterative solver produced non-finite values."""


class GenerationError(ClothlitError):
    """The synthetic generator could not satisfy its invariants."""
