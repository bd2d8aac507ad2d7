"""Exception and warning types shared across the package."""


class IcAlignError(Exception):
    """Base class for all errors raised by icalign."""


class DegenerateAffineError(IcAlignError):
    """Affine parameter vector whose linear part is not invertible."""


class ImageTooSmallError(IcAlignError):
    """Image smaller than the minimum an operation supports."""


class PyramidDepthError(IcAlignError):
    """Requested pyramid would shrink a level below the minimum size."""


class UnderdeterminedSystemError(IcAlignError):
    """Fewer valid pixels than warp parameters when assembling normal equations."""


class IllConditionedHessianError(IcAlignError):
    """Normal-equation matrix singular beyond the conditioning floor."""


class NoAdmissibleStepError(IcAlignError):
    """Every damping proposal produced a non-finite update or objective."""


class InsufficientMarginError(IcAlignError):
    """Synthetic warp requires samples outside the source image."""


class MotionTooLargeError(IcAlignError):
    """Drawn motion leaves too few pixels co-visible between the frames."""


class GenerationError(IcAlignError):
    """Emitted synthetic pair failed its ground-truth self-consistency check."""


class FormatError(IcAlignError):
    """Malformed or unsupported input file."""


class NearCutLocusWarning(UserWarning):
    """Rotation angle within tolerance of pi; logarithm has reduced precision."""
