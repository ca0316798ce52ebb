"""Exception types shared across the package."""


class DenoiseLabError(Exception):
    """Base class for every error raised by denoiselab."""


class DimensionError(DenoiseLabError, ValueError):
    """Point or grid dimension does not match the model, or is unsupported."""


class NumericalError(DenoiseLabError, ArithmeticError):
    """A numerical precondition failed (degeneracy, underflow, ill-posedness)."""


class NotPositiveDefiniteError(NumericalError):
    """Cholesky factorization hit a non-positive pivot."""

    def __init__(self, pivot, value):
        self.pivot = pivot
        self.value = value
        super().__init__(f"matrix is not positive definite: pivot {pivot} has value {value!r}")


class DegenerateDensityError(NumericalError):
    """Density requested for a mixture holding point-mass components."""


class ProposalMismatchError(NumericalError):
    """All importance weights underflowed to zero."""


class IllPosedError(NumericalError):
    """Unregularized deconvolution with a vanishing transfer function."""


class WraparoundError(NumericalError):
    """Grid box too tight for a periodic (FFT) convolution."""


class NotIntegrableError(NumericalError):
    """Line integral of a denoiser produced a non-finite value."""
