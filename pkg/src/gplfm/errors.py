"""Exception types raised across the library."""


class GplfmError(Exception):
    """Base class for all library errors."""


class KernelDomainError(GplfmError, ValueError):
    """A kernel was evaluated outside its domain (e.g. Wiener at t < 0)."""


class UnrealizableKernel(GplfmError, ValueError):
    """The kernel tree has no supported state-space realization."""


class InvalidTruncation(GplfmError, ValueError):
    """Periodic-family truncation order J must be >= 1."""


class NonStationary(GplfmError, ValueError):
    """Stationary covariance requested for a realization without one."""


class SingularStiffness(GplfmError, ValueError):
    """Stiffness matrix is singular; free-free systems are unsupported."""


class DimensionMismatch(GplfmError, ValueError):
    """Matrix/vector dimensions are inconsistent."""


class NoInputs(GplfmError, ValueError):
    """Augmentation requires at least one latent input."""


class DivergedFilter(GplfmError, RuntimeError):
    """Innovation covariance lost positive definiteness beyond repair."""


class IllConditioned(GplfmError, RuntimeError):
    """A factorization failed even after jitter was applied."""


class OptimizationFailed(GplfmError, RuntimeError):
    """No optimizer start produced a finite objective."""


class BandExceedsNyquist(GplfmError, ValueError):
    """Requested excitation band extends past the Nyquist frequency."""


class ZeroReference(GplfmError, ValueError):
    """A metric was asked to normalize by a zero-power reference signal."""


class WindowTooShort(GplfmError, ValueError):
    """A statistics window contains no samples."""
