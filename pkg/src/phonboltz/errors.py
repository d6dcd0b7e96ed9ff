"""Exception types shared across the package."""


class PhonboltzError(Exception):
    """Base class for all package errors."""


class ConfigError(PhonboltzError):
    """Invalid or unknown configuration input."""


class BathUnstable(PhonboltzError):
    """beta*omega(k) - mu <= 0 somewhere: the phonon Gibbs state is not trace class."""


class GridTooCoarse(PhonboltzError):
    """Finite-difference stencil does not fit inside the sampling grid."""


class DegenerateGradient(PhonboltzError):
    """|grad psi| below threshold on the level set; the surface measure is ill defined."""


class NonConvergent(PhonboltzError):
    """Extrapolation residual exceeded its tolerance."""


class QuadratureFail(PhonboltzError):
    """Adaptive quadrature refinement stalled above the requested tolerance."""


class RouteMismatch(PhonboltzError):
    """Two supposedly equivalent evaluation routes disagree beyond the error budget."""


class NoOpenChannel(PhonboltzError):
    """Total cross section vanishes: no post-collision momentum can be sampled."""


class GridMismatch(PhonboltzError):
    """Requested grid points (e.g. v +/- xi/2) do not lie on the stored grid."""


class NormUnbounded(PhonboltzError):
    """Observable norm exceeds the configured cap."""


class DimensionCap(PhonboltzError):
    """Truncated Fock-space dimension exceeds the configured limit."""


class StepRejected(PhonboltzError):
    """Krylov propagation error estimate exceeded its budget."""


class ParityMismatch(PhonboltzError):
    """n and N must have equal parity with n <= N."""


class TooLarge(PhonboltzError):
    """Exhaustive enumeration requested beyond the feasible size."""
