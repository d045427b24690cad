"""Exception types raised across the registration pipeline."""


class RegistrationError(Exception):
    """Base class for all errors raised by this package."""


class FrameMismatch(RegistrationError):
    """Operands live in different coordinate frames."""


class NearInfinitePoint(RegistrationError):
    """A transformed point has a homogeneous scale too close to zero."""


class DegenerateImageSize(RegistrationError):
    """Image width or height below the minimum of 2 pixels."""


class NonInvertible(RegistrationError):
    """A homography matrix is singular or numerically non-invertible."""


class ShapeMismatch(RegistrationError):
    """Grid or array shapes are inconsistent with the declared geometry."""


class OutOfBounds(RegistrationError):
    """A sample coordinate lies outside the valid image area."""


class ZeroVariance(RegistrationError):
    """A descriptor is numerically constant, so ZNCC is undefined."""


class EmptyTargetSet(RegistrationError):
    """Soft matching requires at least one target keypoint."""


class EmptyMatches(RegistrationError):
    """An operation requires at least one match."""


class InsufficientPoints(RegistrationError):
    """Fewer correspondences than the minimum the estimator needs."""


class RankDeficient(RegistrationError):
    """The correspondence configuration is degenerate (e.g. collinear)."""


class NoConsensus(RegistrationError):
    """RANSAC failed to find a model with enough inliers."""


class SingularNormalEquations(RegistrationError):
    """Damped least-squares hit a singular normal system."""


class NonFinite(RegistrationError):
    """A loss term or weight is NaN or infinite."""


class NonFiniteGradient(RegistrationError):
    """A backward pass produced NaN or infinite gradients."""


class DivergenceDetected(RegistrationError):
    """Training loss became NaN or infinite."""


class ImageLoadError(RegistrationError):
    """An image file could not be read."""
