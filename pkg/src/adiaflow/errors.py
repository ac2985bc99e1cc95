"""Exception hierarchy shared by all adiaflow modules."""


class AdiaflowError(Exception):
    """Base class for every error raised by this package."""


class NumericalError(AdiaflowError):
    """A field or derived quantity evaluated to a non-finite number."""


class CheckFailed(AdiaflowError):
    """A derivative cross-check exceeded its tolerance.

    Attributes
    ----------
    point : ndarray
        Sample point with the largest deviation.
    deviation : float
        The deviation measured there.
    """

    def __init__(self, message, point=None, deviation=None):
        super().__init__(message)
        self.point = point
        self.deviation = deviation


class DegenerateGradient(AdiaflowError):
    """|grad H| fell below the configured floor."""


class NotTangent(AdiaflowError):
    pass


class NotOnSurface(AdiaflowError):
    pass


class RetractFailed(AdiaflowError):
    pass


class NoConvergence(AdiaflowError):
    pass


class NotCritical(AdiaflowError):
    pass


class CorrespondenceFailed(AdiaflowError):
    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class NoConnection(AdiaflowError):
    """No connecting trajectory between the requested critical points."""


class StiffnessFailure(AdiaflowError):
    pass


class FrameDegenerate(AdiaflowError):
    pass


class IllConditioned(AdiaflowError):
    """Singular values straddle the rank threshold without a clear gap."""


class NotSurjective(AdiaflowError):
    """The Gram matrix D D* could not be factored."""


class Diverged(AdiaflowError):
    pass


class DomainExit(AdiaflowError):
    pass


class InsufficientData(AdiaflowError):
    pass


class UniquenessViolated(AdiaflowError):
    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class ConfigError(AdiaflowError, ValueError):
    pass


class SuiteFailure(AdiaflowError):
    pass
