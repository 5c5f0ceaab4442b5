"""Exception hierarchy shared by every module of the package."""


class DPPBallsError(Exception):
    """Base class for all package errors."""


class NumericError(DPPBallsError):
    """Raised when a numeric precondition or convergence check fails."""


class NonPositiveWeight(NumericError):
    pass


class SpectrumOutOfRange(NumericError):
    pass


class NegativeWeightFunction(NumericError):
    pass


class SpectralNormAtLeastOne(NumericError):
    pass


class OrderingViolated(NumericError):
    pass


class QuadratureNotConverged(NumericError):
    pass


class MomentDiverges(NumericError):
    pass


class GammaOutOfRange(NumericError):
    pass


class RegimeParameterMismatch(NumericError):
    pass


class CertificateFailed(NumericError):
    pass


class CertificateMissing(NumericError):
    pass


class TruncationBudgetExceeded(NumericError):
    pass


class EmptySample(DPPBallsError, ValueError):
    pass


class ConfigInvalid(DPPBallsError, ValueError):
    """Configuration rejected at load time.

    ``path`` names the offending field, e.g. ``marks.radius.beta``.
    """

    def __init__(self, path, message):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")
