class AffineWalkError(Exception):
    """Base class for library errors."""


class InvalidLawError(AffineWalkError, ValueError):
    pass


class UnsupportedLawError(AffineWalkError, ValueError):
    pass


class MomentConditionError(AffineWalkError, ValueError):
    pass


class InvalidArgumentError(AffineWalkError, ValueError):
    pass


class DomainError(AffineWalkError, ValueError):
    """Starting point outside the domain where V is defined."""


class MissingDrawsError(AffineWalkError):
    pass


class CertificateNotFound(AffineWalkError):
    """Search budget exhausted; says nothing about the condition being false."""


class InsufficientSurvivorsError(AffineWalkError):
    pass
