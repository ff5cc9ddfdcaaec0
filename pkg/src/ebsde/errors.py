"""Exception types raised across the package."""


class EbsdeError(Exception):
    """Base class for all package errors."""


class ReturnTimeCapExceeded(EbsdeError):
    pass


class QuadratureNonConvergent(EbsdeError):
    pass


class DissipativityViolated(EbsdeError):
    pass


class BoundUnavailable(EbsdeError):
    pass


class ValidityViolated(EbsdeError):
    pass


class RootNotBracketed(EbsdeError):
    pass


class NonFiniteLoss(EbsdeError):
    pass


class SingularRegression(EbsdeError):
    pass


class DomainError(EbsdeError):
    pass


class InvalidCombination(EbsdeError):
    pass


class DriverDependsOnZ(InvalidCombination):
    """An estimator that needs a z-free driver was given one that depends on z."""


class ConfigError(EbsdeError):
    pass
