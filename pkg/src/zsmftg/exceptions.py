"""Exception and warning types raised across the package."""


class ZSMFTGError(Exception):
    """Base class for all package errors."""


class ConfigError(ZSMFTGError, ValueError):
    """Invalid game configuration or config document."""


class DimensionMismatch(ConfigError):
    pass


class NotSymmetric(ConfigError):
    def __init__(self, name, max_asym=None):
        self.name = name
        self.max_asym = max_asym
        msg = f"{name} is not symmetric"
        if max_asym is not None:
            msg += f" (max |M - M^T| = {max_asym:.3e})"
        super().__init__(msg)


class NotPositiveDefinite(ConfigError):
    def __init__(self, name, min_eig=None):
        self.name = name
        self.min_eig = min_eig
        msg = f"{name} is not positive definite"
        if min_eig is not None:
            msg += f" (smallest eigenvalue {min_eig:.3e})"
        super().__init__(msg)


class GammaOutOfRange(ConfigError):
    pass


class Unstable(ZSMFTGError):
    """A closed-loop matrix violates the discounted stability condition."""


class NoConvergence(ZSMFTGError):
    def __init__(self, msg, iterations=None, residual=None):
        self.iterations = iterations
        self.residual = residual
        super().__init__(msg)


class SingularMatrix(ZSMFTGError, ArithmeticError):
    def __init__(self, msg, smallest_singular_value=None):
        self.smallest_singular_value = smallest_singular_value
        super().__init__(msg)


class SingularN(SingularMatrix):
    """The block matrix N(P) is not invertible at a Riccati iterate."""


class IndefiniteInnerMatrix(ZSMFTGError):
    """gamma B^T P B + R lost positive definiteness during a DARE solve."""


class AssumptionViolated(ZSMFTGError):
    pass


class NonFiniteSample(ZSMFTGError):
    def __init__(self, msg, index=None):
        self.index = index
        super().__init__(msg)


class LeftStabilizingSet(ZSMFTGError):
    def __init__(self, msg, log=None, iteration=None):
        self.log = log
        self.iteration = iteration
        super().__init__(msg)


class ConditionFailedWarning(UserWarning):
    """A sufficient saddle-point condition does not hold; gains are still returned."""
