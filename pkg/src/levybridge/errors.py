"""Exception hierarchy shared by every module."""


class LevyBridgeError(Exception):
    """Base class for all errors raised by the package."""


class NumericalFailure(LevyBridgeError, ArithmeticError):
    """A quadrature or root search did not reach its tolerance."""


class DegeneratePin(LevyBridgeError, ValueError):
    """The endpoint density f_r(z) is zero or not finite."""


class UnreachableState(LevyBridgeError, ValueError):
    """The current state cannot reach the pin (zero kernel denominator)."""


class ZeroEvidence(LevyBridgeError, ValueError):
    """A Bayes denominator vanished (below 1e-300)."""


class PreconditionError(LevyBridgeError, ValueError):
    """Arguments violate a documented precondition."""
