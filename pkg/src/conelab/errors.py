"""Shared exception types."""


class FeasibilityError(ValueError):
    """An eigenvalue vector left the admissible cone.

    Carries the first violated defining inequality: ``index`` is the order j of
    the offending elementary symmetric function (or a descriptive string for
    composed cones) and ``value`` its computed value.
    """

    def __init__(self, message, lam=None, index=None, value=None):
        super().__init__(message)
        self.lam = None if lam is None else tuple(lam)
        self.index = index
        self.value = value


class ParameterError(ValueError):
    """Invalid structural parameters (rho, alpha, tau outside their ranges)."""


class SamplingError(RuntimeError):
    """A sampler produced no feasible points."""


class NonConvergenceError(RuntimeError):
    """Newton iteration stagnated or a line search was exhausted."""

    def __init__(self, message, history=None, node=None):
        super().__init__(message)
        self.history = history
        self.node = node


class ConstructionError(RuntimeError):
    """An admissible-start construction failed within its search budget."""


class SchemeError(RuntimeError):
    """A structural monotonicity assertion of an approximation scheme failed,
    usually flagging a discretization that is too coarse."""


class RateUnavailableError(RuntimeError):
    """The requested fit band lies inside the non-settled region."""


class ResolutionError(ValueError):
    """A grid is too coarse for the requested stencil."""
