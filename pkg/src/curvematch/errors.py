"""Exception hierarchy shared by all curvematch modules."""


class CurvematchError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(CurvematchError, ValueError):
    """An argument violates a documented precondition."""


class SingularFitError(CurvematchError):
    """A least-squares or interpolation system is rank deficient."""

    def __init__(self, message: str, rank: int | None = None, needed: int | None = None):
        super().__init__(message)
        self.rank = rank
        self.needed = needed


class DegenerateCurveError(CurvematchError):
    """|c_theta| vanished (below threshold) at a quadrature node."""

    def __init__(self, message: str, node: float | None = None):
        super().__init__(message)
        self.node = node


class DegeneratePathError(CurvematchError):
    """A path is degenerate at a space-time quadrature node."""

    def __init__(self, message: str, t: float | None = None, theta: float | None = None):
        super().__init__(message)
        self.t = t
        self.theta = theta


class UnsupportedDimensionError(CurvematchError):
    """Operation restricted to planar curves was called with d != 2."""


class ExpStepError(CurvematchError):
    """Newton iteration for a discrete exponential step did not converge."""

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index


class PartialResultError(CurvematchError):
    """A batch operation failed for some inputs; carries the failed indices."""

    def __init__(self, message: str, failed_indices: list | None = None):
        super().__init__(message)
        self.failed_indices = failed_indices or []


class EmptyForegroundError(CurvematchError):
    """Binary image contains no foreground pixels."""


class DegenerateHistogramError(CurvematchError):
    """Image histogram has a single occupied bin; no threshold separates it."""
