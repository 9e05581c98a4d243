"""Exception hierarchy shared across the package."""


class SlitBundleError(Exception):
    """Base class for all library errors."""


class ExprSyntaxError(SlitBundleError):
    """Raised by the expression parser; carries the byte offset of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class EvalDomainError(SlitBundleError):
    """Evaluation hit a singular point (division by zero, sqrt of a negative)."""

    def __init__(self, message, fragment=None):
        if fragment:
            message = f"{message} in '{fragment}'"
        super().__init__(message)
        self.fragment = fragment


class DomainExit(SlitBundleError):
    """An integration left the declared chart domain before the requested time."""

    def __init__(self, exit_time, trajectory=None):
        super().__init__(f"trajectory left the domain at t = {exit_time:.12g}")
        self.exit_time = exit_time
        self.trajectory = trajectory


class StepSizeUnderflow(SlitBundleError):
    """Adaptive step control pushed the step below machine resolution."""


class RankDeficientFrame(SlitBundleError):
    """The frame lost linear independence at an evaluation point."""


class MetricNotPositiveDefinite(SlitBundleError):
    """Cholesky of the metric failed at an evaluation point."""


class SlitViolation(SlitBundleError):
    """A fiber vector hit (or started at) the zero section."""

    def __init__(self, message, time=None, trajectory=None):
        super().__init__(message)
        self.time = time
        self.trajectory = trajectory


class ConfigError(SlitBundleError):
    """A system configuration document is malformed."""


class NotReachable(SlitBundleError):
    """Geometric checks fail at a relevant point and shooting did not converge."""

    def __init__(self, message, best_residual=None, checks=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.checks = checks


class NoConvergence(SlitBundleError):
    """All restarts exhausted while geometric checks passed."""

    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual
