"""Exception hierarchy shared by every module of the package."""


class ShootingBaseError(Exception):
    """Root of all errors raised by singular_shooting."""


class InputError(ShootingBaseError, ValueError):
    """Dimension mismatch or otherwise malformed user input."""


class EvaluationError(ShootingBaseError):
    """A user-supplied function produced a non-finite value."""


class EliminationError(ShootingBaseError):
    """The control-elimination system is singular or ill-conditioned."""

    def __init__(self, message, time=None, cond=None):
        super().__init__(message)
        self.time = time
        self.cond = cond


class NonConvergenceError(EliminationError):
    """Damped Newton for the controls ran out of iterations."""

    def __init__(self, message, time=None, residual=None):
        super().__init__(message, time=time)
        self.residual = residual


class BlowUpError(ShootingBaseError):
    """The state-costate integration produced non-finite values."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class SolverError(ShootingBaseError):
    """Gauss-Newton failure. ``report`` holds the iterates computed so far."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class RankDeficiencyError(SolverError):
    pass


class DivergenceError(SolverError):
    pass


class PreconditionError(ShootingBaseError):
    """A quantity required to vanish (e.g. the V matrix) does not."""


class NotFoundError(ShootingBaseError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class NumericalError(ShootingBaseError):
    """A discretized problem is numerically degenerate (e.g. a singular Gram projection)."""
