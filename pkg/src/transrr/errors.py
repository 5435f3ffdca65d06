"""Exception hierarchy shared by the estimator, risk solver and CLI."""


class TransRRError(Exception):
    """Base class for all package errors."""


class ParameterError(TransRRError, ValueError):
    """Invalid loss or model parameters."""


class InputError(TransRRError, ValueError):
    """Malformed data: non-finite values, shape mismatches, bad files."""


class ConvergenceError(TransRRError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    ``best`` holds the best iterate found (a FitResult or RiskSolution).
    """

    def __init__(self, message, best=None, stage=None):
        super().__init__(message)
        self.best = best
        self.stage = stage


class ModelError(TransRRError, RuntimeError):
    """The fixed-point system has no root in its admissible bracket."""


class AccuracyError(TransRRError, RuntimeError):
    """Quadrature refinement failed to reach the requested accuracy."""


class NumericalError(TransRRError, ArithmeticError):
    """Linear-algebra failure, e.g. a singular covariance."""


class RunError(TransRRError, RuntimeError):
    """Too many replicates of an experiment failed."""
