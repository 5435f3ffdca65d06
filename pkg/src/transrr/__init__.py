"""Transfer learning for ridge-regularized robust regression."""
from .errors import (
    AccuracyError,
    ConvergenceError,
    InputError,
    ModelError,
    NumericalError,
    ParameterError,
    RunError,
    TransRRError,
)
from .estimator import (
    TAU_GRID,
    Dataset,
    EstimatorConfig,
    FitResult,
    cross_validate_tau,
    fit_robust_ridge,
    pooled_rr,
    single_rr,
    trans_rr,
    whiten,
)
from .loss import LossModel, prox, prox_deriv_c, prox_deriv_x, psi, psi_prime, rho
from .risk import (
    MixtureComponent,
    PopulationSpec,
    RiskSolution,
    ScalarDist,
    expectation_E1,
    expectation_E2,
    expectation_E2_direct,
    risk_curve,
    solve_risk_system,
    source_risk,
)

__version__ = "0.1.0"
