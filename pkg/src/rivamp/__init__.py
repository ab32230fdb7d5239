"""Asymptotic errors of convex penalized linear regression under rotationally
invariant random designs.

The package computes the predicted mean squared error of LASSO, ridge and
elastic-net estimators in the proportional high-dimensional regime through
two equivalent scalar fixed points (a state-evolution recursion and a
compact R-transform system), and validates the predictions on sampled
finite-size instances with a frozen-parameter message-passing solver and an
independent coordinate-descent baseline.
"""

from .errors import (
    CapabilityError,
    DiagnosticError,
    DivergenceError,
    DomainError,
    EvaluationError,
    InvariantError,
    IterationError,
    ParameterError,
    RangeError,
    RivampError,
)
from .experiments import (
    CDResult,
    ProblemInstance,
    SweepResult,
    convergence_study,
    coordinate_descent_solve,
    empirical_mse,
    generate_instance,
    sweep_alpha,
    sweep_lambda,
)
from .proximal import (
    Penalty,
    QuadraticLossOracle,
    jacobian_trace_average,
    prox_derivative,
    prox_quadratic_loss,
    prox_scalar,
    prox_vector,
    soft_threshold,
)
from .replica import (
    EstimatorLawSampler,
    ReplicaState,
    check_se_replica_equivalence,
    predicted_estimator_law,
    replica_rhs,
    solve_replica,
    tau_effective,
)
from .spectral import (
    ENSEMBLE_KINDS,
    MatrixEnsemble,
    SpectralLaw,
    empirical_law,
    expect,
    haar_orthogonal,
    law_for_ensemble,
    law_from_dict,
    law_to_dict,
    marchenko_pastur_law,
    r_transform,
    r_transform_derivative,
    row_orthogonal_law,
    sample_matrix,
    stieltjes,
    stieltjes_derivative,
    stieltjes_inverse,
    uniform_singular_law,
)
from .state_evolution import (
    FixedPointReport,
    MonteCarloBackend,
    Prior,
    SEParams,
    SEState,
    e1_moments,
    e2_moments,
    se_step,
    solve_se,
)
from .vamp import (
    ConvergenceTrace,
    FixedPointChecks,
    VampConfig,
    VampState,
    config_from_fixed_point,
    empirical_contraction_ratio,
    lambda2_threshold,
    lipschitz_bound_o1,
    lipschitz_bound_o2,
    optimality_residual,
    run_vamp,
    vamp_init,
    vamp_step_adaptive,
    vamp_step_oracle,
)

__version__ = "0.1.0"
