"""Discounted linear-quadratic zero-sum mean-field type games.

Riccati-based closed-loop and open-loop saddle points, exact and sampled
policy gradients, alternating and simultaneous gradient training, and a
Monte-Carlo simulator for the McKean-Vlasov and N-agent dynamics.
"""
from .equilibrium import (
    ConnectionReport,
    ConvexityReport,
    SaddleSolution,
    check_convexity_concavity,
    closed_loop_saddle,
    open_loop_feedback,
    saddle_via_best_response,
    verify_connection,
)
from .estimators import PolicyGradientSolver, RiccatiSaddleSolver
from .exceptions import (
    AssumptionViolated,
    ConditionFailedWarning,
    ConfigError,
    DimensionMismatch,
    GammaOutOfRange,
    IndefiniteInnerMatrix,
    LeftStabilizingSet,
    NoConvergence,
    NonFiniteSample,
    NotPositiveDefinite,
    NotSymmetric,
    SingularMatrix,
    SingularN,
    Unstable,
    ZSMFTGError,
)
from .gradient import (
    GradientBundle,
    best_response_K1,
    best_response_L1,
    evaluate_cost,
    exact_gradient,
)
from .model import (
    DistributionSpec,
    ModelParams,
    NoiseSpec,
    PolicyProfile,
    build_model,
    build_two_population,
    check_stability,
    table1_model,
)
from .optimize import IterateLog, IterateRecord, TrainSpec, train, train_ag, train_gda
from .simulator import (
    SimSpec,
    estimate_gradient_player,
    mkv_rollout,
    mkv_utilities,
    n_agent_rollout,
    propagation_of_chaos,
    sample_sphere,
)
from .solvers import (
    RiccatiSolution,
    solve_are_saddle,
    solve_dare,
    solve_discounted_lyapunov,
    solve_open_loop_riccati,
)

__version__ = "0.1.0"
