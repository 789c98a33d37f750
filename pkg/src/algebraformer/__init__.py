"""Algebraformer: a transformer that solves ill-conditioned linear systems.

The package covers the full pipeline: dense reference solvers (LU, QR,
Jacobi SVD), Chebyshev spectral discretization of boundary value problems,
dataset generation, a tape-based autodiff engine, the column-patch
transformer with its training loop, Newton's method for p-norm regression
with a learned-direction acceleration harness, and a CLI tying it together.
"""

from .bvp import (
    CoefficientSample,
    DatasetError,
    EquationKind,
    LinearSystemSample,
    add_noise,
    assemble_operator,
    generate_dataset,
    load_dataset,
    sample_coefficients,
    save_dataset,
)
from .chebyshev import (
    ChebyshevGrid,
    DiffMatrix,
    barycentric_eval,
    convergence_profile,
    diff_matrix,
    gauss_lobatto_nodes,
    scale_to_interval,
)
from .estimator import AlgebraformerSolver
from .linalg import (
    NoConvergenceError,
    RankDeficientError,
    SingularMatrixError,
    SvdResult,
    condition_number,
    lu_solve,
    qr_least_squares,
    svd,
    svd_least_squares,
)
from .model import (
    ModelConfig,
    ModelWeights,
    desk_config,
    encode_newton_state,
    encode_system,
    forward,
    init_weights,
    load_weights,
    paper_config,
    parameter_count,
    save_weights,
    solve_system,
)
from .newton import (
    ExactSolve,
    LearnedDirection,
    LpProblem,
    NewtonTrajectory,
    accelerated_newton,
    generate_trajectories,
    newton_solve,
    sample_problem,
)
from .training import (
    DivergenceError,
    MetricsLog,
    TrainConfig,
    cosine_lr,
    fine_tune,
    noise_benchmark,
    relative_mse,
    train,
)

__version__ = "0.1.0"
