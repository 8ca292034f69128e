"""Matrix-free stochastic diagonal equilibration.

The main entry point is :func:`sgd_equilibrate`, which finds positive
diagonal scalings ``d, e`` so that ``diag(d) A diag(e)`` has prescribed row
and column norms, touching ``A`` only through products with random sign
vectors.
"""

from .core import (
    DEFAULT_GAMMA,
    DEFAULT_MAX_LOG_SCALE,
    EquilibrationParams,
    InvariantViolation,
    IterationRecord,
    ScalingResult,
    gradient,
    objective,
    sgd_equilibrate,
)
from .exact import (
    NotEquilibratableError,
    block_argmin,
    lambert_w,
    newton_oracle,
    regularized_block_min,
    sinkhorn_knopp,
)
from .linops import (
    CallableOperator,
    CountingOperator,
    ExplicitMatrix,
    LinearOperator,
    MatrixOperator,
    ScaledOperator,
    aslinearoperator,
)
from .metrics import condition_number, kappa_bounds, log_phi, phi, rms_error
from .mmio import MatrixMarketError, read_matrix_market, write_matrix_market
from .solvers import (
    LassoProblem,
    ccp_lasso,
    ccp_lasso_preconditioned,
    lasso_oracle,
    lsqr,
    lsqr_preconditioned,
)
from .variants import (
    BlockStructure,
    Tensor3,
    TensorParams,
    sgd_equilibrate_block,
    sgd_equilibrate_symmetric,
    sgd_equilibrate_targets,
    sgd_equilibrate_tensor,
)

__version__ = "0.1.0"
