"""Recovery of jointly row-sparse and low-rank matrices from linear measurements.

The package implements iterative hard thresholding with quasi-optimal
projections, a Riemannian variant with factored fast paths for rank-one
measurements, and a Riemannian proximal gradient method for unknown row
sparsity, together with measurement-operator backends, brute-force oracles
and an experiment harness.
"""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    ORTHONORMALITY_TOL,
    STRUCTURAL_TOL,
    FactoredMatrix,
    ProblemDims,
    TangentVector,
    hard_threshold_rows,
    project_rank_then_rows,
    project_rows_then_rank,
    retract_compact,
    row_norms,
    soft_threshold_rows,
    tangent_project,
    truncate_rank,
)
from .errors import (  # noqa: F401
    BudgetExceededError,
    NumericalError,
    ParameterError,
    SparseLowError,
)
from .operators import (  # noqa: F401
    BACKENDS,
    DenseOperator,
    FourierBlindDeconvOperator,
    MeasurementOperator,
    RankOneOperator,
    make_fourier_blind_deconv,
    make_gaussian,
    make_operator,
    make_rank_one,
)
from .solvers import (  # noqa: F401
    RunRecord,
    SolverConfig,
    StepRule,
    armijo_search,
    estimate_restricted_spectral_norm,
    objective,
    solve,
)
