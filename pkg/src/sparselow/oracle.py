"""Brute-force reference implementations for small problem sizes.

These make the optimality claims of the fast routines testable: the exact
projection onto the rank-and-row-sparsity set by support enumeration (the
projection is NP-hard in general, so this only runs under an explicit
budget), a grid-search prox for row soft thresholding, and a fully dense
single solver step used as the oracle for the factored fast paths.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import core
from .errors import BudgetExceededError, ParameterError

DEFAULT_SUPPORT_BUDGET = 200_000


@dataclass(frozen=True)
class OracleBudget:
    """Cap on the number of row supports the exact projection may enumerate."""

    max_support_enumeration: int = DEFAULT_SUPPORT_BUDGET


def exact_projection(X, k, s, budget=None):
    """Metric projection onto rank <= k with <= s nonzero rows, by enumeration.

    Scans every support of size ``s``, scores it by the sum of its top-``k``
    squared singular values (larger score means smaller distance) and returns
    the rank-``k`` truncation of the winning submatrix.  Ties go to the
    lexicographically smallest support.  Refuses to run when ``C(M, s)``
    exceeds the budget.
    """
    budget = budget or OracleBudget()
    X = np.asarray(X, dtype=np.float64)
    M, N = X.shape
    if not (1 <= k <= min(M, N) and 1 <= s <= M):
        raise ParameterError(f"invalid projection parameters k={k}, s={s} for shape {X.shape}")
    count = math.comb(M, s)
    if count > budget.max_support_enumeration:
        raise BudgetExceededError(
            f"enumerating C({M},{s}) = {count} supports exceeds the budget "
            f"of {budget.max_support_enumeration}"
        )
    supports = np.array(list(itertools.combinations(range(M), s)), dtype=np.int64)
    submatrices = X[supports, :]  # (count, s, N)
    svals = np.linalg.svd(submatrices, compute_uv=False)
    scores = np.sum(svals[:, :k] ** 2, axis=1)
    best = int(np.argmax(scores))  # first maximum = lexicographically smallest support
    masked = np.zeros_like(X)
    masked[supports[best]] = X[supports[best]]
    result = core.truncate_rank(masked, k)
    # internal consistency: the returned point may not be farther from X than
    # any enumerated candidate
    dist = np.linalg.norm(X - result.densify())
    best_possible = np.sqrt(max(np.sum(X * X) - scores[best], 0.0))
    assert dist <= best_possible + 1e-9 * max(1.0, np.linalg.norm(X))
    return result


def exact_prox_rowwise(y, mu, resolution=1_000_000):
    """Grid-search minimizer of ``mu * ||x|| + 0.5 * ||x - y||^2`` over one row.

    The minimizer is collinear with ``y``, so a 1-d scan over the scaling
    suffices; the grid step is ``||y|| / resolution``.
    """
    if mu < 0:
        raise ParameterError(f"mu must be nonnegative, got {mu}")
    y = np.asarray(y, dtype=np.float64).ravel()
    ny = float(np.linalg.norm(y))
    if mu == 0 or ny == 0:
        return y.copy() if mu == 0 else np.zeros_like(y)
    t = np.linspace(0.0, ny, resolution + 1)
    values = mu * t + 0.5 * (t - ny) ** 2
    t_best = t[int(np.argmin(values))]
    return (t_best / ny) * y


def dense_reference_step(op, y, X, k, s, variant, alpha, mu=None):
    """One update of the chosen algorithm, carried out entirely in dense arithmetic.

    ``X`` is the dense current iterate (assumed to have rank <= k for the
    Riemannian variants).  The tangent projection is evaluated through the
    dense ``U U^T Z + Z V V^T - U U^T Z V V^T`` formula so the result is an
    independent oracle for the factored fast paths.  For ``variant="rpg"``
    the soft threshold ``mu`` defaults to the k-th largest row norm of the
    rank-truncated trial point.
    """
    X = np.asarray(X, dtype=np.float64)
    g = op.adjoint(op.apply(X) - np.asarray(y))
    if variant == "iht":
        return core.project_rows_then_rank(X - alpha * g, k, s).densify()
    base = core.truncate_rank(X, k)
    U, V = base.U, base.V
    UtG = U.T @ g
    pg = U @ UtG + (g @ V) @ V.T - U @ (UtG @ V) @ V.T
    trial = X - alpha * pg
    if variant == "riht":
        return core.project_rows_then_rank(trial, k, s).densify()
    if variant == "rpg":
        truncated = core.truncate_rank(trial, k)
        if mu is None:
            norms = np.sort(truncated.row_norms())[::-1]
            mu = float(norms[k - 1]) if norms.size >= k else 0.0
        return core.soft_threshold_rows(truncated.densify(), mu)
    raise ParameterError(f"unknown variant {variant!r}")
