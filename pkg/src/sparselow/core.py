"""Domain types, row/rank thresholding projections and fixed-rank tangent calculus.

Conventions used package-wide:

* a dense matrix is a plain ``numpy.ndarray`` of shape ``(M, N)``;
* a row support is a sorted array of distinct 0-based row indices;
* ``ORTHONORMALITY_TOL`` and ``STRUCTURAL_TOL`` are the two tolerance
  constants shared by runtime validation and by the property tests.

All functions here are pure; the value types are frozen after construction
and safe to share between concurrently running solver trials.
"""

from __future__ import annotations

from dataclasses import InitVar, dataclass

import numpy as np

from .errors import NumericalError, ParameterError

# Relative Frobenius tolerance for orthonormality of stored factors.
ORTHONORMALITY_TOL = 1e-12
# Tolerance for structural identities (tangency constraints, densify checks).
STRUCTURAL_TOL = 1e-10

_EPS = float(np.finfo(np.float64).eps)


@dataclass(frozen=True)
class ProblemDims:
    """Dimensions of a recovery problem instance.

    ``M x N`` ambient matrices of rank at most ``k`` with at most ``s``
    nonzero rows, observed through ``m`` linear measurements.  Requires
    ``k < s`` (with ``k >= s`` the rank constraint would be inactive).
    """

    M: int
    N: int
    k: int
    s: int
    m: int

    def __post_init__(self):
        if self.M < 1 or self.N < 1:
            raise ParameterError(f"matrix dimensions must be positive, got {self.M}x{self.N}")
        if self.k < 1:
            raise ParameterError(f"rank bound k must be >= 1, got k={self.k}")
        if not self.k < self.s:
            raise ParameterError(
                f"row sparsity must satisfy k < s, got k={self.k}, s={self.s}"
            )
        if self.s > self.M:
            raise ParameterError(f"row sparsity s={self.s} exceeds row count M={self.M}")
        if self.k > self.N:
            raise ParameterError(f"rank bound k={self.k} exceeds column count N={self.N}")
        if self.m < 1:
            raise ParameterError(f"measurement count must be >= 1, got m={self.m}")

    @property
    def shape(self):
        return (self.M, self.N)


def _as_support(indices, M):
    sup = np.asarray(indices, dtype=np.int64).ravel()
    sup = np.sort(sup)
    if sup.size and (sup[0] < 0 or sup[-1] >= M or np.any(np.diff(sup) == 0)):
        raise ParameterError(f"support must hold distinct indices in [0, {M}), got {sup}")
    return sup


@dataclass(frozen=True)
class FactoredMatrix:
    """A rank-``r`` matrix stored as ``U @ diag(sigma) @ V.T`` with explicit row support.

    ``U`` is ``M x r`` and ``V`` is ``N x r``, both with orthonormal columns;
    ``sigma`` holds the nonnegative singular values in nonincreasing order.
    Rows of ``U`` outside ``support`` are exactly zero.
    """

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray
    support: np.ndarray
    # Skipped only on internal hot paths whose factors come straight from
    # LAPACK factorizations; user-facing constructions stay checked.
    validate: InitVar[bool] = True

    def __post_init__(self, validate):
        U = np.ascontiguousarray(np.asarray(self.U, dtype=np.float64))
        V = np.ascontiguousarray(np.asarray(self.V, dtype=np.float64))
        sigma = np.asarray(self.sigma, dtype=np.float64).ravel()
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "support", _as_support(self.support, U.shape[0]))
        if not validate:
            return
        if U.ndim != 2 or V.ndim != 2:
            raise ParameterError("U and V must be 2-d arrays")
        r = sigma.size
        if U.shape[1] != r or V.shape[1] != r:
            raise ParameterError(
                f"inconsistent factor shapes: U {U.shape}, sigma ({r},), V {V.shape}"
            )
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V)) and np.all(np.isfinite(sigma))):
            raise NumericalError("factored matrix contains non-finite entries")
        if np.any(sigma < 0):
            raise ParameterError("singular values must be nonnegative")
        if r > 1 and np.any(np.diff(sigma) > 1e-12 * max(1.0, float(sigma[0]))):
            raise ParameterError("singular values must be in nonincreasing order")
        if r > 0:
            scale = ORTHONORMALITY_TOL * max(1.0, np.sqrt(r))
            if np.linalg.norm(U.T @ U - np.eye(r)) > scale:
                raise ParameterError("columns of U are not orthonormal")
            if np.linalg.norm(V.T @ V - np.eye(r)) > scale:
                raise ParameterError("columns of V are not orthonormal")
            mask = np.ones(U.shape[0], dtype=bool)
            mask[self.support] = False
            if np.any(np.linalg.norm(U[mask], axis=1) > 0):
                raise ParameterError("U has nonzero rows outside the declared support")

    @property
    def rank(self):
        return int(self.sigma.size)

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[0])

    def densify(self):
        """Return the plain ``M x N`` array ``U @ diag(sigma) @ V.T``."""
        return (self.U * self.sigma) @ self.V.T

    def row_norms(self):
        """Euclidean norms of the rows; equals ``row_norms(self.densify())``."""
        return np.linalg.norm(self.U * self.sigma, axis=1)

    def frobenius_norm(self):
        return float(np.linalg.norm(self.sigma))

    @classmethod
    def zero(cls, M, N):
        return cls(
            U=np.zeros((M, 0)),
            sigma=np.zeros(0),
            V=np.zeros((N, 0)),
            support=np.zeros(0, dtype=np.int64),
        )


@dataclass(frozen=True)
class TangentVector:
    """Element of the tangent space of the rank-``r`` manifold at ``base``.

    Stored in the compact form ``U @ core @ V.T + row_update @ V.T +
    U @ col_update.T`` where ``(U, V)`` are the base factors, the columns of
    ``row_update`` are orthogonal to ``span(U)`` and the columns of
    ``col_update`` are orthogonal to ``span(V)``.  The densified vector has
    rank at most ``2r``.
    """

    base: FactoredMatrix
    core: np.ndarray
    row_update: np.ndarray
    col_update: np.ndarray

    def __post_init__(self):
        r = self.base.rank
        M, N = self.base.shape
        core = np.asarray(self.core, dtype=np.float64)
        row = np.asarray(self.row_update, dtype=np.float64)
        col = np.asarray(self.col_update, dtype=np.float64)
        object.__setattr__(self, "core", core)
        object.__setattr__(self, "row_update", row)
        object.__setattr__(self, "col_update", col)
        if core.shape != (r, r) or row.shape != (M, r) or col.shape != (N, r):
            raise ParameterError(
                f"tangent blocks have shapes {core.shape}, {row.shape}, {col.shape}; "
                f"expected ({r},{r}), ({M},{r}), ({N},{r})"
            )
        if r > 0:
            if np.linalg.norm(self.base.U.T @ row) > STRUCTURAL_TOL * max(1.0, np.linalg.norm(row)):
                raise ParameterError("row_update is not orthogonal to span(U)")
            if np.linalg.norm(self.base.V.T @ col) > STRUCTURAL_TOL * max(1.0, np.linalg.norm(col)):
                raise ParameterError("col_update is not orthogonal to span(V)")

    def densify(self):
        U, V = self.base.U, self.base.V
        return U @ self.core @ V.T + self.row_update @ V.T + U @ self.col_update.T

    def norm(self):
        # Blocks are mutually orthogonal in the Frobenius inner product.
        return float(
            np.sqrt(
                np.sum(self.core ** 2)
                + np.sum(self.row_update ** 2)
                + np.sum(self.col_update ** 2)
            )
        )

    def scaled(self, factor):
        return TangentVector(
            base=self.base,
            core=factor * self.core,
            row_update=factor * self.row_update,
            col_update=factor * self.col_update,
        )

    @classmethod
    def zero(cls, base):
        M, N = base.shape
        r = base.rank
        return cls(base, np.zeros((r, r)), np.zeros((M, r)), np.zeros((N, r)))


# ---------------------------------------------------------------------------
# elementary row operations


def row_norms(X):
    """Euclidean norm of every row of a dense matrix."""
    return np.linalg.norm(np.asarray(X, dtype=np.float64), axis=1)


def hard_threshold_rows(X, s):
    """Keep the ``s`` rows of largest Euclidean norm and zero the rest.

    Ties are broken in favor of the smallest row index, which makes the
    selection deterministic.  Returns ``(thresholded, support)`` where
    ``support`` lists the kept rows in increasing order.
    """
    X = np.asarray(X, dtype=np.float64)
    M = X.shape[0]
    if not 1 <= s <= M:
        raise ParameterError(f"row count s must satisfy 1 <= s <= {M}, got {s}")
    norms = np.linalg.norm(X, axis=1)
    order = np.argsort(-norms, kind="stable")  # stable sort keeps lowest index on ties
    support = np.sort(order[:s]).astype(np.int64)
    out = np.zeros_like(X)
    out[support] = X[support]
    return out, support


def soft_threshold_rows(X, mu):
    """Row-wise soft thresholding: shrink every row norm by ``mu``.

    A row ``y`` with ``||y|| > mu`` is scaled by ``(||y|| - mu)/||y||``;
    all other rows (including the boundary ``||y|| == mu``) become zero.
    This is the proximal map of ``mu * sum_i ||row_i||`` and never
    increases the rank.  Accepts a dense array or a :class:`FactoredMatrix`
    and returns the same kind.
    """
    if mu < 0:
        raise ParameterError(f"threshold mu must be nonnegative, got {mu}")
    if isinstance(X, FactoredMatrix):
        return _soft_threshold_factored(X, float(mu))
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    scale = np.where(norms > mu, (norms - mu) / safe, 0.0)
    return X * scale[:, None]


def _soft_threshold_factored(fm, mu):
    if fm.rank == 0:
        return fm
    norms = fm.row_norms()
    safe = np.where(norms > 0, norms, 1.0)
    scale = np.where(norms > mu, (norms - mu) / safe, 0.0)
    if mu == 0.0:
        return fm
    W = (fm.U * fm.sigma) * scale[:, None]
    dead = scale == 0.0
    W[dead] = 0.0
    P, sg, Qh = _svd(W)
    r = _effective_rank(sg, fm.rank, W.shape)
    U = P[:, :r].copy()
    U[dead] = 0.0
    V = fm.V @ Qh[:r].T
    U, V = _fix_signs(U, V)
    return FactoredMatrix(U, sg[:r], V, np.flatnonzero(~dead), validate=False)


# ---------------------------------------------------------------------------
# rank truncation and the two composite quasi-optimal projections


def _svd(X):
    try:
        return np.linalg.svd(X, full_matrices=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure is rare
        raise NumericalError(f"SVD failed for a {X.shape[0]}x{X.shape[1]} matrix: {exc}")


def _effective_rank(sg, limit, shape):
    """Number of singular values above the noise cutoff, capped at ``limit``."""
    if sg.size == 0 or sg[0] == 0.0:
        return 0
    cutoff = sg[0] * max(shape) * _EPS
    return int(min(limit, int(np.sum(sg > cutoff))))


def _fix_signs(U, V):
    # Convention: the first nonzero entry of every column of U is nonnegative,
    # so factored outputs are comparable across code paths.
    for j in range(U.shape[1]):
        nz = np.nonzero(U[:, j])[0]
        if nz.size and U[nz[0], j] < 0:
            U[:, j] = -U[:, j]
            V[:, j] = -V[:, j]
    return U, V


def truncate_rank(X, k):
    """Best rank-``k`` approximation of a dense matrix as a :class:`FactoredMatrix`.

    Singular values below ``sigma_max * max(M, N) * eps`` are treated as zero,
    so the reported rank can be smaller than ``k``.  The row support of the
    output equals the set of nonzero rows of ``X`` (rank truncation does not
    increase the row support).
    """
    X = np.asarray(X, dtype=np.float64)
    M, N = X.shape
    if not 1 <= k <= min(M, N):
        raise ParameterError(f"rank k must satisfy 1 <= k <= {min(M, N)}, got {k}")
    P, sg, Qh = _svd(X)
    r = _effective_rank(sg, k, (M, N))
    support = np.flatnonzero(np.linalg.norm(X, axis=1) > 0)
    U = P[:, :r].copy()
    mask = np.ones(M, dtype=bool)
    mask[support] = False
    U[mask] = 0.0  # zero input rows carry only rounding noise in U
    V = Qh[:r].T.copy()
    U, V = _fix_signs(U, V)
    return FactoredMatrix(U, sg[:r], V, support)


def _compress_rows(G, Vbasis, k, s):
    """Project ``G @ Vbasis.T`` onto at most ``s`` rows and rank at most ``k``.

    ``Vbasis`` must have orthonormal columns, so the row norms of the
    represented matrix are the row norms of ``G``.  Works entirely on the
    ``M x c`` coefficient matrix; never forms an ``M x N`` product.
    """
    M = G.shape[0]
    if not 1 <= s <= M:
        raise ParameterError(f"row count s must satisfy 1 <= s <= {M}, got {s}")
    norms = np.linalg.norm(G, axis=1)
    order = np.argsort(-norms, kind="stable")
    support = np.sort(order[:s]).astype(np.int64)
    Gs = G[support]
    P, sg, Qh = _svd(Gs)
    r = _effective_rank(sg, k, Gs.shape)
    U = np.zeros((M, r))
    U[support] = P[:, :r]
    V = Vbasis @ Qh[:r].T
    U, V = _fix_signs(U, V)
    return FactoredMatrix(U, sg[:r], V, support, validate=False)


def project_rows_then_rank(X, k, s):
    """Quasi-optimal projection: hard-threshold rows first, then truncate the rank.

    The result lies in the set of rank-``<=k`` matrices with at most ``s``
    nonzero rows, and its distance to ``X`` is at most ``sqrt(2)`` times the
    distance of the exact (combinatorial) projection.
    """
    X = np.asarray(X, dtype=np.float64)
    M, N = X.shape
    if not 1 <= k <= min(M, N):
        raise ParameterError(f"rank k must satisfy 1 <= k <= {min(M, N)}, got {k}")
    _, support = hard_threshold_rows(X, s)
    P, sg, Qh = _svd(X[support])
    r = _effective_rank(sg, k, X[support].shape)
    U = np.zeros((M, r))
    U[support] = P[:, :r]
    V = Qh[:r].T.copy()
    U, V = _fix_signs(U, V)
    return FactoredMatrix(U, sg[:r], V, support)


def project_rank_then_rows(X, k, s):
    """Quasi-optimal projection in the opposite order: rank truncation first.

    Accepts a dense matrix or a :class:`TangentVector`.  For tangent input the
    computation stays in the compact rank-``2r`` factorization (small SVDs and
    tall-matrix products only, cost ``O(M k s + k^2 s)``) and never densifies.
    """
    if isinstance(X, TangentVector):
        fmk = truncate_compact(*tangent_to_compact(X), k)
    else:
        fmk = truncate_rank(X, k)
    if fmk.rank == 0:
        M, N = fmk.shape
        zero = np.zeros((M, N))
        _, support = hard_threshold_rows(zero, s)
        return FactoredMatrix(np.zeros((M, 0)), np.zeros(0), np.zeros((N, 0)), support)
    return _compress_rows(fmk.U * fmk.sigma, fmk.V, k, s)


# ---------------------------------------------------------------------------
# tangent space calculus


def tangent_project(base, Z):
    """Orthogonal projection of a dense ``Z`` onto the tangent space at ``base``.

    Densified, the projection equals ``U U^T Z + Z V V^T - U U^T Z V V^T``.
    For a rank-deficient base the same formula with the rank-``r`` factors is
    used (the linear part of the tangent cone).
    """
    U, V = base.U, base.V
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape != base.shape:
        raise ParameterError(f"shape mismatch: Z is {Z.shape}, base is {base.shape}")
    ZV = Z @ V
    core = U.T @ ZV
    row = ZV - U @ core
    col = Z.T @ U - V @ core.T
    return TangentVector(base, core, row, col)


class Retraction:
    """Reusable compact factorizations of ``base - alpha * direction``.

    The factor stacks ``[U | row_update]`` and ``[V | col_update]`` do not
    depend on the step size, so their QR factorizations are computed once and
    every step size costs only a few small-matrix products.  Any combination
    ``U A V^T + b (row_update V^T + U col_update^T)`` equals
    ``stack_u @ [[A, b I], [b I, 0]] @ stack_v^T`` exactly; re-expressing it
    in the Householder bases (``K = R_u C R_v^T``) keeps the output factors
    orthonormal to machine precision even when the incoming base carries
    rounding drift, so long runs cannot accumulate it.
    """

    def __init__(self, base, direction):
        if direction.base is not base:
            raise ParameterError("direction must be a tangent vector at the given base")
        self.base = base
        self.direction = direction
        self.Uhat, self._Ru = np.linalg.qr(np.hstack([base.U, direction.row_update]))
        self.Vhat, self._Rv = np.linalg.qr(np.hstack([base.V, direction.col_update]))

    def _coefficients(self, core_block, off_scale):
        r = self.base.rank
        C = np.zeros((2 * r, 2 * r))
        C[:r, :r] = core_block
        idx = np.arange(r)
        C[idx, r + idx] = off_scale
        C[r + idx, idx] = off_scale
        return self._Ru @ C @ self._Rv.T

    def compact(self, alpha):
        """``(Uhat, K, Vhat)`` for ``base - alpha * direction`` at this step size."""
        core_block = np.diag(self.base.sigma) - alpha * self.direction.core
        return self.Uhat, self._coefficients(core_block, -alpha), self.Vhat

    def direction_compact(self):
        """``(Uhat, K, Vhat)`` for the direction itself."""
        return self.Uhat, self._coefficients(self.direction.core, 1.0), self.Vhat


def retract_compact(base, direction, alpha):
    """Compact factorization of ``base - alpha * direction``.

    Returns ``(Uhat, K, Vhat)`` with orthonormal ``Uhat`` (``M x c``) and
    ``Vhat`` (``N x c``), ``c <= 2r``, such that ``Uhat @ K @ Vhat.T``
    equals ``base.densify() - alpha * direction.densify()``.
    """
    return Retraction(base, direction).compact(alpha)


def tangent_to_compact(t):
    """Compact factorization ``(Uhat, K, Vhat)`` of a tangent vector itself."""
    return Retraction(t.base, t).direction_compact()


def truncate_compact(Uhat, K, Vhat, k):
    """Best rank-``k`` approximation of ``Uhat @ K @ Vhat.T`` without densifying."""
    P, sg, Qh = _svd(K)
    r = _effective_rank(sg, k, K.shape)
    U = Uhat @ P[:, :r]
    V = Vhat @ Qh[:r].T
    U, V = _fix_signs(U, V)
    support = np.flatnonzero(np.linalg.norm(U, axis=1) > 0)
    return FactoredMatrix(U, sg[:r], V, support, validate=False)


def project_rows_then_rank_compact(Uhat, K, Vhat, k, s):
    """Rows-then-rank projection of ``Uhat @ K @ Vhat.T`` in compact form.

    Row norms of the represented matrix are read off ``Uhat @ K``; the
    subsequent SVD touches only the selected ``s x c`` block.
    """
    UK = Uhat @ K
    return _compress_rows(UK, Vhat, k, s)
