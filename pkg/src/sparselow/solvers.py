"""The three iterative recovery algorithms and their step-size machinery.

* ``iht``: gradient step on the ambient space followed by the rows-then-rank
  projection.
* ``riht``: the gradient is first projected onto the tangent space of the
  fixed-rank manifold at the current iterate; with rank-one structured
  measurements the whole update runs in compact factored form.
* ``rpg``: Riemannian proximal gradient for unknown row sparsity; rank
  truncation followed by row-wise soft thresholding with a geometrically
  decaying threshold.

A solver run is single threaded and fully deterministic; independent runs
share no mutable state.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import core
from .core import FactoredMatrix, ProblemDims, TangentVector
from .errors import NumericalError, ParameterError

ALGORITHMS = ("iht", "riht", "rpg")

CONVERGED = "converged"
MAX_ITER = "maxIter"
NUMERICAL_ERROR = "numericalError"


@dataclass(frozen=True)
class StepRule:
    """Step-size selection: a constant step or Armijo backtracking.

    Backtracking tries ``alpha = beta**p`` for ``p = 0..p_max`` and accepts
    the first step whose projected trial point decreases the objective by at
    least ``gamma * alpha * ||direction||^2``.  If no step qualifies the
    solver falls back to ``alpha = 1`` and flags the iteration.
    """

    kind: str = "armijo"
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 1.0e-4
    p_max: int = 50

    def __post_init__(self):
        if self.kind not in ("constant", "armijo"):
            raise ParameterError(f"unknown step rule kind {self.kind!r}")
        if self.kind == "constant" and not self.alpha > 0:
            raise ParameterError(f"constant step size must be positive, got {self.alpha}")
        if not 0 < self.beta < 1:
            raise ParameterError(f"beta must lie in (0, 1), got {self.beta}")
        if not self.gamma > 0:
            raise ParameterError(f"gamma must be positive, got {self.gamma}")
        if self.p_max < 1:
            raise ParameterError(f"p_max must be >= 1, got {self.p_max}")

    @classmethod
    def constant(cls, alpha=1.0):
        return cls(kind="constant", alpha=alpha)

    @classmethod
    def armijo(cls, beta=0.5, gamma=1.0e-4, p_max=50):
        return cls(kind="armijo", beta=beta, gamma=gamma, p_max=p_max)


@dataclass(frozen=True)
class SolverConfig:
    algorithm: str
    dims: ProblemDims
    step: StepRule = field(default_factory=StepRule)
    max_iter: int = 5000
    residual_tol: float = 1.0e-6
    error_tol: float | None = None
    rpg_decay: float = 0.99
    rpg_initial_sparsity: int | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ParameterError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.max_iter < 1:
            raise ParameterError("max_iter must be >= 1")
        if self.residual_tol < 0:
            raise ParameterError("residual_tol must be nonnegative")
        if not 0 < self.rpg_decay < 1:
            raise ParameterError(f"rpg_decay must lie in (0, 1), got {self.rpg_decay}")
        if self.rpg_initial_sparsity is not None and not 1 <= self.rpg_initial_sparsity <= self.dims.M:
            raise ParameterError("rpg_initial_sparsity must lie in [1, M]")

    def resolved_initial_sparsity(self):
        """Start sparsity for rpg: the largest s whose model has <= m degrees of freedom."""
        if self.rpg_initial_sparsity is not None:
            return self.rpg_initial_sparsity
        d = self.dims
        s0 = (d.m + d.k * (d.k - d.N)) // d.k
        return int(min(d.M, max(1, s0)))


@dataclass
class IterationRecord:
    index: int
    objective: float
    residual: float
    step: float | None
    fallback: bool
    support: tuple
    rank: int
    rel_error: float | None = None
    dir_norm_sq: float | None = None
    mu: float | None = None
    mu_base: float | None = None
    rank_deficient: bool = False


@dataclass
class RunRecord:
    """Full trace of one solver run plus the final iterate and exit status."""

    algorithm: str
    trace: list
    final: FactoredMatrix
    status: str
    message: str = ""

    @property
    def iterations(self):
        return self.trace[-1].index if self.trace else 0

    def iterations_to(self, tol):
        """First iteration index whose relative error is <= tol, or None."""
        for rec in self.trace:
            if rec.rel_error is not None and rec.rel_error <= tol:
                return rec.index
        return None


def objective(op, X, y):
    """Half squared residual norm ``0.5 * ||A(X) - y||^2``."""
    r = op.apply(X) - np.asarray(y)
    return 0.5 * float(np.vdot(r, r).real)


def armijo_search(f_current, dir_norm_sq, trial, beta=0.5, gamma=1.0e-4, p_max=50):
    """Backtracking line search with the variant's projection inside the condition.

    ``trial(alpha)`` must return ``(objective_value, payload)`` for the
    projected trial point at step ``alpha``; the payload of the accepted step
    is handed back so callers can reuse it.  Accepts ``alpha = beta**p`` for
    the smallest ``p`` with ``f_current - f_trial >= gamma * alpha *
    dir_norm_sq``; when no ``p <= p_max`` qualifies, returns the regular step
    ``alpha = 1`` with ``fallback=True``.
    """
    first_payload = None
    for p in range(p_max + 1):
        alpha = beta ** p
        fval, payload = trial(alpha)
        if p == 0:
            first_payload = (fval, payload)
        if f_current - fval >= gamma * alpha * dir_norm_sq:
            return alpha, False, payload
    return 1.0, True, first_payload[1]


def _choose_step(rule, f_current, dir_norm_sq, trial):
    if rule.kind == "constant":
        _, payload = trial(rule.alpha)
        return rule.alpha, False, payload
    return armijo_search(f_current, dir_norm_sq, trial, rule.beta, rule.gamma, rule.p_max)


class _Tracker:
    """Evaluates and records per-iterate metrics against optional ground truth."""

    def __init__(self, op, y, truth):
        self.op = op
        self.y = np.asarray(y)
        self.y_norm = float(np.linalg.norm(self.y))
        self.truth = truth.densify() if truth is not None else None
        self.truth_norm = float(np.linalg.norm(self.truth)) if truth is not None else None
        self.trace = []
        self.current = None

    def measure(self, X):
        rvec = self.op.apply(X) - self.y
        resid = float(np.linalg.norm(rvec))
        rel = None
        if self.truth is not None:
            diff = X.densify() - self.truth
            rel = float(np.linalg.norm(diff) / max(self.truth_norm, 1e-300))
        return rvec, 0.5 * resid * resid, resid, rel

    def record(self, index, X, f, resid, rel, **extra):
        self.current = X
        self.trace.append(
            IterationRecord(
                index=index,
                objective=f,
                residual=resid,
                step=extra.get("step"),
                fallback=extra.get("fallback", False),
                support=tuple(int(i) for i in X.support),
                rank=X.rank,
                rel_error=rel,
                dir_norm_sq=extra.get("dir_norm_sq"),
                mu=extra.get("mu"),
                mu_base=extra.get("mu_base"),
                rank_deficient=extra.get("rank_deficient", False),
            )
        )

    def converged(self, resid, rel, config):
        if resid <= config.residual_tol * self.y_norm:
            return True
        return rel is not None and config.error_tol is not None and rel <= config.error_tol


def solve(op, y, config, truth=None, start=None):
    """Run the configured algorithm on measurements ``y`` and return its RunRecord.

    ``truth`` (a FactoredMatrix) enables relative-error tracking and the
    optional error-based stopping rule.  ``start`` overrides the built-in
    starting point, which is the zero matrix followed by each algorithm's own
    first step.
    """
    runner = {"iht": _run_iht, "riht": _run_riht, "rpg": _run_rpg}[config.algorithm]
    tracker = _Tracker(op, y, truth)
    try:
        final, status = runner(op, tracker, config, start)
        message = ""
    except (NumericalError, np.linalg.LinAlgError) as exc:
        # keep the last recorded iterate so callers can inspect the failure
        final = tracker.current if tracker.current is not None else FactoredMatrix.zero(
            config.dims.M, config.dims.N
        )
        status = NUMERICAL_ERROR
        message = str(exc)
    return RunRecord(config.algorithm, tracker.trace, final, status, message)


def _run_iht(op, tracker, config, start):
    """Gradient step plus rows-then-rank projection, repeated."""
    d = config.dims
    X = start if start is not None else FactoredMatrix.zero(d.M, d.N)
    rvec, f, resid, rel = tracker.measure(X)
    tracker.record(0, X, f, resid, rel)
    if tracker.converged(resid, rel, config):
        return X, CONVERGED
    for ell in range(1, config.max_iter + 1):
        Xd = X.densify()
        G = op.adjoint(rvec)
        dir_sq = float(np.sum(G * G))

        def trial(alpha):
            # The backtracking condition evaluates the rank-then-rows
            # composition of the trial point; the iterate update below uses
            # rows-then-rank.  Both land in the constraint set.
            cand = core.project_rank_then_rows(Xd - alpha * G, d.k, d.s)
            return objective(op, cand, tracker.y), None

        alpha, fallback, _ = _choose_step(config.step, f, dir_sq, trial)
        X = core.project_rows_then_rank(Xd - alpha * G, d.k, d.s)
        rvec, f, resid, rel = tracker.measure(X)
        tracker.record(ell, X, f, resid, rel, step=alpha, fallback=fallback, dir_norm_sq=dir_sq)
        if tracker.converged(resid, rel, config):
            return X, CONVERGED
    return X, MAX_ITER


def _first_step(op, tracker, config, projector):
    """Shared start-up step from the zero matrix: ``projector(alpha0 * A*(y))``.

    ``alpha0`` comes from the step rule with the gradient at zero, whose
    norm is ``||A*(y)||``.  This is the one place the structured backends
    form a dense ``M x N`` adjoint; every later step stays factored.
    """
    W = op.adjoint(tracker.y)
    dir_sq = float(np.sum(W * W))

    def trial(alpha):
        cand = projector(alpha * W)
        return objective(op, cand, tracker.y), cand

    alpha0, fallback, cand = _choose_step(config.step, 0.5 * tracker.y_norm ** 2, dir_sq, trial)
    return W, alpha0, fallback, dir_sq, cand


def _run_riht(op, tracker, config, start):
    """Riemannian variant: tangent-projected gradient, compact-form update."""
    d = config.dims
    if start is not None:
        X = start
        rvec, f, resid, rel = tracker.measure(X)
        tracker.record(0, X, f, resid, rel)
        if tracker.converged(resid, rel, config):
            return X, CONVERGED
        first_loop = 1
    else:
        X = FactoredMatrix.zero(d.M, d.N)
        rvec, f, resid, rel = tracker.measure(X)
        tracker.record(0, X, f, resid, rel)
        if tracker.converged(resid, rel, config):
            return X, CONVERGED
        _, alpha0, fallback, dir_sq, X = _first_step(
            op, tracker, config, lambda W: core.project_rows_then_rank(W, d.k, d.s)
        )
        rvec, f, resid, rel = tracker.measure(X)
        tracker.record(1, X, f, resid, rel, step=alpha0, fallback=fallback, dir_norm_sq=dir_sq)
        if tracker.converged(resid, rel, config):
            return X, CONVERGED
        first_loop = 2
    for ell in range(first_loop, config.max_iter + 1):
        if X.rank == 0:
            # The tangent space degenerates at the zero matrix; restart with
            # the dense start-up step (in practice the rank never drops to 0).
            _, alpha, fallback, dir_sq, X = _first_step(
                op, tracker, config, lambda W: core.project_rows_then_rank(W, d.k, d.s)
            )
            rank_def = True
        else:
            t = op.projected_adjoint(X, rvec)
            dir_sq = t.norm() ** 2
            rank_def = X.rank < d.k
            ret = core.Retraction(X, t)  # step-size independent bases, QR once

            def trial(alpha):
                Uhat, K, Vhat = ret.compact(alpha)
                cand = core.project_rows_then_rank_compact(Uhat, K, Vhat, d.k, d.s)
                return objective(op, cand, tracker.y), cand

            alpha, fallback, X = _choose_step(config.step, f, dir_sq, trial)
        rvec, f, resid, rel = tracker.measure(X)
        tracker.record(
            ell, X, f, resid, rel,
            step=alpha, fallback=fallback, dir_norm_sq=dir_sq, rank_deficient=rank_def,
        )
        if tracker.converged(resid, rel, config):
            return X, CONVERGED
    return X, MAX_ITER


# Number of consecutive iterations the recovered support must stay fixed
# before an rpg run may report convergence (soft thresholding can hover).
RPG_SUPPORT_PATIENCE = 25


def _kth_largest_row_norm(fm, k):
    norms = fm.row_norms()
    if norms.size < k:
        return 0.0
    return float(np.sort(norms)[::-1][k - 1])


def _run_rpg(op, tracker, config, start):
    """Proximal gradient on the fixed-rank manifold; row sparsity is unknown.

    The soft threshold is recomputed every iteration as ``tau**ell`` times
    the k-th largest row norm of the rank-truncated trial point, and the
    line search condition uses the rank truncation only.
    """
    d = config.dims
    tau = config.rpg_decay

    def rpg_converged(resid, rel, stable):
        if not tracker.converged(resid, rel, config):
            return False
        # support must have stabilized, except for an exactly solved system
        return stable >= RPG_SUPPORT_PATIENCE or resid == 0.0

    if start is not None:
        X = start
        rvec, f, resid, rel = tracker.measure(X)
        tracker.record(0, X, f, resid, rel)
    else:
        X = FactoredMatrix.zero(d.M, d.N)
        rvec, f, resid, rel = tracker.measure(X)
        tracker.record(0, X, f, resid, rel)
        if rpg_converged(resid, rel, 0):
            return X, CONVERGED
        s0 = config.resolved_initial_sparsity()
        W = op.adjoint(tracker.y)
        dir_sq = float(np.sum(W * W))

        def init_trial(alpha):
            # line search on the gradient step only (rank truncation, no rows)
            cand = core.truncate_rank(alpha * W, d.k)
            return objective(op, cand, tracker.y), cand

        alpha0, fallback, _ = _choose_step(
            config.step, 0.5 * tracker.y_norm ** 2, dir_sq, init_trial
        )
        X = core.project_rows_then_rank(alpha0 * W, d.k, s0)
        rvec, f, resid, rel = tracker.measure(X)
        tracker.record(1, X, f, resid, rel, step=alpha0, fallback=fallback, dir_norm_sq=dir_sq)
    stable = 0
    prev_support = tuple(int(i) for i in X.support)
    if rpg_converged(resid, rel, stable):
        return X, CONVERGED
    index = tracker.trace[-1].index
    ell = 0  # pass counter driving the threshold decay tau**ell
    while index < config.max_iter:
        if X.rank == 0:
            return X, MAX_ITER  # nothing left to iterate on
        ell += 1
        t = op.projected_adjoint(X, rvec)
        dir_sq = t.norm() ** 2
        rank_def = X.rank < d.k
        ret = core.Retraction(X, t)
        cache = op.compact_apply_cache(ret.Uhat, ret.Vhat)

        def trial(alpha):
            # only the objective of the rank-truncated trial point is needed
            # during the search, which takes small factor products only
            _, K, _ = ret.compact(alpha)
            P, sg, Qh = core._svd(K)
            r = core._effective_rank(sg, d.k, K.shape)
            resid = cache(P[:, :r] * sg[:r], Qh[:r].T) - tracker.y
            return 0.5 * float(np.vdot(resid, resid).real), K

        alpha, fallback, K_accepted = _choose_step(config.step, f, dir_sq, trial)
        trial_point = core.truncate_compact(ret.Uhat, K_accepted, ret.Vhat, d.k)
        mu_base = _kth_largest_row_norm(trial_point, d.k)
        mu = (tau ** ell) * mu_base
        X = core.soft_threshold_rows(trial_point, mu)
        rvec, f, resid, rel = tracker.measure(X)
        support = tuple(int(i) for i in X.support)
        stable = stable + 1 if support == prev_support else 0
        prev_support = support
        index += 1
        tracker.record(
            index, X, f, resid, rel,
            step=alpha, fallback=fallback, dir_norm_sq=dir_sq,
            mu=mu, mu_base=mu_base, rank_deficient=rank_def,
        )
        if rpg_converged(resid, rel, stable):
            return X, CONVERGED
    return X, MAX_ITER


# ---------------------------------------------------------------------------
# convergence diagnostics


def restricted_tangent_project(base, Z):
    """Projection onto the tangent space intersected with the base's row support.

    The support selector and the tangent projector commute when ``U`` is
    supported inside the base support, so zeroing the off-support rows of the
    row-update block realizes the composite projector.
    """
    t = core.tangent_project(base, Z)
    mask = np.ones(base.shape[0], dtype=bool)
    mask[base.support] = False
    row = t.row_update.copy()
    row[mask] = 0.0
    return TangentVector(base, t.core, row, t.col_update)


def estimate_restricted_spectral_norm(op, base, iterations, seed=0):
    """Power-iteration estimate of the restricted gradient-map contraction.

    Estimates the spectral norm of ``P (I - A* A) P`` where ``P`` projects
    onto the tangent space at ``base`` restricted to the base's row support.
    The estimate is monotone nondecreasing in ``iterations`` and approaches
    the true norm from below; it bounds the asymptotic per-step error decay
    of the Riemannian iteration near the solution.
    """
    M, N = base.shape
    rng = np.random.default_rng(seed)
    t = restricted_tangent_project(base, rng.standard_normal((M, N)))
    norm = t.norm()
    if norm == 0.0:
        return 0.0
    t = t.scaled(1.0 / norm)
    estimate = 0.0
    for _ in range(iterations):
        Z = t.densify()
        W = Z - op.adjoint(op.apply(Z))
        nxt = restricted_tangent_project(base, W)
        norm = nxt.norm()
        if norm == 0.0:
            return 0.0
        estimate = norm  # ||L t|| with ||t|| = 1
        t = nxt.scaled(1.0 / norm)
    return float(estimate)
