"""Built-in property checks exercised by the ``verify`` CLI subcommand.

A condensed version of the test suite suitable for a quick smoke run on a
fresh build: each check prints one ok/FAIL line and the runner returns the
number of failures.
"""

from __future__ import annotations

import numpy as np

from . import core, oracle
from .core import ProblemDims
from .errors import SparseLowError
from .harness import make_instance
from .operators import make_fourier_blind_deconv, make_operator, unitary_dft

SQRT2 = float(np.sqrt(2.0))


def _check(name, fn, verbose):
    try:
        fn()
    except AssertionError as exc:
        if verbose:
            print(f"FAIL - {name}: {exc}")
        return 1
    except SparseLowError as exc:
        if verbose:
            print(f"FAIL - {name}: unexpected error {exc}")
        return 1
    if verbose:
        print(f"ok - {name}")
    return 0


def check_quasi_optimality(instances=200, seed=7):
    rng = np.random.default_rng(seed)
    for _ in range(instances):
        M, N = int(rng.integers(5, 11)), int(rng.integers(3, 7))
        s = int(rng.integers(2, min(4, M) + 1))
        k = int(rng.integers(1, min(s, N + 1)))
        X = rng.standard_normal((M, N))
        exact = oracle.exact_projection(X, k, s)
        best = np.linalg.norm(X - exact.densify())
        for proj in (core.project_rows_then_rank, core.project_rank_then_rows):
            dist = np.linalg.norm(X - proj(X, k, s).densify())
            assert dist <= SQRT2 * best + 1e-9, f"factor {dist / max(best, 1e-300):.6f}"


def check_prox(rows=200, seed=11):
    rng = np.random.default_rng(seed)
    for _ in range(rows):
        n = int(rng.integers(1, 6))
        y = rng.standard_normal(n)
        mu = float(rng.uniform(0, 1.5 * np.linalg.norm(y)))
        fast = core.soft_threshold_rows(y[None, :], mu)[0]
        slow = oracle.exact_prox_rowwise(y, mu, resolution=200_000)
        assert np.linalg.norm(fast - slow) <= 2e-5 * max(1.0, np.linalg.norm(y))
        if np.linalg.norm(fast) > 0:
            grad = mu * fast / np.linalg.norm(fast) + (fast - y)
            assert np.linalg.norm(grad) <= 1e-10


def check_adjoint_consistency(seed=3):
    dims = ProblemDims(M=12, N=7, k=2, s=4, m=30)
    rng = np.random.default_rng(seed)
    for backend in ("gaussian", "rankone", "fourier"):
        op = make_operator(backend, dims, seed)
        X = rng.standard_normal(dims.shape)
        W = rng.standard_normal(dims.shape)
        z = op.apply(W)  # stays in the measurement range so the adjoint is real
        lhs = float(np.vdot(z, op.apply(X)).real)
        rhs = float(np.sum(X * op.adjoint(z)))
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs)), backend


def check_fourier_realness(seed=5):
    dims = ProblemDims(M=10, N=6, k=1, s=3, m=24)
    op = make_fourier_blind_deconv(dims, seed)
    rng = np.random.default_rng(seed)
    X = np.outer(rng.standard_normal(dims.M), rng.standard_normal(dims.N))
    G = op.adjoint_complex(op.apply(X))
    assert np.linalg.norm(G.imag) <= 1e-10 * np.linalg.norm(G)
    m = dims.m
    F = unitary_dft(m)
    rng2 = np.random.default_rng(seed + 1)
    for _ in range(50):
        p, a, b = rng2.integers(0, m, size=3)
        lhs = F[p, a] * F[p, b]
        rhs = F[p, (a + b) % m] / np.sqrt(m)
        assert abs(lhs - rhs) <= 1e-12


def check_tangent_projector(seed=13):
    rng = np.random.default_rng(seed)
    base = core.truncate_rank(rng.standard_normal((9, 6)), 2)
    Z = rng.standard_normal((9, 6))
    t = core.tangent_project(base, Z)
    twice = core.tangent_project(base, t.densify())
    assert np.linalg.norm(twice.densify() - t.densify()) <= 1e-10
    # Pythagoras
    pn, rn = np.linalg.norm(t.densify()) ** 2, np.linalg.norm(Z - t.densify()) ** 2
    assert abs(pn + rn - np.linalg.norm(Z) ** 2) <= 1e-10 * np.linalg.norm(Z) ** 2


def check_row_threshold_best_approximation(seed=17):
    import itertools

    rng = np.random.default_rng(seed)
    X = rng.standard_normal((6, 4))
    s = 2
    thresh, _ = core.hard_threshold_rows(X, s)
    best = np.linalg.norm(X - thresh)
    for S in itertools.combinations(range(6), s):
        masked = np.zeros_like(X)
        masked[list(S)] = X[list(S)]
        assert best <= np.linalg.norm(X - masked) + 1e-12


def check_solver_smoke(seed=23):
    from .harness import SolverSetup, run_single
    from .solvers import StepRule

    setup = SolverSetup("riht", "riht", StepRule.armijo(), max_iter=300)
    record, instance, _ = run_single(
        "gaussian", 30, 8, 2, 4, 200,
        operator_seed=seed, instance_seed=seed + 1, setup=setup, error_tol=1e-6,
    )
    assert record.trace[-1].rel_error <= 1e-6, record.status


CHECKS = (
    ("quasi-optimality of the composite projections", check_quasi_optimality),
    ("row-wise prox closed form", check_prox),
    ("adjoint consistency of all backends", check_adjoint_consistency),
    ("Fourier realness and DFT row identity", check_fourier_realness),
    ("tangent projector identities", check_tangent_projector),
    ("row thresholding best approximation", check_row_threshold_best_approximation),
    ("end-to-end recovery smoke run", check_solver_smoke),
)


def run_all(verbose=False):
    """Run every property check; returns the number of failures."""
    failures = 0
    for name, fn in CHECKS:
        failures += _check(name, fn, verbose)
    if verbose:
        total = len(CHECKS)
        print(f"{total - failures}/{total} property checks passed")
    return failures
