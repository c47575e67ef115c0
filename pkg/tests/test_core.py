import itertools

import numpy as np
import pytest

from sparselow import core
from sparselow.core import (
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
from sparselow.errors import ParameterError
from sparselow.oracle import exact_projection


def random_factored(rng, M, N, k, s=None):
    dense = rng.standard_normal((M, N))
    if s is not None:
        dense, _ = hard_threshold_rows(dense, s)
    return truncate_rank(dense, k)


class TestProblemDims:
    def test_valid(self):
        d = ProblemDims(M=10, N=6, k=2, s=4, m=30)
        assert d.shape == (10, 6)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(M=10, N=6, k=4, s=4, m=30),   # k == s
            dict(M=10, N=6, k=5, s=3, m=30),   # k > s
            dict(M=10, N=6, k=0, s=4, m=30),
            dict(M=10, N=6, k=2, s=11, m=30),  # s > M
            dict(M=10, N=6, k=7, s=8, m=30),   # k > N
            dict(M=10, N=6, k=2, s=4, m=0),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ParameterError):
            ProblemDims(**kwargs)

    def test_error_message_cites_sparsity_requirement(self):
        with pytest.raises(ParameterError, match="k < s"):
            ProblemDims(M=10, N=6, k=5, s=3, m=30)


class TestRowNorms:
    def test_identity(self):
        assert np.allclose(row_norms(np.eye(2)), [1.0, 1.0])

    def test_zero(self):
        assert np.all(row_norms(np.zeros((3, 4))) == 0)

    def test_pythagorean_row(self):
        got = row_norms(np.array([[3.0, 4.0], [0.0, 0.0]]))
        assert np.allclose(got, [5.0, 0.0])


class TestHardThresholdRows:
    def test_keeps_largest_norm_rows(self):
        X = np.diag([5.0, 1.0, 3.0])
        out, support = hard_threshold_rows(X, 2)
        assert list(support) == [0, 2]
        assert np.allclose(out, np.diag([5.0, 0.0, 3.0]))

    def test_fixed_point_when_already_sparse(self):
        X = np.zeros((5, 3))
        X[1] = [1.0, 2.0, 0.5]
        X[4] = [0.0, 1.0, 1.0]
        out, support = hard_threshold_rows(X, 2)
        assert np.array_equal(out, X)
        assert list(support) == [1, 4]

    def test_tie_keeps_lowest_indices(self):
        X = np.ones((3, 2))
        out, support = hard_threshold_rows(X, 2)
        assert list(support) == [0, 1]
        # tie-broken output is still a best approximation among all supports
        best = np.linalg.norm(X - out)
        for S in itertools.combinations(range(3), 2):
            masked = np.zeros_like(X)
            masked[list(S)] = X[list(S)]
            assert best <= np.linalg.norm(X - masked) + 1e-12

    def test_best_approximation_exhaustive(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            M = int(rng.integers(2, 9))
            N = int(rng.integers(1, 5))
            s = int(rng.integers(1, M + 1))
            X = rng.standard_normal((M, N))
            out, _ = hard_threshold_rows(X, s)
            best = np.linalg.norm(X - out)
            for S in itertools.combinations(range(M), s):
                masked = np.zeros_like(X)
                masked[list(S)] = X[list(S)]
                assert best <= np.linalg.norm(X - masked) + 1e-12

    def test_rejects_bad_s(self):
        with pytest.raises(ParameterError):
            hard_threshold_rows(np.eye(3), 0)
        with pytest.raises(ParameterError):
            hard_threshold_rows(np.eye(3), 4)


class TestTruncateRank:
    def test_diagonal(self):
        fm = truncate_rank(np.diag([3.0, 2.0, 1.0]), 2)
        assert np.allclose(fm.densify(), np.diag([3.0, 2.0, 0.0]))
        assert fm.rank == 2

    def test_rank_deficient_input_reports_true_rank(self):
        rng = np.random.default_rng(1)
        X = np.outer(rng.standard_normal(6), rng.standard_normal(4))
        fm = truncate_rank(X, 2)
        assert fm.rank == 1
        assert np.allclose(fm.densify(), X, atol=1e-12)

    def test_residual_equals_tail_singular_values(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((6, 4))
        fm = truncate_rank(X, 2)
        # independent route: full SVD tail energy
        svals = np.linalg.svd(X, compute_uv=False)
        residual = np.linalg.norm(X - fm.densify()) ** 2
        assert abs(residual - np.sum(svals[2:] ** 2)) <= 1e-10

    def test_support_is_nonzero_rows(self):
        X = np.zeros((5, 3))
        X[1] = [1.0, 0.0, 2.0]
        X[3] = [0.5, 0.5, 0.5]
        fm = truncate_rank(X, 2)
        assert list(fm.support) == [1, 3]
        assert np.all(fm.U[[0, 2, 4]] == 0)

    def test_sign_convention(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((6, 4))
        fm = truncate_rank(X, 3)
        for j in range(fm.rank):
            first = fm.U[np.nonzero(fm.U[:, j])[0][0], j]
            assert first >= 0


class TestFactoredMatrix:
    def test_densify_is_exact_product(self):
        rng = np.random.default_rng(4)
        fm = random_factored(rng, 7, 5, 2)
        assert np.array_equal(fm.densify(), (fm.U * fm.sigma) @ fm.V.T)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ParameterError):
            FactoredMatrix(
                U=np.ones((3, 1)), sigma=np.ones(1), V=np.ones((2, 1)) / np.sqrt(2),
                support=[0, 1, 2],
            )

    def test_rejects_row_outside_support(self):
        U = np.zeros((3, 1))
        U[0, 0] = 1.0
        with pytest.raises(ParameterError):
            FactoredMatrix(U=U, sigma=np.ones(1), V=np.eye(2, 1), support=[1])

    def test_zero(self):
        z = FactoredMatrix.zero(4, 3)
        assert z.rank == 0
        assert np.all(z.densify() == 0)
        assert z.frobenius_norm() == 0.0

    def test_row_norms_match_dense(self):
        rng = np.random.default_rng(5)
        fm = random_factored(rng, 7, 5, 3)
        assert np.allclose(fm.row_norms(), row_norms(fm.densify()))


class TestCompositeProjections:
    def quasi_factor(self, X, k, s, proj):
        exact = exact_projection(X, k, s)
        d_exact = np.linalg.norm(X - exact.densify())
        d_quasi = np.linalg.norm(X - proj(X, k, s).densify())
        return d_quasi / max(d_exact, 1e-300)

    def test_fixed_point_on_constraint_set(self):
        rng = np.random.default_rng(6)
        fm = random_factored(rng, 8, 5, 2, s=3)
        X = fm.densify()
        for proj in (project_rows_then_rank, project_rank_then_rows):
            assert np.allclose(proj(X, 2, 3).densify(), X, atol=1e-10)

    def test_row_sparse_input_reduces_to_rank_truncation(self):
        rng = np.random.default_rng(7)
        X = np.zeros((8, 5))
        X[[1, 4]] = rng.standard_normal((2, 5))
        got = project_rows_then_rank(X, 1, 2).densify()
        want = truncate_rank(X, 1).densify()
        assert np.allclose(got, want, atol=1e-12)

    def test_quasi_optimality_factor(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            X = rng.standard_normal((8, 4))
            for proj in (project_rows_then_rank, project_rank_then_rows):
                assert self.quasi_factor(X, 1, 2, proj) <= np.sqrt(2) + 1e-9

    def test_output_always_feasible(self):
        rng = np.random.default_rng(9)
        for _ in range(25):
            X = rng.standard_normal((9, 5))
            for proj in (project_rows_then_rank, project_rank_then_rows):
                fm = proj(X, 2, 3)
                assert fm.rank <= 2
                assert len(fm.support) <= 3

    def test_tangent_input_matches_dense_path(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            base = random_factored(rng, 9, 6, 2)
            t = tangent_project(base, rng.standard_normal((9, 6)))
            fast = project_rank_then_rows(t, 2, 3).densify()
            slow = project_rank_then_rows(t.densify(), 2, 3).densify()
            assert np.linalg.norm(fast - slow) <= 1e-10

    def test_zero_matrix(self):
        fm = project_rows_then_rank(np.zeros((5, 3)), 1, 2)
        assert fm.rank == 0
        assert np.all(fm.densify() == 0)


class TestSoftThresholdRows:
    def test_zero_threshold_is_identity(self):
        rng = np.random.default_rng(11)
        X = rng.standard_normal((5, 3))
        assert np.array_equal(soft_threshold_rows(X, 0.0), X)

    def test_boundary_row_is_zeroed(self):
        X = np.array([[3.0, 4.0]])
        assert np.all(soft_threshold_rows(X, 5.0) == 0)

    def test_shrinks_row_toward_zero(self):
        X = np.array([[3.0, 4.0]])
        assert np.allclose(soft_threshold_rows(X, 1.0), [[2.4, 3.2]])

    def test_first_order_condition_on_survivors(self):
        rng = np.random.default_rng(12)
        Y = rng.standard_normal((20, 4))
        mu = 0.8
        X = soft_threshold_rows(Y, mu)
        for i in range(20):
            x = X[i]
            nx = np.linalg.norm(x)
            if nx > 0:
                grad = mu * x / nx + (x - Y[i])
                assert np.linalg.norm(grad) <= 1e-10

    def test_factored_matches_dense(self):
        rng = np.random.default_rng(13)
        for mu in (0.0, 0.3, 2.0):
            fm = random_factored(rng, 8, 5, 2)
            got = soft_threshold_rows(fm, mu)
            want = soft_threshold_rows(fm.densify(), mu)
            assert np.linalg.norm(got.densify() - want) <= 1e-10
            assert got.rank <= fm.rank

    def test_negative_mu_rejected(self):
        with pytest.raises(ParameterError):
            soft_threshold_rows(np.eye(2), -0.1)


class TestTangentProject:
    def dense_formula(self, base, Z):
        U, V = base.U, base.V
        return U @ U.T @ Z + Z @ V @ V.T - U @ U.T @ Z @ V @ V.T

    def test_base_point_is_fixed(self):
        rng = np.random.default_rng(14)
        base = random_factored(rng, 8, 5, 2)
        t = tangent_project(base, base.densify())
        assert np.linalg.norm(t.densify() - base.densify()) <= 1e-10

    def test_orthogonal_complement_maps_to_zero(self):
        rng = np.random.default_rng(15)
        base = random_factored(rng, 8, 5, 2)
        W = rng.standard_normal((8, 5))
        P_u = np.eye(8) - base.U @ base.U.T
        P_v = np.eye(5) - base.V @ base.V.T
        t = tangent_project(base, P_u @ W @ P_v)
        assert t.norm() <= 1e-10

    def test_matches_dense_formula(self):
        rng = np.random.default_rng(16)
        for _ in range(20):
            base = random_factored(rng, 9, 6, 3)
            Z = rng.standard_normal((9, 6))
            t = tangent_project(base, Z)
            assert np.linalg.norm(t.densify() - self.dense_formula(base, Z)) <= 1e-10

    def test_pythagoras(self):
        rng = np.random.default_rng(17)
        base = random_factored(rng, 9, 6, 2)
        Z = rng.standard_normal((9, 6))
        P = tangent_project(base, Z).densify()
        lhs = np.linalg.norm(P) ** 2 + np.linalg.norm(Z - P) ** 2
        assert abs(lhs - np.linalg.norm(Z) ** 2) <= 1e-10 * np.linalg.norm(Z) ** 2

    def test_idempotent_and_self_adjoint(self):
        rng = np.random.default_rng(18)
        base = random_factored(rng, 9, 6, 2)
        Z1 = rng.standard_normal((9, 6))
        Z2 = rng.standard_normal((9, 6))
        P1 = tangent_project(base, Z1).densify()
        assert np.linalg.norm(tangent_project(base, P1).densify() - P1) <= 1e-10
        P2 = tangent_project(base, Z2).densify()
        assert abs(np.sum(P1 * Z2) - np.sum(Z1 * P2)) <= 1e-10

    def test_rank_bound(self):
        rng = np.random.default_rng(19)
        base = random_factored(rng, 10, 7, 2)
        t = tangent_project(base, rng.standard_normal((10, 7)))
        svals = np.linalg.svd(t.densify(), compute_uv=False)
        assert np.sum(svals > 1e-10) <= 2 * base.rank

    def test_norm_matches_densified(self):
        rng = np.random.default_rng(20)
        base = random_factored(rng, 10, 7, 3)
        t = tangent_project(base, rng.standard_normal((10, 7)))
        assert abs(t.norm() - np.linalg.norm(t.densify())) <= 1e-10

    def test_commutes_with_support_selector(self):
        # for a base supported on S, selecting rows S and projecting commute
        rng = np.random.default_rng(21)
        base = random_factored(rng, 10, 6, 2, s=4)
        S = base.support
        for _ in range(10):
            Z = rng.standard_normal((10, 6))
            DZ = np.zeros_like(Z)
            DZ[S] = Z[S]
            first = tangent_project(base, DZ).densify()
            PZ = tangent_project(base, Z).densify()
            second = np.zeros_like(PZ)
            second[S] = PZ[S]
            assert np.linalg.norm(first - second) <= 1e-10

    def test_rank_deficient_base_uses_rank_r_formula(self):
        rng = np.random.default_rng(22)
        base = random_factored(rng, 8, 5, 1)  # r = 1 < k = 2 downstream
        Z = rng.standard_normal((8, 5))
        t = tangent_project(base, Z)
        assert np.linalg.norm(t.densify() - self.dense_formula(base, Z)) <= 1e-10

    def test_tangent_vector_validation(self):
        rng = np.random.default_rng(23)
        base = random_factored(rng, 8, 5, 2)
        bad_row = rng.standard_normal((8, 2))  # not orthogonal to span(U)
        with pytest.raises(ParameterError):
            TangentVector(base, np.zeros((2, 2)), bad_row + base.U, np.zeros((5, 2)))


class TestRetractCompact:
    def test_zero_step_reproduces_base(self):
        rng = np.random.default_rng(24)
        base = random_factored(rng, 9, 6, 2)
        t = tangent_project(base, rng.standard_normal((9, 6)))
        Uhat, K, Vhat = retract_compact(base, t, 0.0)
        assert np.linalg.norm(Uhat @ K @ Vhat.T - base.densify()) <= 1e-10

    def test_full_step_along_base_reaches_zero(self):
        rng = np.random.default_rng(25)
        base = random_factored(rng, 9, 6, 2)
        t = tangent_project(base, base.densify())
        Uhat, K, Vhat = retract_compact(base, t, 1.0)
        assert np.linalg.norm(Uhat @ K @ Vhat.T) <= 1e-10

    def test_matches_dense_arithmetic(self):
        rng = np.random.default_rng(26)
        for _ in range(20):
            base = random_factored(rng, 9, 6, 2)
            t = tangent_project(base, rng.standard_normal((9, 6)))
            alpha = float(rng.uniform(-2, 2))
            Uhat, K, Vhat = retract_compact(base, t, alpha)
            want = base.densify() - alpha * t.densify()
            assert np.linalg.norm(Uhat @ K @ Vhat.T - want) <= 1e-10

    def test_factors_orthonormal(self):
        rng = np.random.default_rng(27)
        base = random_factored(rng, 9, 6, 2)
        t = tangent_project(base, rng.standard_normal((9, 6)))
        Uhat, K, Vhat = retract_compact(base, t, 0.5)
        c = Uhat.shape[1]
        assert np.linalg.norm(Uhat.T @ Uhat - np.eye(c)) <= 1e-12
        assert np.linalg.norm(Vhat.T @ Vhat - np.eye(Vhat.shape[1])) <= 1e-12

    def test_rejects_foreign_direction(self):
        rng = np.random.default_rng(28)
        base1 = random_factored(rng, 9, 6, 2)
        base2 = random_factored(rng, 9, 6, 2)
        t = tangent_project(base1, rng.standard_normal((9, 6)))
        with pytest.raises(ParameterError):
            retract_compact(base2, t, 1.0)
