import numpy as np
import pytest
import scipy.sparse as sp

from edsolve.linalg import (DiagonalPreconditioner, IndefiniteOperatorError, SparseSymMatrix,
                            apply_complement, dense_inverse_oracle, dense_sym_eig, householder_extend,
                            pcg_solve, spectral_norm, spmv, sym_extremes)


def tridiag(n, diag=2.0, off=-1.0):
    return SparseSymMatrix.from_scipy(sp.diags([off, diag, off], [-1, 0, 1], shape=(n, n)).tocsr())


PATH4_INTERIOR = np.array([[1, -1, 0, 0], [-1, 2, -1, 0], [0, -1, 2, -1], [0, 0, -1, 1]], float)
PATH4_CLOSED = np.array([[3, -1, 0, 0], [-1, 2, -1, 0], [0, -1, 2, -1], [0, 0, -1, 3]], float)


class TestSpmv:
    def test_identity(self):
        I3 = SparseSymMatrix.from_dense(np.eye(3))
        np.testing.assert_array_equal(spmv(I3, [1, 2, 3]), [1, 2, 3])

    def test_tridiag_row_sums(self):
        np.testing.assert_array_equal(spmv(tridiag(3), np.ones(3)), [1, 0, 1])

    def test_laplacian_first_column(self):
        e0 = np.eye(5)[0]
        np.testing.assert_array_equal(spmv(tridiag(5), e0), [2, -1, 0, 0, 0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            spmv(tridiag(3), np.ones(4))

    def test_rejects_asymmetric(self):
        M = sp.csr_matrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
        with pytest.raises(ValueError):
            SparseSymMatrix.from_scipy(M)

    def test_no_explicit_zeros_and_sorted(self):
        M = sp.csr_matrix((np.array([1.0, 0.0, 1.0]), np.array([1, 0, 0]), np.array([0, 2, 3])), shape=(2, 2))
        M = M + M.T
        A = SparseSymMatrix.from_scipy(M)
        csr = A.to_scipy()
        assert np.all(csr.data != 0)
        for i in range(2):
            cols = csr.indices[csr.indptr[i]:csr.indptr[i + 1]]
            assert np.all(np.diff(cols) > 0)


class TestDenseEig:
    @pytest.mark.parametrize("method", ["jacobi", "lapack"])
    def test_diagonal(self, method):
        w, V = dense_sym_eig(np.diag([3.0, 1.0, 2.0]), 3, method=method)
        np.testing.assert_allclose(w, [1, 2, 3], atol=1e-14)
        np.testing.assert_allclose(np.abs(V), np.eye(3)[:, [1, 2, 0]], atol=1e-14)

    @pytest.mark.parametrize("method", ["jacobi", "lapack"])
    def test_path_interior_spectrum(self, method):
        w, V = dense_sym_eig(PATH4_INTERIOR, 4, method=method)
        r2 = np.sqrt(2.0)
        np.testing.assert_allclose(w, [0, 2 - r2, 2, 2 + r2], atol=1e-12)
        np.testing.assert_allclose(V.T @ V, np.eye(4), atol=1e-10)
        res = np.linalg.norm(PATH4_INTERIOR @ V - V * w, axis=0)
        assert res.max() <= 1e-10 * np.linalg.norm(PATH4_INTERIOR)

    def test_closed_energy_positive_definite(self):
        w, _ = dense_sym_eig(PATH4_CLOSED, 1)
        assert w[0] > 0

    def test_methods_agree(self):
        rng = np.random.default_rng(4)
        G = rng.standard_normal((12, 12))
        M = G + G.T
        wj, Vj = dense_sym_eig(M, 5, "jacobi")
        wl, Vl = dense_sym_eig(M, 5, "lapack")
        np.testing.assert_allclose(wj, wl, atol=1e-10)
        np.testing.assert_allclose(np.abs(Vj.T @ Vl), np.eye(5), atol=1e-8)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            dense_sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_bad_k(self):
        with pytest.raises(ValueError):
            dense_sym_eig(np.eye(2), 3)


class TestHouseholder:
    def test_canonical_column(self):
        f = householder_extend(np.eye(3)[:, :1])
        U = f.dense_u()
        assert U.shape == (3, 2)
        np.testing.assert_allclose(np.abs(U[0]), 0, atol=1e-15)
        np.testing.assert_allclose(U.T @ U, np.eye(2), atol=1e-14)
        y = apply_complement(f, "Ut", [0.0, 5.0, 7.0])
        np.testing.assert_allclose(np.abs(y), [5, 7], atol=1e-14)

    def test_constant_vector(self):
        phi = np.full((4, 1), 0.5)
        U = householder_extend(phi).dense_u()
        np.testing.assert_allclose(phi.T @ U, 0, atol=1e-14)
        np.testing.assert_allclose(U.T @ U, np.eye(3), atol=1e-14)

    def test_random_block(self):
        rng = np.random.default_rng(0)
        Phi, _ = np.linalg.qr(rng.standard_normal((6, 2)))
        f = householder_extend(Phi)
        QU = np.hstack([f.dense_q(), f.dense_u()])
        np.testing.assert_allclose(QU.T @ QU, np.eye(6), atol=1e-10)
        np.testing.assert_allclose(f.dense_q() @ f.dense_q().T, Phi @ Phi.T, atol=1e-10)

    def test_round_trips(self):
        rng = np.random.default_rng(1)
        Phi, _ = np.linalg.qr(rng.standard_normal((7, 3)))
        f = householder_extend(Phi)
        y = rng.standard_normal(4)
        np.testing.assert_allclose(f.apply_ut(f.apply_u(y)), y, atol=1e-13)
        x = rng.standard_normal(7)
        np.testing.assert_allclose(f.apply_u(f.apply_ut(x)) + f.apply_q(f.apply_qt(x)), x, atol=1e-13)
        np.testing.assert_allclose(apply_complement(f, "U", y), f.dense_u() @ y, atol=1e-12)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            householder_extend(np.array([[1.0], [1.0]]))

    def test_mode_and_length_checks(self):
        f = householder_extend(np.eye(3)[:, :1])
        with pytest.raises(ValueError):
            apply_complement(f, "Ut", np.ones(2))
        with pytest.raises(ValueError):
            apply_complement(f, "U", np.ones(3))
        with pytest.raises(ValueError):
            apply_complement(f, "Q", np.ones(3))


class TestPCG:
    def test_identity_one_step(self):
        b = np.array([1.0, -2.0, 3.0])
        r = pcg_solve(lambda v: v, b, rel_tol=1e-12)
        np.testing.assert_allclose(r.x, b)
        assert r.iterations == 1 and r.converged

    def test_two_eigenvalues(self):
        A = SparseSymMatrix.from_dense(np.diag([1.0, 2.0]))
        r = pcg_solve(A, np.array([1.0, 2.0]), DiagonalPreconditioner.from_matrix(A), rel_tol=1e-12)
        np.testing.assert_allclose(r.x, [1, 1])
        assert r.iterations <= 2

    def test_laplacian_against_dense(self):
        A = tridiag(5)
        b = np.ones(5)
        r = pcg_solve(A, b, DiagonalPreconditioner.from_matrix(A), rel_tol=1e-10)
        np.testing.assert_allclose(r.x, np.linalg.solve(A.to_dense(), b), atol=1e-8)
        assert np.linalg.norm(b - A @ r.x) <= 1e-10 * np.linalg.norm(b)

    def test_detects_indefinite(self):
        A = SparseSymMatrix.from_dense(np.diag([1.0, -1.0]))
        with pytest.raises(IndefiniteOperatorError):
            pcg_solve(A, np.array([1.0, 1.0]))

    def test_iteration_cap_reports_failure(self):
        A = tridiag(50)
        r = pcg_solve(A, np.ones(50), rel_tol=1e-14, max_iter=3)
        assert not r.converged and r.iterations == 3

    def test_energy_norm_stop_bounds_true_error(self):
        A = tridiag(200)
        b = np.random.default_rng(0).standard_normal(200)
        x = np.linalg.solve(A.to_dense(), b)
        r = pcg_solve(A, b, rel_tol=1e-6, norm="energy", delay=5)
        e = r.x - x
        assert r.converged
        # the delayed estimate is a lower bound; check the true error is within an order
        assert np.sqrt(e @ (A @ e)) <= 10 * 1e-6 * np.linalg.norm(b)

    def test_preconditioned_norm(self):
        A = tridiag(30)
        M = DiagonalPreconditioner.from_matrix(A)
        r = pcg_solve(A, np.ones(30), M, rel_tol=1e-10, norm="preconditioned")
        assert np.linalg.norm(M(np.ones(30) - A @ r.x)) <= 1e-10 * np.linalg.norm(M(np.ones(30)))

    def test_zero_rhs(self):
        r = pcg_solve(tridiag(4), np.zeros(4))
        assert r.iterations == 0 and not np.any(r.x)

    def test_rejects_nonpositive_preconditioner(self):
        with pytest.raises(ValueError):
            DiagonalPreconditioner.from_diagonal([1.0, 0.0])


class TestOracles:
    def test_diag_inverse(self):
        np.testing.assert_allclose(dense_inverse_oracle(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))

    def test_closed_energy_ones_solve(self):
        x = dense_inverse_oracle(PATH4_CLOSED) @ np.ones(4)
        np.testing.assert_allclose(x, [1, 2, 2, 1], atol=1e-13)

    def test_random_spd_round_trip(self):
        G = np.random.default_rng(2).standard_normal((20, 20))
        M = G.T @ G + np.eye(20)
        np.testing.assert_allclose(M @ dense_inverse_oracle(M), np.eye(20), atol=1e-8)

    def test_indefinite_rejected(self):
        with pytest.raises(np.linalg.LinAlgError):
            dense_inverse_oracle(np.diag([1.0, -1.0]))

    def test_spectral_norm_cases(self):
        assert spectral_norm(np.diag([1.0, -3.0, 2.0]), 3) == pytest.approx(3, rel=1e-6)
        v = np.array([2.0, 0.0, 0.0])
        assert spectral_norm(np.outer(v, v), 3) == pytest.approx(4, rel=1e-6)
        A = tridiag(5)
        assert spectral_norm(A, 5, tol=1e-12) == pytest.approx(2 + 2 * np.cos(np.pi / 6), rel=1e-5)

    def test_sym_extremes_sparse_route(self):
        A = tridiag(60)
        lo, hi = sym_extremes(A, dense_limit=10)
        w = np.linalg.eigvalsh(A.to_dense())
        assert lo == pytest.approx(w[0], rel=1e-6) and hi == pytest.approx(w[-1], rel=1e-6)
