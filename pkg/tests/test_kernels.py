"""Numerical kernels: CG, eigensolves, text I/O, digests."""

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from netcem import ConvergenceError, NumericalError
from netcem.kernels import (
    cg_solve,
    dense_sym_geig,
    eig_residual_ok,
    fix_eigvec_signs,
    format_float,
    read_matrix_market,
    read_vector,
    sparse_smallest_geig,
    vector_digest,
    write_matrix_market,
    write_vector,
)


def spd_matrix(rng, n):
    q = rng.standard_normal((n, n))
    return q @ q.T + n * np.eye(n)


class TestCg:
    def test_matches_direct_solve(self, rng):
        a = spd_matrix(rng, 30)
        b = rng.standard_normal(30)
        res = cg_solve(lambda v: a @ v, b, rtol=1e-12, maxit=500)
        assert res.relative_residual <= 1e-12
        assert np.linalg.norm(a @ res.x - b) <= 1e-9 * np.linalg.norm(b)

    def test_zero_rhs_short_circuits(self):
        res = cg_solve(lambda v: v, np.zeros(5), rtol=1e-10, maxit=10)
        assert res.iterations == 0
        assert np.all(res.x == 0.0)

    def test_jacobi_preconditioner_reduces_iterations(self, rng):
        d = 10.0 ** rng.uniform(-3, 3, size=40)
        a = np.diag(d) + 0.05 * np.ones((40, 40))
        b = rng.standard_normal(40)
        plain = cg_solve(lambda v: a @ v, b, rtol=1e-10, maxit=5000)
        diag = np.diag(a)
        pre = cg_solve(
            lambda v: a @ v, b, rtol=1e-10, maxit=5000, apply_precond=lambda r: r / diag
        )
        assert pre.iterations < plain.iterations

    def test_budget_exhaustion_raises_with_history(self, rng):
        a = spd_matrix(rng, 50)
        b = rng.standard_normal(50)
        with pytest.raises(ConvergenceError) as exc:
            cg_solve(lambda v: a @ v, b, rtol=1e-14, maxit=2)
        assert exc.value.residuals

    def test_indefinite_operator_rejected(self):
        a = np.diag([1.0, -1.0])
        with pytest.raises(NumericalError):
            cg_solve(lambda v: a @ v, np.array([1.0, 1.0]), rtol=1e-12, maxit=50)


class TestDenseGeig:
    def test_diagonal_pair_frozen(self):
        # A = diag(2, 8), D = diag(2, 2): eigenvalues (1, 4), vectors
        # are scaled coordinate axes with 1/sqrt(2) for D-orthonormality.
        w, v = dense_sym_geig(np.diag([2.0, 8.0]), np.array([2.0, 2.0]), count=2)
        assert np.allclose(w, [1.0, 4.0], atol=1e-14)
        assert np.allclose(np.abs(v), np.eye(2) / np.sqrt(2.0), atol=1e-14)

    def test_d_orthonormality(self, rng):
        a = spd_matrix(rng, 20)
        d = rng.uniform(0.5, 2.0, size=20)
        w, v = dense_sym_geig(a, d, count=6)
        gram = v.T @ (d[:, None] * v)
        assert np.allclose(gram, np.eye(6), atol=1e-10)
        assert np.all(np.diff(w) >= -1e-12)

    def test_matches_sparse_path(self, rng):
        a = sp.csr_matrix(spd_matrix(rng, 80))
        d = rng.uniform(0.5, 2.0, size=80)
        w_dense, _ = dense_sym_geig(a.toarray(), d, count=4)
        w_sparse, v_sparse = sparse_smallest_geig(a, d, count=4)
        assert np.allclose(w_dense, w_sparse, rtol=1e-8)
        gram = v_sparse.T @ (d[:, None] * v_sparse)
        assert np.allclose(gram, np.eye(4), atol=1e-8)

    def test_sign_convention(self):
        v = np.array([[0.1, -0.9], [-0.8, 0.2]])
        fixed = fix_eigvec_signs(v.copy())
        # Largest-magnitude entry of each column made positive.
        assert fixed[1, 0] > 0 and fixed[0, 1] > 0

    def test_residual_gate_accepts_true_pairs(self, rng):
        a = spd_matrix(rng, 15)
        d = rng.uniform(0.5, 2.0, size=15)
        w, v = dense_sym_geig(a, d, count=3)
        ok, worst = eig_residual_ok(a, d, w, v, 1e-9)
        assert ok and worst <= 1e-9
        bad, _ = eig_residual_ok(a, d, w + 0.5, v, 1e-9)
        assert not bad


class TestTextIo:
    def test_matrix_market_roundtrip(self, rng, tmp_path):
        a = spd_matrix(rng, 12)
        mat = sp.csr_matrix(a)
        path = tmp_path / "a.mtx"
        write_matrix_market(path, mat)
        back = read_matrix_market(path)
        assert np.allclose(back.toarray(), a, rtol=1e-12)

    def test_vector_roundtrip_bitwise(self, rng, tmp_path):
        vec = rng.standard_normal(64) * 10.0 ** rng.integers(-8, 8, size=64)
        path = tmp_path / "v.txt"
        write_vector(path, vec)
        back = read_vector(path)
        assert np.array_equal(back, vec)

    @given(st.floats(allow_nan=False, allow_infinity=False, width=64))
    def test_format_float_is_exact(self, x):
        assert float(format_float(x)) == x


class TestDigest:
    def test_digest_depends_on_content(self, rng):
        v = rng.standard_normal(10)
        assert vector_digest(v) == vector_digest(v.copy())
        w = v.copy()
        w[3] = np.nextafter(w[3], np.inf)
        assert vector_digest(v) != vector_digest(w)

    def test_digest_concatenates_arrays(self, rng):
        v, w = rng.standard_normal(4), rng.standard_normal(4)
        assert vector_digest(v, w) != vector_digest(w, v)
