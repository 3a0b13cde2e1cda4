"""SVD factorization against an independently written eigensolver oracle.

The production path runs cyclic Jacobi on the Gram matrix. The oracle
here is a classical Jacobi eigensolver (largest off-diagonal pivot),
written separately, plus numpy's LAPACK SVD as a second reference.
"""

import numpy as np
import pytest

from xdistil.errors import ContractError, NumericError
from xdistil.factorize import SvdResult, adapt_embeddings, jacobi_eigh, svd_project


def classical_jacobi_eigenvalues(a: np.ndarray, sweeps: int = 200) -> np.ndarray:
    """Oracle: greedy-pivot Jacobi, independent of the production solver."""
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    for _ in range(sweeps * n * n):
        off = np.abs(a - np.diag(np.diag(a)))
        p, q = np.unravel_index(np.argmax(off), off.shape)
        if off[p, q] < 1e-14:
            break
        if p > q:
            p, q = q, p
        theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
        t = 1.0 if theta == 0 else np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0))
        c = 1.0 / np.sqrt(t * t + 1.0)
        s = t * c
        j = np.eye(n)
        j[p, p] = j[q, q] = c
        j[p, q] = s
        j[q, p] = -s
        a = j.T @ a @ j
    return np.sort(np.diag(a))[::-1]


class TestJacobi:
    def test_matches_classical_oracle_and_lapack(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(2, 9))
            m = rng.normal(size=(n, n))
            a = m + m.T
            vals, vecs = jacobi_eigh(a)
            oracle = classical_jacobi_eigenvalues(a)
            lapack = np.sort(np.linalg.eigvalsh(a))[::-1]
            assert np.allclose(vals, oracle, atol=1e-9)
            assert np.allclose(vals, lapack, atol=1e-9)
            assert np.allclose(vecs @ np.diag(vals) @ vecs.T, a, atol=1e-8)

    def test_diagonal_input_immediate(self):
        vals, vecs = jacobi_eigh(np.diag([3.0, 1.0, 2.0]))
        assert np.allclose(vals, [3.0, 2.0, 1.0])

    def test_non_square_rejected(self):
        with pytest.raises(ContractError):
            jacobi_eigh(np.zeros((2, 3)))

    def test_nonconvergence_reports_sweeps(self):
        rng = np.random.default_rng(1)
        m = rng.normal(size=(6, 6))
        with pytest.raises(NumericError, match="sweeps"):
            jacobi_eigh(m + m.T, max_sweeps=0)


class TestSvdProject:
    def test_rank_two_diagonal_exact(self):
        w = np.diag([3.0, 2.0, 0.0, 0.0])
        r = svd_project(w, 2)
        assert r.residual == 0.0
        assert np.allclose(r.singular_values[:2], [3.0, 2.0])
        assert np.allclose(np.linalg.norm(r.projected, axis=1), [3.0, 2.0, 0.0, 0.0])

    def test_residual_matches_oracle_on_seeded_6x4(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            w = rng.normal(size=(6, 4))
            r = svd_project(w, 2)
            oracle_eigs = classical_jacobi_eigenvalues(w.T @ w)
            oracle_residual = float(np.clip(oracle_eigs, 0, None)[2:].sum())
            assert abs(r.residual - oracle_residual) < 1e-8
            s = np.linalg.svd(w, compute_uv=False)
            assert np.allclose(r.singular_values, s, atol=1e-9)

    def test_reconstruction_error_equals_residual(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            w = rng.normal(size=(8, 5))
            r = svd_project(w, 3)
            err = np.sum((w - r.projected @ r.basis.T) ** 2)
            assert abs(err - r.residual) <= 1e-6 * max(r.residual, 1e-30)

    def test_basis_orthonormal(self):
        w = np.random.default_rng(5).normal(size=(10, 6))
        r = svd_project(w, 4)
        assert np.abs(r.basis.T @ r.basis - np.eye(4)).max() < 1e-8

    def test_singular_values_nonincreasing(self):
        w = np.random.default_rng(6).normal(size=(9, 5))
        r = svd_project(w, 2)
        assert (np.diff(r.singular_values) <= 1e-12).all()

    def test_beats_random_projections(self):
        # rank-2 truncation is optimal among rank-2 projections
        rng = np.random.default_rng(7)
        w = rng.normal(size=(6, 4))
        r = svd_project(w, 2)
        svd_err = np.sum((w - r.projected @ r.basis.T) ** 2)
        for _ in range(100):
            q, _ = np.linalg.qr(rng.normal(size=(4, 2)))
            rand_err = np.sum((w - (w @ q) @ q.T) ** 2)
            assert svd_err <= rand_err + 1e-9

    def test_deterministic_sign_convention(self):
        w = np.random.default_rng(8).normal(size=(7, 4))
        a, b = svd_project(w, 3), svd_project(w.copy(), 3)
        assert np.array_equal(a.basis, b.basis)
        assert np.array_equal(a.projected, b.projected)
        for j in range(3):
            col = a.basis[:, j]
            assert col[np.argmax(np.abs(col))] > 0

    def test_preconditions(self):
        w = np.zeros((4, 6))  # wide, not tall
        with pytest.raises(ContractError):
            svd_project(w, 2)
        with pytest.raises(ContractError):
            svd_project(np.zeros((6, 4)), 0)
        with pytest.raises(ContractError):
            svd_project(np.zeros((6, 4)), 5)
        with pytest.raises(NumericError):
            svd_project(np.full((6, 4), np.inf), 2)


class TestAdaptEmbeddings:
    def test_output_shape(self):
        w = np.random.default_rng(9).normal(size=(20, 6))
        assert adapt_embeddings(w, 3).shape == (20, 3)

    def test_full_rank_reproduces_up_to_rotation(self):
        rng = np.random.default_rng(10)
        w = rng.normal(size=(12, 5))
        r = svd_project(w, 5)
        assert np.linalg.norm(r.projected @ r.basis.T - w) < 1e-6

    def test_row_space_preserved_on_low_rank_input(self):
        # exact-rank-2 input: pairwise dot products survive the projection
        rng = np.random.default_rng(11)
        base = rng.normal(size=(2, 6))
        coef = rng.normal(size=(10, 2))
        w = coef @ base
        p = adapt_embeddings(w, 2)
        assert np.allclose(p @ p.T, w @ w.T, atol=1e-8)

    def test_halving_width_halves_embedding_parameters(self):
        # scaled-down version of compressing a wide vocabulary table to half
        # width; the parameter count halves because only the embedding matrix
        # depends on the vocabulary
        rng = np.random.default_rng(12)
        w = rng.normal(size=(1100, 96))
        projected = adapt_embeddings(w, 48)
        assert projected.size * 2 == w.size
        # full-size arithmetic for a 110000 x 768 table projected to 384
        assert 110000 * 384 * 2 == 110000 * 768
