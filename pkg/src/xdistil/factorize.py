"""Low-rank word-embedding factorization via truncated SVD.

A tall embedding table W (rows = vocabulary entries) is projected onto
the span of its top right-singular vectors. The decomposition runs on
the small Gram matrix W^T W with a cyclic Jacobi eigensolver, so the
cost is O(rows * width^2) regardless of vocabulary size. Rows of the
projected table are U_k * Sigma_k coordinates, which preserves inner
products exactly on the retained subspace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


@dataclass
class SvdResult:
    projected: np.ndarray         # rows x target_dim, U_k * Sigma_k coordinates
    basis: np.ndarray             # width x target_dim, orthonormal columns
    singular_values: np.ndarray   # length width, nonincreasing, nonnegative
    residual: float               # sum of squares of the discarded singular values


def jacobi_eigh(a: np.ndarray, tol: float = JACOBI_TOL,
                max_sweeps: int = JACOBI_MAX_SWEEPS) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps row by row over the upper triangle until the off-diagonal
    Frobenius norm falls below tol * ||A||_F. Returns (eigenvalues,
    eigenvectors) sorted by nonincreasing eigenvalue; eigenvectors are
    the columns.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ContractError(f"jacobi_eigh needs a square matrix, got {a.shape}")
    v = np.eye(n)
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return np.zeros(n), v

    def off_diagonal_norm() -> float:
        # summed directly over off-diagonal entries; the difference
        # ||A||_F^2 - ||diag||_F^2 cancels catastrophically near convergence
        off = a - np.diag(np.diag(a))
        return float(np.linalg.norm(off))

    sweeps = 0
    while off_diagonal_norm() >= tol * norm:
        if sweeps >= max_sweeps:
            raise NumericError(
                f"Jacobi eigensolver did not converge in {max_sweeps} sweeps"
            )
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                else:
                    # hypot avoids overflow for huge theta (near-zero pivots)
                    t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0))
                c = 1.0 / np.sqrt(t**2 + 1.0)
                s = t * c
                rot = np.array([[c, -s], [s, c]])
                a[[p, q], :] = rot @ a[[p, q], :]
                a[:, [p, q]] = a[:, [p, q]] @ rot.T
                v[:, [p, q]] = v[:, [p, q]] @ rot.T

    eigenvalues = np.diag(a).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    return eigenvalues[order], v[:, order]


def _fix_signs(basis: np.ndarray) -> np.ndarray:
    """Make each column's largest-magnitude entry positive (deterministic)."""
    out = basis.copy()
    for j in range(out.shape[1]):
        k = int(np.argmax(np.abs(out[:, j])))
        if out[k, j] < 0:
            out[:, j] = -out[:, j]
    return out


def svd_project(w: np.ndarray, target_dim: int) -> SvdResult:
    """Truncated SVD of a tall matrix via its Gram matrix.

    Requires 1 <= target_dim <= width <= rows and finite entries. The
    residual equals the squared Frobenius reconstruction error of the
    rank-target_dim approximation.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ContractError(f"svd_project expects a matrix, got ndim={w.ndim}")
    rows, width = w.shape
    if not (1 <= target_dim <= width <= rows):
        raise ContractError(
            f"need 1 <= target_dim <= width <= rows, got target_dim={target_dim}, "
            f"shape={w.shape}"
        )
    if not np.isfinite(w).all():
        raise NumericError("svd_project requires finite entries")

    gram = w.T @ w
    eigenvalues, vectors = jacobi_eigh(gram)
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    singular_values = np.sqrt(eigenvalues)
    basis = _fix_signs(vectors[:, :target_dim])
    projected = w @ basis
    residual = float(eigenvalues[target_dim:].sum())
    return SvdResult(
        projected=projected,
        basis=basis,
        singular_values=singular_values,
        residual=residual,
    )


def adapt_embeddings(teacher_embeddings: np.ndarray, target_dim: int) -> np.ndarray:
    """Project an embedding table to target_dim columns (rows preserved)."""
    return svd_project(teacher_embeddings, target_dim).projected
