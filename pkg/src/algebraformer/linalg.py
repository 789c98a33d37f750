"""Dense linear algebra kernels: LU, Householder QR, one-sided Jacobi SVD.

These are the classical reference solvers the benchmarks compare against and
the oracle that labels generated datasets. They are written directly in numpy
rather than delegating to LAPACK so that pivoting order, failure thresholds,
and convergence behaviour are fixed by this module and reproducible
bit-for-bit on any platform.

Conventions:
  - partial pivoting picks the largest absolute value in the column, first
    occurrence winning ties
  - a pivot counts as singular below 1e-14 * ||A||_inf
  - an R diagonal counts as rank deficient below 1e-12 * ||A||_F
"""

from __future__ import annotations

import numpy as np

from ._validation import as_matrix, as_vector, check_system

PIVOT_TOL = 1e-14
RANK_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60


class LinAlgError(Exception):
    """Base class for solver failures."""


class SingularMatrixError(LinAlgError):
    """A pivot fell below the singularity threshold during elimination."""


class RankDeficientError(LinAlgError):
    """An R diagonal fell below the rank threshold during QR."""


class NoConvergenceError(LinAlgError):
    """Jacobi sweeps exceeded the iteration cap without converging."""


def lu_factor(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """PA = LU with partial pivoting.

    Returns (LU, perm) where LU packs L (unit lower, below the diagonal) and
    U (upper, on and above), and perm maps factored row i to original row
    perm[i].
    """
    A = as_matrix(A)
    n = A.shape[0]
    lu = A.copy()
    perm = np.arange(n)
    scale = np.max(np.abs(A).sum(axis=1))  # ||A||_inf
    tol = PIVOT_TOL * scale
    for k in range(n):
        p = k + int(np.argmax(np.abs(lu[k:, k])))  # argmax returns first maximum
        if abs(lu[p, k]) < tol or lu[p, k] == 0.0:
            raise SingularMatrixError(
                f"pivot {abs(lu[p, k]):.3e} below {tol:.3e} at column {k}"
            )
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        lu[k + 1 :, k] /= lu[k, k]
        lu[k + 1 :, k + 1 :] -= np.outer(lu[k + 1 :, k], lu[k, k + 1 :])
    return lu, perm


def lu_solve(A, b) -> np.ndarray:
    """Solve Ax = b by LU with partial pivoting."""
    A, b = check_system(A, b)
    lu, perm = lu_factor(A)
    n = A.shape[0]
    x = b[perm].copy()
    for k in range(1, n):  # forward substitution, L unit lower
        x[k] -= lu[k, :k] @ x[:k]
    for k in range(n - 1, -1, -1):  # back substitution
        x[k] = (x[k] - lu[k, k + 1 :] @ x[k + 1 :]) / lu[k, k]
    return x


def _householder_qr(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Householder QR returning (R, reflectors).

    Reflectors are stored column-wise; reflector k acts on rows k:m.
    """
    m, n = A.shape
    R = A.copy()
    vs = []
    for k in range(n):
        x = R[k:, k].copy()
        normx = np.linalg.norm(x)
        v = x
        if normx > 0.0:
            v[0] += np.copysign(normx, x[0]) if x[0] != 0 else normx
            vnorm = np.linalg.norm(v)
            if vnorm > 0.0:
                v = v / vnorm
                R[k:, k:] -= 2.0 * np.outer(v, v @ R[k:, k:])
        vs.append(v)
    return R, vs


def qr_least_squares(A, b) -> np.ndarray:
    """Minimize ||Ax - b||_2 via Householder QR (m >= n required)."""
    A = as_matrix(A)
    b = as_vector(b)
    m, n = A.shape
    if m < n:
        raise ValueError(f"need rows >= cols, got {m}x{n}")
    if b.shape[0] != m:
        raise ValueError(f"b has length {b.shape[0]}, expected {m}")
    R, vs = _householder_qr(A)
    tol = RANK_TOL * np.linalg.norm(A)
    diag = np.abs(np.diag(R[:n, :n]))
    if np.any(diag < tol):
        j = int(np.argmin(diag))
        raise RankDeficientError(f"|R[{j},{j}]| = {diag[j]:.3e} below {tol:.3e}")
    qtb = b.copy()
    for k, v in enumerate(vs):  # apply Q^T = H_{n-1}...H_0
        qtb[k:] -= 2.0 * v * (v @ qtb[k:])
    x = np.zeros(n)
    for k in range(n - 1, -1, -1):
        x[k] = (qtb[k] - R[k, k + 1 :] @ x[k + 1 :]) / R[k, k]
    return x


class SvdResult:
    """Thin SVD A = U diag(s) V^T with s nonincreasing and nonnegative."""

    __slots__ = ("U", "singular_values", "V")

    def __init__(self, U: np.ndarray, singular_values: np.ndarray, V: np.ndarray):
        self.U = U
        self.singular_values = singular_values
        self.V = V

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.singular_values) @ self.V.T


def _complete_orthonormal(U: np.ndarray, cols: list[int]) -> None:
    """Replace the listed columns of U with vectors orthonormal to the rest.

    Only needed when singular values vanish; candidates are canonical basis
    vectors, orthogonalized against the accepted columns, so the completion
    is deterministic.
    """
    m = U.shape[0]
    good = [j for j in range(U.shape[1]) if j not in cols]
    basis = [U[:, j].copy() for j in good]
    for j in cols:
        for e in range(m):
            cand = np.zeros(m)
            cand[e] = 1.0
            for q in basis:
                cand -= (q @ cand) * q
            norm = np.linalg.norm(cand)
            if norm > 1e-8:
                cand /= norm
                U[:, j] = cand
                basis.append(cand)
                break


def svd(A) -> SvdResult:
    """One-sided Jacobi SVD.

    Rotations are applied cyclically to column pairs until every pair is
    numerically orthogonal; chosen over bidiagonalization because it keeps
    full relative accuracy in the small singular values, which is what the
    ill-conditioned inputs here stress.
    """
    A = as_matrix(A)
    m, n = A.shape
    if m < n:
        flipped = svd(A.T)
        return SvdResult(flipped.V, flipped.singular_values, flipped.U)

    W = A.copy()
    V = np.eye(n)
    sq = np.einsum("ij,ij->j", W, W)  # squared column norms, maintained
    eps = np.finfo(np.float64).eps
    for _sweep in range(JACOBI_MAX_SWEEPS):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                app, aqq = sq[p], sq[q]
                apq = W[:, p] @ W[:, q]
                if app * aqq <= 0.0:
                    continue
                if abs(apq) <= eps * np.sqrt(app * aqq):
                    continue
                off = max(off, abs(apq) / np.sqrt(app * aqq))
                # 2x2 symmetric Schur rotation of the Gram matrix
                tau = (aqq - app) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                if tau == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                wp = W[:, p].copy()
                W[:, p] = c * wp - s * W[:, q]
                W[:, q] = s * wp + c * W[:, q]
                vp = V[:, p].copy()
                V[:, p] = c * vp - s * V[:, q]
                V[:, q] = s * vp + c * V[:, q]
                sq[p] = W[:, p] @ W[:, p]
                sq[q] = W[:, q] @ W[:, q]
        if off <= 10.0 * eps:
            break
    else:
        raise NoConvergenceError(f"no convergence in {JACOBI_MAX_SWEEPS} sweeps")

    sigma = np.sqrt(np.einsum("ij,ij->j", W, W))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    W = W[:, order]
    V = V[:, order]
    U = np.zeros((m, n))
    tiny = eps * max(sigma[0], 1.0) if sigma.size else 0.0
    dead = []
    for j in range(n):
        if sigma[j] > tiny:
            U[:, j] = W[:, j] / sigma[j]
        else:
            sigma[j] = max(sigma[j], 0.0)
            dead.append(j)
    if dead:
        _complete_orthonormal(U, dead)
    return SvdResult(U, sigma, V)


def svd_least_squares(A, b, rcond: float = 1e-15) -> np.ndarray:
    """Truncated-pseudoinverse least squares.

    Modes with singular value below rcond * sigma_max are discarded; the
    result is the minimum-norm solution of the truncated system.
    """
    if not 0.0 < rcond < 1.0:
        raise ValueError(f"rcond must lie in (0, 1), got {rcond}")
    A = as_matrix(A)
    b = as_vector(b)
    if A.shape[0] != b.shape[0]:
        raise ValueError(f"A has {A.shape[0]} rows, b has length {b.shape[0]}")
    res = svd(A)
    s = res.singular_values
    cutoff = rcond * (s[0] if s.size else 0.0)
    inv = np.where(s >= cutoff, np.divide(1.0, s, where=s > 0, out=np.zeros_like(s)), 0.0)
    return res.V @ (inv * (res.U.T @ b))


def condition_number(A) -> float:
    """Two-norm condition number sigma_max / sigma_min (inf when singular)."""
    A = as_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"condition_number requires a square matrix, got {A.shape}")
    s = svd(A).singular_values
    if s[-1] == 0.0:
        return float("inf")
    return float(s[0] / s[-1])
