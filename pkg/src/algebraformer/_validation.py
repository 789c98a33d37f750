"""Input validation helpers shared across the library.

All numeric data is carried as float64 numpy arrays: matrices are 2-D and
row-major, vectors are 1-D. These helpers coerce array-likes to that
representation and enforce the finiteness guarantees the samplers and
solvers rely on.
"""

from __future__ import annotations

import numpy as np


def as_matrix(a, name: str = "A", require_finite: bool = True) -> np.ndarray:
    """Coerce to a 2-D float64 C-contiguous array."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {m.shape}")
    if m.size == 0:
        raise ValueError(f"{name} must be nonempty")
    if require_finite and not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return m


def as_vector(a, name: str = "b", require_finite: bool = True) -> np.ndarray:
    """Coerce to a 1-D float64 array."""
    v = np.ascontiguousarray(a, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {v.shape}")
    if v.size == 0:
        raise ValueError(f"{name} must be nonempty")
    if require_finite and not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return v


def check_square(A: np.ndarray, name: str = "A") -> np.ndarray:
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square, got shape {A.shape}")
    return A


def check_system(A, b) -> tuple[np.ndarray, np.ndarray]:
    """Validate a square system (A, b) with matching dimensions."""
    A = check_square(as_matrix(A))
    b = as_vector(b)
    if A.shape[0] != b.shape[0]:
        raise ValueError(
            f"dimension mismatch: A is {A.shape[0]}x{A.shape[1]}, b has length {b.shape[0]}"
        )
    return A, b


def check_system_batch(X, name: str = "X") -> np.ndarray:
    """Validate a batch of encoded token sequences, shape (n_samples, n_tokens, n_features)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError(
            f"{name} must have shape (n_samples, n_tokens, n_features), got {X.shape}"
        )
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return X


def check_targets(y, X: np.ndarray, name: str = "y") -> np.ndarray:
    """Validate per-token regression targets, shape (n_samples, n_tokens)."""
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError(f"{name} must have shape (n_samples, n_tokens), got {y.shape}")
    if y.shape[0] != X.shape[0] or y.shape[1] != X.shape[1]:
        raise ValueError(
            f"{name} shape {y.shape} does not match inputs with "
            f"{X.shape[0]} samples of {X.shape[1]} tokens"
        )
    if not np.all(np.isfinite(y)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return y
