"""Input validation helpers shared by the functional API and the estimators."""
from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch

GRAM_TOL = 1e-12


def check_labels(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise DimensionMismatch(f"labels must be 1-d, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("labels must be finite")
    return y


def gram_defect(X: np.ndarray) -> float:
    """Largest absolute entry of X X^T - I."""
    X = np.asarray(X, dtype=float)
    G = X @ X.T
    return float(np.max(np.abs(G - np.eye(X.shape[0])))) if X.size else 0.0


def check_orthonormal_rows(X, tol: float = GRAM_TOL) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatch(f"inputs must be 2-d, got shape {X.shape}")
    n, d = X.shape
    if d < n:
        raise DimensionMismatch(f"need d >= n for orthonormal inputs (n={n}, d={d})")
    err = gram_defect(X)
    if err > tol:
        raise ValueError(f"input rows are not orthonormal (max Gram defect {err:.3e})")
    return X


def is_identity(X: np.ndarray) -> bool:
    X = np.asarray(X)
    return X.ndim == 2 and X.shape[0] == X.shape[1] and np.array_equal(X, np.eye(X.shape[0]))


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if int(value) != value or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
