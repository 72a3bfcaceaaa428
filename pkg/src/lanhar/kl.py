"""KL divergence between two sets of embedding vectors."""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError

VAR_FLOOR = 1e-6


def _as_set(vectors, name: str) -> np.ndarray:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ArgumentError(f"{name} must be a list of vectors")
    if arr.shape[0] < 2:
        raise ArgumentError(f"{name} needs at least 2 samples, got {arr.shape[0]}")
    return arr


def fit_diag_gaussian(vectors, var_floor: float = VAR_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and (population) variance, variance floored."""
    arr = _as_set(vectors, "vectors")
    return arr.mean(axis=0), np.maximum(arr.var(axis=0), var_floor)


def gaussian_kl(mu_p, var_p, mu_q, var_q) -> float:
    """KL(N(mu_p, diag var_p) || N(mu_q, diag var_q))."""
    mu_p, var_p, mu_q, var_q = (np.asarray(a, dtype=np.float64) for a in (mu_p, var_p, mu_q, var_q))
    terms = np.log(var_q / var_p) + (var_p + (mu_p - mu_q) ** 2) / var_q - 1.0
    return max(0.0, 0.5 * float(terms.sum()))


def _knn_kl(p: np.ndarray, q: np.ndarray, k: int = 1) -> float:
    # Wang, Kulkarni & Verdu style nearest-neighbour estimator; clamped at 0.
    from scipy.spatial import cKDTree

    n, d = p.shape
    m = q.shape[0]
    rho = cKDTree(p).query(p, k=k + 1)[0][:, -1]
    nu = cKDTree(q).query(p, k=k)[0]
    nu = nu[:, -1] if nu.ndim == 2 else nu
    tiny = 1e-12
    est = d * np.mean(np.log(np.maximum(nu, tiny) / np.maximum(rho, tiny))) + np.log(m / (n - 1))
    return max(0.0, float(est))


def estimate_kl(set_p, set_q, method: str = "gaussian", var_floor: float = VAR_FLOOR) -> float:
    """KL(P || Q) between two embedding sets.

    The default fits a diagonal Gaussian to each set (population variance,
    floored at ``var_floor``) and evaluates the closed form. ``method="knn"``
    swaps in a 1-nearest-neighbour estimator.
    """
    p = _as_set(set_p, "set_P")
    q = _as_set(set_q, "set_Q")
    if p.shape[1] != q.shape[1]:
        raise ArgumentError(f"dimension mismatch: {p.shape[1]} vs {q.shape[1]}")
    if method == "gaussian":
        mu_p, var_p = p.mean(axis=0), np.maximum(p.var(axis=0), var_floor)
        mu_q, var_q = q.mean(axis=0), np.maximum(q.var(axis=0), var_floor)
        return gaussian_kl(mu_p, var_p, mu_q, var_q)
    if method == "knn":
        return _knn_kl(p, q)
    raise ArgumentError(f"unknown KL method {method!r}")
