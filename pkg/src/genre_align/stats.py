"""Second-order statistics of embedding populations.

All covariances use the biased ``1/N`` estimator. Each statistic has a
``*_backward`` companion that maps an upstream gradient ``dL/dC`` back to
the input vectors; the loss functions chain these together.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import DegenerateCovarianceError

EPSILON_DIAG = 1e-12


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("expected a non-empty list of d-vectors")
    return X


def covariance(X) -> np.ndarray:
    """Biased covariance of the rows of ``X``."""
    X = _as_matrix(X)
    centered = X - X.mean(axis=0)
    return centered.T @ centered / X.shape[0]


def covariance_backward(X, grad_cov: np.ndarray) -> np.ndarray:
    X = _as_matrix(X)
    centered = X - X.mean(axis=0)
    sym = grad_cov + grad_cov.T
    # the mean term drops out: centered rows sum to zero
    return centered @ sym / X.shape[0]


def _group_arrays(groups) -> list[np.ndarray]:
    if isinstance(groups, np.ndarray):
        if groups.ndim != 3:
            raise ValueError("grouped array must have shape (S, M, d)")
        arrays = list(groups)
    else:
        arrays = [_as_matrix(vecs) for _, vecs in groups]
    if not arrays:
        raise ValueError("within_between needs at least one speaker")
    return arrays


def within_between(groups) -> tuple[np.ndarray, np.ndarray]:
    """Within-speaker and between-speaker covariance.

    ``groups`` is either a list of ``(speaker, vectors)`` pairs, where speakers
    may have different utterance counts, or an array of shape ``(S, M, d)``.
    ``W + B`` equals the covariance of all vectors pooled.
    """
    arrays = _group_arrays(groups)
    total = sum(a.shape[0] for a in arrays)
    mu = sum(a.sum(axis=0) for a in arrays) / total
    d = arrays[0].shape[1]
    W = np.zeros((d, d))
    B = np.zeros((d, d))
    for a in arrays:
        mu_s = a.mean(axis=0)
        c = a - mu_s
        W += c.T @ c
        diff = mu_s - mu
        B += a.shape[0] * np.outer(diff, diff)
    return W / total, B / total


def within_between_backward(groups, grad_W, grad_B) -> list[np.ndarray]:
    """Gradient with respect to each speaker's vectors, same layout as ``groups``."""
    arrays = _group_arrays(groups)
    total = sum(a.shape[0] for a in arrays)
    mu = sum(a.sum(axis=0) for a in arrays) / total
    sym_W = grad_W + grad_W.T
    sym_B = grad_B + grad_B.T
    out = []
    for a in arrays:
        mu_s = a.mean(axis=0)
        g = (a - mu_s) @ sym_W + (mu_s - mu) @ sym_B
        out.append(g / total)
    return out


def _checked_scale(c: np.ndarray) -> np.ndarray:
    diag = np.diag(c)
    bad = np.flatnonzero(diag <= EPSILON_DIAG)
    if bad.size:
        raise DegenerateCovarianceError(
            f"variance <= {EPSILON_DIAG:g} on dimension(s) {bad.tolist()}; "
            "cannot normalize to a correlation matrix")
    return np.sqrt(diag)


def to_correlation(c) -> np.ndarray:
    """Normalize a covariance matrix to unit diagonal."""
    c = np.asarray(c, dtype=np.float64)
    scale = _checked_scale(c)
    r = c / np.outer(scale, scale)
    np.fill_diagonal(r, 1.0)
    return r


def to_correlation_backward(c, grad_r) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    scale = _checked_scale(c)
    denom = np.outer(scale, scale)
    r = c / denom
    hr = grad_r * r
    grad_c = grad_r / denom
    grad_c[np.diag_indices_from(grad_c)] -= (hr.sum(axis=0) + hr.sum(axis=1)) / (2.0 * np.diag(c))
    return grad_c


def frob_sq_diff(a, b) -> float:
    """Squared Frobenius norm of ``a - b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sum((a - b) ** 2))


def is_valid_covariance(c, sym_tol: float = 1e-12, psd_tol: float = -1e-10) -> bool:
    """Symmetric, finite and positive semidefinite up to tolerance."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1] or not np.all(np.isfinite(c)):
        return False
    if np.max(np.abs(c - c.T), initial=0.0) > sym_tol:
        return False
    return bool(np.linalg.eigvalsh(c).min(initial=0.0) >= psd_tol)


def pooled(groups: Sequence) -> np.ndarray:
    return np.concatenate(_group_arrays(groups), axis=0)
