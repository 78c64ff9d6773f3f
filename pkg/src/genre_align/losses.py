"""Distribution-alignment regularizers with analytic gradients.

Every loss is a pure function of its inputs and returns a
:class:`~genre_align.core.LossOutput` whose gradients have the same shapes
as the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

import numpy as np
from scipy.spatial.distance import pdist

from . import stats
from .core import ConfigError, LossOutput, MiniBatch

METHODS = ("none", "coral", "mmd", "wbda", "wda", "bda", "center")

# Tuned regularizer weights per method.
DEFAULT_LAMBDA = {
    "none": 0.0,
    "coral": 0.1,
    "mmd": 0.8,
    "center": 0.1,
    "wda": 0.9,
    "bda": 0.03,
    "wbda": 0.9,
}

GENRE_PAIR_METHODS = frozenset({"coral", "mmd", "wbda", "wda", "bda"})

Sigma = Union[float, str]


@dataclass(frozen=True)
class DaConfig:
    method: str = "none"
    lam: float | None = None
    alpha: float = 0.5
    beta: float = 0.5
    sigma: Sigma = "median"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError("method", f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.lam is None:
            object.__setattr__(self, "lam", DEFAULT_LAMBDA[self.method])
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ConfigError("lambda", f"must be a non-negative real, got {self.lam}")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(name, f"must be a non-negative real, got {v}")
        if isinstance(self.sigma, str):
            if self.sigma != "median":
                raise ConfigError("sigma", f"must be a positive real or 'median', got {self.sigma!r}")
        elif not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ConfigError("sigma", f"must be positive, got {self.sigma}")

    @property
    def effective_lambda(self) -> float:
        return 0.0 if self.method == "none" else float(self.lam)

    @property
    def effective_weights(self) -> tuple[float, float]:
        """(alpha, beta) after the WDA/BDA ablations are applied."""
        if self.method == "wda":
            return self.alpha, 0.0
        if self.method == "bda":
            return 0.0, self.beta
        return self.alpha, self.beta

    def with_lambda(self, lam: float) -> "DaConfig":
        return replace(self, lam=lam)


def _pair(Xi, Xj, min_size: int) -> tuple[np.ndarray, np.ndarray]:
    Xi = np.asarray(Xi, dtype=np.float64)
    Xj = np.asarray(Xj, dtype=np.float64)
    if Xi.ndim != 2 or Xj.ndim != 2:
        raise ValueError("expected two lists of d-vectors")
    if Xi.shape[1] != Xj.shape[1]:
        raise ValueError(f"dimension mismatch: {Xi.shape[1]} vs {Xj.shape[1]}")
    if len(Xi) < min_size or len(Xj) < min_size:
        raise ValueError(f"each side needs at least {min_size} vector(s), "
                         f"got {len(Xi)} and {len(Xj)}")
    return Xi, Xj


def coral_loss(Xi, Xj) -> LossOutput:
    """Squared Frobenius distance of the two covariances, scaled by ``1/(4 d^2)``."""
    Xi, Xj = _pair(Xi, Xj, 2)
    d = Xi.shape[1]
    diff = stats.covariance(Xi) - stats.covariance(Xj)
    scale = 1.0 / (4.0 * d * d)
    g = 2.0 * scale * diff
    return LossOutput(scale * float(np.sum(diff ** 2)),
                      (stats.covariance_backward(Xi, g), stats.covariance_backward(Xj, -g)))


def rbf_kernel(x, y, sigma: float) -> float:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(np.exp(-np.sum((x - y) ** 2) / (2.0 * sigma * sigma)))


def _sqdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def median_sigma(Xi, Xj) -> float:
    """Median pairwise Euclidean distance over the union; 1.0 if that is zero."""
    union = np.concatenate([np.asarray(Xi, float), np.asarray(Xj, float)])
    if len(union) < 2:
        return 1.0
    med = float(np.median(pdist(union)))
    return med if med > 0 else 1.0


def mmd_loss(Xi, Xj, sigma: Sigma = "median") -> LossOutput:
    """Biased squared MMD with an RBF kernel.

    Self-pairs are included. ``sigma="median"`` picks the median pairwise
    distance of the batch and holds it fixed for the gradient.
    """
    Xi, Xj = _pair(Xi, Xj, 1)
    if isinstance(sigma, str):
        if sigma != "median":
            raise ValueError(f"unknown sigma rule {sigma!r}")
        sigma = median_sigma(Xi, Xj)
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    n, m = len(Xi), len(Xj)
    inv = 1.0 / (2.0 * sigma * sigma)
    Kxx = np.exp(-_sqdist(Xi, Xi) * inv)
    Kyy = np.exp(-_sqdist(Xj, Xj) * inv)
    Kxy = np.exp(-_sqdist(Xi, Xj) * inv)
    value = Kxx.sum() / n ** 2 - 2.0 * Kxy.sum() / (n * m) + Kyy.sum() / m ** 2

    # d k(a, b) / d a = -k(a, b) (a - b) / sigma^2
    def pull(K, A, B):
        return (K.sum(axis=1)[:, None] * A - K @ B) / (sigma * sigma)

    gi = -2.0 * pull(Kxx, Xi, Xi) / n ** 2 + 2.0 * pull(Kxy, Xi, Xj) / (n * m)
    gj = -2.0 * pull(Kyy, Xj, Xj) / m ** 2 + 2.0 * pull(Kxy.T, Xj, Xi) / (n * m)
    return LossOutput(float(value), (gi, gj))


def _batch_array(batch) -> np.ndarray:
    if isinstance(batch, MiniBatch):
        return batch.vectors
    return np.asarray(batch, dtype=np.float64)


def wbda_loss(batch, alpha: float = 0.5, beta: float = 0.5) -> LossOutput:
    """Within/between correlation alignment for a genre-pair batch.

    ``batch`` is a :class:`MiniBatch` or an array of shape ``(2, S, M, d)``.
    The gradient has the batch's shape.
    """
    V = _batch_array(batch)
    if V.ndim != 4 or V.shape[0] != 2:
        raise ValueError("wbda_loss needs a genre-pair batch of shape (2, S, M, d)")
    if V.shape[1] < 2 or V.shape[2] < 2:
        raise ValueError(f"wbda_loss needs S >= 2 and M >= 2, got S={V.shape[1]}, M={V.shape[2]}")
    covs = [stats.within_between(V[g]) for g in range(2)]
    corrs = [(stats.to_correlation(W), stats.to_correlation(B)) for W, B in covs]
    dW = corrs[0][0] - corrs[1][0]
    dB = corrs[0][1] - corrs[1][1]
    value = alpha * float(np.sum(dW ** 2)) + beta * float(np.sum(dB ** 2))

    grad = np.zeros_like(V)
    for g, sign in ((0, 1.0), (1, -1.0)):
        W, B = covs[g]
        gW = stats.to_correlation_backward(W, sign * 2.0 * alpha * dW)
        gB = stats.to_correlation_backward(B, sign * 2.0 * beta * dB)
        grad[g] = np.stack(stats.within_between_backward(V[g], gW, gB))
    return LossOutput(value, (grad,))


def center_loss(batch) -> LossOutput:
    """Mean squared distance of each utterance to its in-batch speaker center.

    ``batch`` is a :class:`MiniBatch` or an array of shape ``(..., S, M, d)``;
    centers are taken over the M axis. The gradient includes the centers'
    dependence on the batch, although it cancels: rows around a mean sum to zero.
    """
    V = _batch_array(batch)
    if V.ndim < 3:
        raise ValueError("center_loss needs an array of shape (..., S, M, d)")
    n = int(np.prod(V.shape[:-1]))
    centered = V - V.mean(axis=-2, keepdims=True)
    return LossOutput(float(np.sum(centered ** 2)) / n, (2.0 * centered / n,))


def da_loss(batch: MiniBatch, cfg: DaConfig) -> LossOutput:
    """Regularizer selected by ``cfg.method`` evaluated on a batch (unweighted by lambda)."""
    V = batch.vectors
    if cfg.method == "none":
        return LossOutput(0.0, (np.zeros_like(V),))
    if cfg.method == "center":
        return center_loss(V)
    if not batch.is_genre_pair:
        raise ValueError(f"method {cfg.method!r} needs a genre-pair batch")
    if cfg.method in ("wbda", "wda", "bda"):
        alpha, beta = cfg.effective_weights
        return wbda_loss(V, alpha, beta)
    d = V.shape[-1]
    Xi, Xj = V[0].reshape(-1, d), V[1].reshape(-1, d)
    out = coral_loss(Xi, Xj) if cfg.method == "coral" else mmd_loss(Xi, Xj, cfg.sigma)
    grad = np.stack([out.grads[0].reshape(V.shape[1:]), out.grads[1].reshape(V.shape[1:])])
    return LossOutput(out.value, (grad,))


def combined_loss(ce: LossOutput, da: LossOutput, lam: float) -> LossOutput:
    """``ce + lam * da``, gradients summed input by input."""
    if len(ce.grads) != len(da.grads):
        raise ValueError("ce and da losses must have the same inputs")
    grads = tuple(gc + lam * gd for gc, gd in zip(ce.grads, da.grads))
    return LossOutput(ce.value + lam * da.value, grads)
