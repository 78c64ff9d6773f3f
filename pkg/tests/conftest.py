import numpy as np
import pytest

from genre_align.core import Dataset, EmbeddingRecord


def central_difference(func, X, step=1e-5):
    """Numerical gradient of scalar ``func`` at ``X`` by central differences."""
    X = np.array(X, dtype=np.float64)
    grad = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        orig = X[idx]
        X[idx] = orig + step
        f_plus = func(X)
        X[idx] = orig - step
        f_minus = func(X)
        X[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2 * step)
    return grad


def max_rel_error(analytic, numeric):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric)), initial=0.0))


def make_grid_dataset(speakers=4, genres=("a", "b"), utts=3, dim=3, seed=0):
    rng = np.random.default_rng(seed)
    records = []
    for s in range(speakers):
        for g in genres:
            for u in range(utts):
                records.append(EmbeddingRecord(f"s{s}-{g}-{u}", f"s{s}", g, rng.normal(size=dim)))
    return Dataset(dim, records)


@pytest.fixture
def small_ds():
    return make_grid_dataset()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def brute_force_eer(scores, targets):
    """Loop-based EER: FAR/FRR at every unique score and +inf, interpolated at the first sign flip."""
    scores = [float(s) for s in scores]
    targets = [bool(t) for t in targets]
    n_tar = sum(targets)
    n_non = len(targets) - n_tar
    points = []
    for t in sorted(set(scores)) + [float("inf")]:
        fa = sum(1 for s, y in zip(scores, targets) if not y and s >= t)
        fr = sum(1 for s, y in zip(scores, targets) if y and s < t)
        points.append((fa / n_non, fr / n_tar))
    for k, (far, frr) in enumerate(points):
        if far - frr <= 0:
            if far - frr == 0:
                return 100.0 * far
            far0, frr0 = points[k - 1]
            w = (far0 - frr0) / ((far0 - frr0) - (far - frr))
            return 100.0 * (far0 + w * (far - far0))
    raise AssertionError("FAR never drops below FRR")
