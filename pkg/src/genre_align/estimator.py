"""scikit-learn style wrapper around the trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .core import Dataset
from .evaluation import EerMatrix, cross_genre_matrix
from .losses import DaConfig
from .sampler import SamplerConfig
from .trainer import TrainConfig, forward, train


class GenreAlignedEmbedder(TransformerMixin, BaseEstimator):
    """Learn a speaker embedding whose genre distributions are aligned.

    ``fit(X, y, genres=...)`` trains a small projection network with a speaker
    classification loss plus the regularizer named by ``method``;
    ``transform`` maps input vectors to embeddings.

    Parameters
    ----------
    method : {"none", "coral", "mmd", "center", "wda", "bda", "wbda"}
    lam : float or None
        Regularizer weight. ``None`` uses the method's default.
    alpha, beta : float
        Within- and between-class weights for the wbda family.
    sigma : float or "median"
        RBF width for ``mmd``.
    speakers_per_genre, utts_per_speaker : int
        Batch shape (S, M).
    """

    def __init__(self, method="none", lam=None, alpha=0.5, beta=0.5, sigma="median",
                 steps=2000, learning_rate=0.05, loss_kind="aam_softmax", margin=0.2,
                 scale=30.0, hidden=64, embed_dim=None, activation="tanh",
                 speakers_per_genre=8, utts_per_speaker=4, sampler_mode="genre_pair",
                 random_state=0):
        self.method = method
        self.lam = lam
        self.alpha = alpha
        self.beta = beta
        self.sigma = sigma
        self.steps = steps
        self.learning_rate = learning_rate
        self.loss_kind = loss_kind
        self.margin = margin
        self.scale = scale
        self.hidden = hidden
        self.embed_dim = embed_dim
        self.activation = activation
        self.speakers_per_genre = speakers_per_genre
        self.utts_per_speaker = utts_per_speaker
        self.sampler_mode = sampler_mode
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        seed = 0 if self.random_state is None else int(self.random_state)
        return TrainConfig(
            da=DaConfig(self.method, self.lam, self.alpha, self.beta, self.sigma),
            sampler=SamplerConfig(self.speakers_per_genre, self.utts_per_speaker, seed, self.sampler_mode),
            steps=self.steps, learning_rate=self.learning_rate, margin=self.margin,
            scale=self.scale, loss_kind=self.loss_kind, seed=seed, embed_dim=self.embed_dim,
            hidden=self.hidden, activation=self.activation)

    def fit(self, X, y, genres=None):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y).astype(str)
        if genres is None:
            raise ValueError("genres is required: one genre label per row of X")
        genres = np.asarray(genres).astype(str)
        if not len(X) == len(y) == len(genres):
            raise ValueError("X, y and genres must have the same number of rows")
        ds = Dataset.from_arrays(X, y, genres)
        self.model_, history = train(ds, self._train_config())
        self.history_ = history
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array(self.model_.speakers)
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return forward(self.model_, X)

    def cross_genre_eer(self, X, y, genres, enroll_k=3, seed=0) -> EerMatrix:
        """Cross-genre EER matrix of the fitted embedding on labeled data."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        ds = Dataset.from_arrays(X, np.asarray(y).astype(str), np.asarray(genres).astype(str))
        return cross_genre_matrix(self.model_, ds, enroll_k=enroll_k, seed=seed)

    def score(self, X, y, genres=None):
        """Negative mean cross-genre EER (higher is better), for model selection."""
        if genres is None:
            raise ValueError("genres is required")
        return -self.cross_genre_eer(X, y, genres).mean_off_diagonal()
