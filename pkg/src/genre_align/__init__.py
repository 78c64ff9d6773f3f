"""Multi-genre distribution alignment for speaker embeddings."""

from .core import (
    ConfigError,
    Dataset,
    DegenerateCovarianceError,
    DivergenceError,
    EmbeddingRecord,
    GenreAlignError,
    LossOutput,
    MiniBatch,
    SamplingInfeasibleError,
    TrialConstructionError,
    dataset_validate,
)
from .estimator import GenreAlignedEmbedder
from .evaluation import EerMatrix, compute_eer, cosine_score, cross_genre_matrix
from .io import SynthConfig, generate_dataset, load_dataset, save_dataset
from .losses import DEFAULT_LAMBDA, DaConfig, center_loss, coral_loss, mmd_loss, wbda_loss
from .sampler import SamplerConfig
from .trainer import ProjectionModel, TrainConfig, train

__version__ = "0.1.0"
