"""Small projection network trained with a speaker classification loss plus a DA regularizer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ConfigError, Dataset, DegenerateCovarianceError, DivergenceError, LossOutput
from .io import FormatError, ParseError
from .losses import GENRE_PAIR_METHODS, DaConfig, combined_loss, da_loss
from .sampler import BatchSampler, SamplerConfig

LOSS_KINDS = ("softmax_ce", "aam_softmax")
ACTIVATIONS = {
    "tanh": (np.tanh, lambda out: 1.0 - out ** 2),
    "relu": (lambda z: np.maximum(z, 0.0), lambda out: (out > 0).astype(float)),
}
_COS_CLIP = 1.0 - 1e-7


@dataclass
class ProjectionModel:
    """Affine layers with a nonlinearity between them, plus a speaker classification head.

    ``weights[k]`` has shape ``(out, in)``. ``class_weights`` has one row per
    entry of ``speakers``.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    class_weights: np.ndarray
    speakers: tuple[str, ...] = ()
    activation: str = "tanh"
    loss_kind: str = "aam_softmax"

    def __post_init__(self):
        if not 1 <= len(self.weights) <= 2 or len(self.weights) != len(self.biases):
            raise ValueError("model needs one or two affine layers")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        for k in range(1, len(self.weights)):
            if self.weights[k].shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError("layer shapes do not chain")
        if self.class_weights.shape[1] != self.dim:
            raise ValueError("class_weights columns must equal the embedding dimension")
        if self.speakers and len(self.speakers) != self.class_weights.shape[0]:
            raise ValueError("one class row per speaker required")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def hidden(self) -> int:
        return self.weights[0].shape[0] if len(self.weights) == 2 else 0

    @classmethod
    def init(cls, d_in: int, d: int, speakers: Sequence[str], hidden: int = 0,
             seed: int = 0, activation: str = "tanh", loss_kind: str = "aam_softmax"):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization from ``seed``."""
        rng = np.random.default_rng(seed)
        dims = [d_in, hidden, d] if hidden else [d_in, d]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        bound = 1.0 / math.sqrt(d)
        head = rng.uniform(-bound, bound, size=(len(speakers), d))
        return cls(weights, biases, head, tuple(speakers), activation, loss_kind)

    @classmethod
    def identity(cls, d: int, speakers: Sequence[str] = ("s0",)):
        return cls([np.eye(d)], [np.zeros(d)], np.zeros((len(speakers), d)), tuple(speakers))

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases, self.class_weights]

    def copy(self) -> "ProjectionModel":
        return ProjectionModel([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                               self.class_weights.copy(), self.speakers, self.activation, self.loss_kind)

    def equals(self, other: "ProjectionModel") -> bool:
        return (self.speakers == other.speakers and self.activation == other.activation
                and self.loss_kind == other.loss_kind
                and len(self.params()) == len(other.params())
                and all(a.shape == b.shape and np.array_equal(a, b)
                        for a, b in zip(self.params(), other.params())))


def _forward(model: ProjectionModel, X: np.ndarray):
    act, _ = ACTIVATIONS[model.activation]
    outs = [X]
    h = X
    last = len(model.weights) - 1
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ W.T + b
        if k < last:
            h = act(h)
        outs.append(h)
    return h, outs


def forward(model: ProjectionModel, inputs) -> np.ndarray:
    X = np.asarray(inputs, dtype=np.float64)
    squeeze = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[-1] != model.input_dim:
        raise ValueError(f"input dimension {X.shape[-1]} != model input dimension {model.input_dim}")
    out, _ = _forward(model, X.reshape(-1, model.input_dim))
    out = out.reshape(*X.shape[:-1], model.dim)
    return out[0] if squeeze else out


def _backward(model: ProjectionModel, outs, grad_out: np.ndarray):
    _, dact = ACTIVATIONS[model.activation]
    n_layers = len(model.weights)
    gW = [None] * n_layers
    gb = [None] * n_layers
    g = grad_out
    for k in reversed(range(n_layers)):
        if k < n_layers - 1:
            g = g * dact(outs[k + 1])
        gW[k] = g.T @ outs[k]
        gb[k] = g.sum(axis=0)
        g = g @ model.weights[k]
    return gW, gb


def _normalize_backward(unit: np.ndarray, norm: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    dot = np.sum(unit * grad_unit, axis=1, keepdims=True)
    return (grad_unit - unit * dot) / norm


def classification_loss(embeddings, labels, class_weights, kind: str = "aam_softmax",
                        m: float = 0.2, s: float = 30.0) -> LossOutput:
    """Mean speaker classification loss over the batch.

    ``softmax_ce`` uses logits ``class_weights @ x``. ``aam_softmax`` normalizes
    embeddings and class rows and uses ``s*cos(theta_y + m)`` for the target
    class and ``s*cos(theta_c)`` otherwise. Gradients are returned for
    ``(embeddings, class_weights)``.
    """
    if isinstance(class_weights, ProjectionModel):
        class_weights = class_weights.class_weights
    E = np.asarray(embeddings, dtype=np.float64)
    Wc = np.asarray(class_weights, dtype=np.float64)
    y = np.asarray(labels)
    n, C = len(E), Wc.shape[0]
    if y.shape != (n,) or not np.issubdtype(y.dtype, np.integer) or np.any((y < 0) | (y >= C)):
        raise ValueError(f"labels must be integers in [0, {C})")
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    rows = np.arange(n)

    if kind == "softmax_ce":
        logits = E @ Wc.T
    else:
        if not s > 0:
            raise ValueError("aam_softmax needs s > 0")
        e_norm = np.linalg.norm(E, axis=1, keepdims=True)
        w_norm = np.linalg.norm(Wc, axis=1, keepdims=True)
        En, Wn = E / e_norm, Wc / w_norm
        cos = En @ Wn.T
        logits = s * cos
        ct = np.clip(cos[rows, y], -_COS_CLIP, _COS_CLIP)
        sin_t = np.sqrt(1.0 - ct ** 2)
        logits[rows, y] = s * (ct * math.cos(m) - sin_t * math.sin(m))

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    value = float(np.mean(log_z - shifted[rows, y]))
    grad_logits = np.exp(shifted - log_z[:, None])
    grad_logits[rows, y] -= 1.0
    grad_logits /= n

    if kind == "softmax_ce":
        return LossOutput(max(value, 0.0), (grad_logits @ Wc, grad_logits.T @ E))

    grad_cos = s * grad_logits
    grad_cos[rows, y] *= math.cos(m) + ct * math.sin(m) / sin_t
    gE = _normalize_backward(En, e_norm, grad_cos @ Wn)
    gW = _normalize_backward(Wn, w_norm, grad_cos.T @ En)
    return LossOutput(max(value, 0.0), (gE, gW))


@dataclass(frozen=True)
class TrainConfig:
    da: DaConfig = field(default_factory=DaConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    steps: int = 2000
    learning_rate: float = 0.05
    margin: float = 0.2
    scale: float = 30.0
    loss_kind: str = "aam_softmax"
    seed: int = 0
    embed_dim: int | None = None
    hidden: int = 64
    activation: str = "tanh"

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 0:
            raise ConfigError("steps", f"must be a non-negative integer, got {self.steps}")
        if not (np.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ConfigError("learning_rate", f"must be non-negative, got {self.learning_rate}")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError("loss_kind", f"must be one of {LOSS_KINDS}")
        if not self.margin >= 0:
            raise ConfigError("margin", f"must be >= 0, got {self.margin}")
        if self.loss_kind == "aam_softmax" and not self.scale > 0:
            raise ConfigError("scale", f"must be > 0, got {self.scale}")
        if self.hidden < 0 or int(self.hidden) != self.hidden:
            raise ConfigError("hidden", "must be a non-negative integer (0 = single layer)")
        if self.embed_dim is not None and self.embed_dim < 1:
            raise ConfigError("embed_dim", "must be positive")
        if self.activation not in ACTIVATIONS:
            raise ConfigError("activation", f"must be one of {tuple(ACTIVATIONS)}")
        if self.da.method in ("wbda", "wda", "bda") and (self.sampler.S < 2 or self.sampler.M < 2):
            raise ConfigError("sampler", f"{self.da.method} needs S >= 2 and M >= 2")

    def sampler_for_method(self) -> SamplerConfig:
        method = self.da.method
        if method in GENRE_PAIR_METHODS:
            mode = "genre_pair"
        elif method == "center":
            mode = "speaker_only"
        else:
            mode = self.sampler.mode
        return SamplerConfig(self.sampler.S, self.sampler.M, self.sampler.seed, mode)


@dataclass(frozen=True)
class StepRecord:
    step: int
    ce: float
    da: float
    total: float


def initial_model(ds: Dataset, cfg: TrainConfig) -> ProjectionModel:
    return ProjectionModel.init(ds.dim, cfg.embed_dim or ds.dim, sorted(ds.speakers),
                                hidden=cfg.hidden, seed=cfg.seed,
                                activation=cfg.activation, loss_kind=cfg.loss_kind)


def train(ds: Dataset, cfg: TrainConfig, model: ProjectionModel | None = None):
    """Plain gradient descent on ``CE + lambda * DA``, one minibatch per step.

    Returns the trained model and the per-step loss history.
    """
    model = initial_model(ds, cfg) if model is None else model.copy()
    lam = cfg.da.effective_lambda
    label_of = {s: i for i, s in enumerate(model.speakers)}
    sampler = BatchSampler(ds, cfg.sampler_for_method()) if cfg.steps else None
    history: list[StepRecord] = []
    lr = cfg.learning_rate

    for step in range(cfg.steps):
        batch = sampler.batch(step)
        X = batch.vectors.reshape(-1, ds.dim)
        labels = np.array([label_of[s] for s in batch.flat_speakers()])
        E, outs = _forward(model, X)
        ce = classification_loss(E, labels, model.class_weights, cfg.loss_kind, cfg.margin, cfg.scale)
        if cfg.da.method == "none":
            da = LossOutput(0.0, (np.zeros_like(E),))
        else:
            try:
                out = da_loss(batch.with_vectors(E.reshape(*batch.vectors.shape[:3], -1)), cfg.da)
            except (FloatingPointError, DegenerateCovarianceError) as exc:
                raise DivergenceError(step, str(exc)) from exc
            da = LossOutput(out.value, (out.grad.reshape(E.shape),))
        total = ce.value + lam * da.value
        history.append(StepRecord(step, ce.value, da.value, total))
        if not np.isfinite(total):
            raise DivergenceError(step, f"non-finite loss (ce={ce.value}, da={da.value})")

        grad_E = combined_loss(LossOutput(ce.value, (ce.grads[0],)), da, lam).grad
        gW, gb = _backward(model, outs, grad_E)
        grads = [*gW, *gb, ce.grads[1]]
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise DivergenceError(step, "non-finite gradient")
        if lr:
            for p, g in zip(model.params(), grads):
                p -= lr * g
    return model, history


# -- checkpoint file -------------------------------------------------------------

CHECKPOINT_MAGIC = "#genre-align-checkpoint v1"


def format_checkpoint(model: ProjectionModel) -> str:
    lines = [
        CHECKPOINT_MAGIC,
        f"#d_in={model.input_dim}",
        f"#hidden={model.hidden}",
        f"#d={model.dim}",
        f"#num_speakers={model.class_weights.shape[0]}",
        f"#loss_kind={model.loss_kind}",
        f"#activation={model.activation}",
        f"speakers\t{len(model.speakers)}",
        *model.speakers,
    ]
    names = [f"W{k}" for k in range(len(model.weights))] + \
            [f"b{k}" for k in range(len(model.biases))] + ["C"]
    for name, mat in zip(names, model.params()):
        mat2 = np.atleast_2d(mat)
        lines.append(f"{name}\t{mat2.shape[0]}\t{mat2.shape[1]}")
        lines.extend("\t".join(map(repr, row.tolist())) for row in mat2)
    return "\n".join(lines) + "\n"


def save_checkpoint(model: ProjectionModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_checkpoint(model))


def parse_checkpoint(text: str) -> ProjectionModel:
    lines = text.splitlines()
    if not lines or lines[0].strip() != CHECKPOINT_MAGIC:
        raise FormatError("missing checkpoint header")
    meta = {}
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        key, _, value = lines[i][1:].partition("=")
        meta[key] = value
        i += 1
    try:
        n_layers = 2 if int(meta["hidden"]) else 1
        kind, activation = meta["loss_kind"], meta["activation"]
        head, count = lines[i].split("\t")
        if head != "speakers":
            raise ParseError(i + 1, "expected speakers block")
        speakers = tuple(lines[i + 1:i + 1 + int(count)])
        i += 1 + int(count)
        mats = {}
        while i < len(lines):
            if not lines[i].strip():
                i += 1
                continue
            name, r, c = lines[i].split("\t")
            r, c = int(r), int(c)
            rows = [[float(v) for v in ln.split()] for ln in lines[i + 1:i + 1 + r]]
            if len(rows) != r or any(len(row) != c for row in rows):
                raise ParseError(i + 1, f"matrix {name} does not have shape {r}x{c}")
            mats[name] = np.array(rows, dtype=np.float64).reshape(r, c)
            i += 1 + r
        weights = [mats[f"W{k}"] for k in range(n_layers)]
        biases = [mats[f"b{k}"].reshape(-1) for k in range(n_layers)]
        return ProjectionModel(weights, biases, mats["C"], speakers, activation, kind)
    except (KeyError, ValueError, IndexError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed checkpoint: {exc!r}") from None


def load_checkpoint(path) -> ProjectionModel:
    with open(path, encoding="utf-8") as fh:
        return parse_checkpoint(fh.read())


def format_history(history: Sequence[StepRecord]) -> str:
    lines = ["step,ce,da,total"]
    lines.extend(f"{h.step},{h.ce!r},{h.da!r},{h.total!r}" for h in history)
    return "\n".join(lines) + "\n"
