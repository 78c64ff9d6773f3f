"""Data model shared by every stage: embedding records, datasets, batches, loss values."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

MIXED_GENRE = "*mixed*"


class GenreAlignError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GenreAlignError, ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class DegenerateCovarianceError(GenreAlignError, ValueError):
    pass


class SamplingInfeasibleError(GenreAlignError, ValueError):
    pass


class TrialConstructionError(GenreAlignError, ValueError):
    pass


class DivergenceError(GenreAlignError, FloatingPointError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True, eq=False)
class EmbeddingRecord:
    utt_id: str
    speaker: str
    genre: str
    vector: np.ndarray

    def __post_init__(self):
        vec = np.array(self.vector, dtype=np.float64)
        vec.flags.writeable = False
        object.__setattr__(self, "vector", vec)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingRecord):
            return NotImplemented
        return (
            self.utt_id == other.utt_id
            and self.speaker == other.speaker
            and self.genre == other.genre
            and self.vector.shape == other.vector.shape
            and np.array_equal(self.vector, other.vector)
        )


class Dataset:
    """Immutable, indexed collection of :class:`EmbeddingRecord`.

    Construction does not enforce the invariants; call :func:`dataset_validate`
    (loaders do) to get a list of violations.
    """

    def __init__(self, dim: int, records: Iterable[EmbeddingRecord]):
        self._dim = int(dim)
        self._records = tuple(records)
        spk: dict[str, list[int]] = {}
        gen: dict[str, list[int]] = {}
        for pos, rec in enumerate(self._records):
            spk.setdefault(rec.speaker, []).append(pos)
            gen.setdefault(rec.genre, []).append(pos)
        self._speaker_index = {k: tuple(v) for k, v in spk.items()}
        self._genre_index = {k: tuple(v) for k, v in gen.items()}

    @classmethod
    def from_arrays(cls, vectors, speakers: Sequence[str], genres: Sequence[str],
                    utt_ids: Sequence[str] | None = None) -> "Dataset":
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise ValueError("vectors must be a 2-D array")
        if utt_ids is None:
            utt_ids = [f"u{i:06d}" for i in range(len(vectors))]
        if not (len(vectors) == len(speakers) == len(genres) == len(utt_ids)):
            raise ValueError("vectors, speakers, genres and utt_ids must have equal length")
        recs = (EmbeddingRecord(str(u), str(s), str(g), v)
                for u, s, g, v in zip(utt_ids, speakers, genres, vectors))
        return cls(vectors.shape[1], recs)

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def records(self) -> tuple[EmbeddingRecord, ...]:
        return self._records

    @property
    def speaker_index(self) -> Mapping[str, tuple[int, ...]]:
        return self._speaker_index

    @property
    def genre_index(self) -> Mapping[str, tuple[int, ...]]:
        return self._genre_index

    @property
    def speakers(self) -> list[str]:
        return list(self._speaker_index)

    @property
    def genres(self) -> list[str]:
        return list(self._genre_index)

    def __len__(self) -> int:
        return len(self._records)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self._dim == other._dim and self._records == other._records

    @cached_property
    def vectors(self) -> np.ndarray:
        """All vectors stacked row-wise (read-only)."""
        mat = np.stack([r.vector for r in self._records]) if self._records \
            else np.zeros((0, self._dim))
        mat.flags.writeable = False
        return mat

    @cached_property
    def utt_ids(self) -> np.ndarray:
        return np.array([r.utt_id for r in self._records], dtype=object)

    @cached_property
    def speaker_labels(self) -> np.ndarray:
        return np.array([r.speaker for r in self._records], dtype=object)

    @cached_property
    def genre_labels(self) -> np.ndarray:
        return np.array([r.genre for r in self._records], dtype=object)

    @cached_property
    def cell_index(self) -> Mapping[tuple[str, str], tuple[int, ...]]:
        """``(genre, speaker) -> positions``, in record order."""
        cells: dict[tuple[str, str], list[int]] = {}
        for pos, rec in enumerate(self._records):
            cells.setdefault((rec.genre, rec.speaker), []).append(pos)
        return {k: tuple(v) for k, v in cells.items()}

    def positions(self, speaker: str, genre: str | None = None) -> tuple[int, ...]:
        if genre is None:
            return self._speaker_index.get(speaker, ())
        return self.cell_index.get((genre, speaker), ())

    def subset(self, positions: Iterable[int]) -> "Dataset":
        return Dataset(self._dim, (self._records[p] for p in positions))

    def summary(self) -> str:
        return (f"{len(self._genre_index)} genres ({', '.join(self.genres)}), "
                f"{len(self._speaker_index)} speakers, {len(self)} utterances, dim={self._dim}")


def dataset_validate(ds: Dataset) -> list[str]:
    """Return a description of every invariant violation (empty if the dataset is well formed)."""
    problems = []
    if ds.dim <= 0:
        problems.append(f"dim must be positive, got {ds.dim}")
    if not ds.genre_index:
        problems.append("dataset has no genres")
    seen: dict[str, int] = {}
    for pos, rec in enumerate(ds.records):
        if rec.vector.ndim != 1 or rec.vector.shape[0] != ds.dim:
            problems.append(f"record {pos} ({rec.utt_id}): vector length "
                            f"{rec.vector.size} != dim {ds.dim}")
        elif not np.all(np.isfinite(rec.vector)):
            problems.append(f"record {pos} ({rec.utt_id}): non-finite vector component")
        if rec.utt_id in seen:
            problems.append(f"record {pos}: duplicate utt_id {rec.utt_id!r} "
                            f"(first at record {seen[rec.utt_id]})")
        else:
            seen[rec.utt_id] = pos
    for name, index, attr in (("speaker_index", ds.speaker_index, "speaker"),
                              ("genre_index", ds.genre_index, "genre")):
        covered = []
        for key, positions in index.items():
            if not positions:
                problems.append(f"{name}[{key!r}] is empty")
            for p in positions:
                if not 0 <= p < len(ds) or getattr(ds.records[p], attr) != key:
                    problems.append(f"{name}[{key!r}] has inconsistent entry {p}")
            covered.extend(positions)
        if sorted(covered) != list(range(len(ds))):
            problems.append(f"{name} does not cover every record exactly once")
    return problems


@dataclass(frozen=True, eq=False)
class MiniBatch:
    """A grouped sample of shape ``(groups, S, M, d)``.

    ``genres`` has two entries for genre-pair batches and the single entry
    :data:`MIXED_GENRE` for speaker batches.
    """

    genres: tuple[str, ...]
    speakers: tuple[tuple[str, ...], ...]
    utt_ids: np.ndarray
    vectors: np.ndarray
    positions: np.ndarray = field(default=None)

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=np.float64)
        if vec.ndim != 4:
            raise ValueError("vectors must have shape (groups, S, M, d)")
        if self.utt_ids.shape != vec.shape[:3]:
            raise ValueError("utt_ids shape must match vectors' leading axes")
        if len(self.genres) != vec.shape[0] or any(len(s) != vec.shape[1] for s in self.speakers):
            raise ValueError("genre/speaker labels do not match vector layout")
        object.__setattr__(self, "vectors", vec)

    @property
    def S(self) -> int:
        return self.vectors.shape[1]

    @property
    def M(self) -> int:
        return self.vectors.shape[2]

    @property
    def is_genre_pair(self) -> bool:
        return len(self.genres) == 2

    @property
    def groups(self) -> list[tuple[str, list[tuple[str, np.ndarray]]]]:
        return [(g, [(s, self.vectors[gi, si]) for si, s in enumerate(spks)])
                for gi, (g, spks) in enumerate(zip(self.genres, self.speakers))]

    def with_vectors(self, vectors) -> "MiniBatch":
        """Same layout and labels, different embedding values."""
        return MiniBatch(self.genres, self.speakers, self.utt_ids,
                         np.asarray(vectors).reshape(*self.vectors.shape[:3], -1), self.positions)

    def flat_speakers(self) -> np.ndarray:
        """Speaker label per utterance in ``vectors.reshape(-1, d)`` order."""
        return np.array([[[s] * self.M for s in spks] for spks in self.speakers],
                        dtype=object).reshape(-1)

    def keyed(self, grad: np.ndarray) -> dict[str, np.ndarray]:
        grad = np.asarray(grad).reshape(*self.utt_ids.shape, -1)
        return {u: grad[idx] for idx, u in np.ndenumerate(self.utt_ids)}


@dataclass(frozen=True)
class LossOutput:
    """A scalar loss and its gradient.

    ``grads`` holds one array per loss input, each shaped like that input.
    Use :meth:`MiniBatch.keyed` to get the per-utterance mapping.
    """

    value: float
    grads: tuple[np.ndarray, ...]

    @property
    def grad(self) -> np.ndarray:
        if len(self.grads) != 1:
            raise ValueError("loss has several inputs; use .grads")
        return self.grads[0]
