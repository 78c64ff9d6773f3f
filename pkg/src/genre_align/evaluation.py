"""Verification scoring: cosine scores, EER, cross-genre trials and the genre x genre EER matrix."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .core import Dataset, TrialConstructionError
from .trainer import ProjectionModel, forward

ALL_COLUMN = "all"


class NoTargetTrialsWarning(UserWarning):
    pass


def cosine_score(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine score undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _check_scores(scores, targets):
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=bool)
    if scores.shape != targets.shape or scores.ndim != 1:
        raise ValueError("scores and targets must be 1-D and of equal length")
    if targets.all() or not targets.any():
        raise ValueError("EER needs at least one target and one non-target trial")
    return scores, targets


def error_rates(scores, targets):
    """False-accept and false-reject rates at every unique score threshold, plus +inf.

    A trial is accepted when its score is ``>= threshold``.
    """
    scores, targets = _check_scores(scores, targets)
    tar = np.sort(scores[targets])
    non = np.sort(scores[~targets])
    thresholds = np.append(np.unique(scores), np.inf)
    far = (non.size - np.searchsorted(non, thresholds, side="left")) / non.size
    frr = np.searchsorted(tar, thresholds, side="left") / tar.size
    return thresholds, far, frr


def interpolate_eer(far: np.ndarray, frr: np.ndarray) -> float:
    """Crossing point of FAR and FRR, linearly interpolated, in percent.

    ``far`` must be non-increasing and ``frr`` non-decreasing, starting with
    FAR >= FRR and ending with FAR <= FRR.
    """
    diff = far - frr
    k = int(np.argmax(diff <= 0))
    if diff[k] == 0:
        return 100.0 * float(far[k])
    w = diff[k - 1] / (diff[k - 1] - diff[k])
    return 100.0 * float(far[k - 1] + w * (far[k] - far[k - 1]))


def compute_eer(scores, targets) -> float:
    """Equal error rate in percent. Tied scores are all accepted at their threshold."""
    _, far, frr = error_rates(scores, targets)
    return interpolate_eer(far, frr)


@dataclass(frozen=True)
class Trial:
    enroll_utts: tuple[str, ...]
    test_utt: str
    target: bool

    def __post_init__(self):
        if not self.enroll_utts:
            raise ValueError("enrollment must contain at least one utterance")
        if self.test_utt in self.enroll_utts:
            raise ValueError(f"test utterance {self.test_utt!r} is also used for enrollment")


def build_cross_genre_trials(ds: Dataset, enroll_genre: str, test_genre: str, enroll_k: int = 3,
                             max_nontargets_per_test: int = 50, seed: int = 0) -> list[Trial]:
    """Trials enrolling on ``enroll_genre`` and testing on ``test_genre``.

    Every speaker with at least ``enroll_k`` utterances in the enrollment genre
    and one in the test genre is enrolled with ``enroll_k`` random utterances.
    Targets are all of that speaker's remaining test-genre utterances;
    non-targets are at most ``max_nontargets_per_test`` random test-genre
    utterances of other speakers. Enrollment draws depend only on
    ``(seed, enroll_genre)`` so a row of the EER matrix shares its enrollments.
    """
    for g in (enroll_genre, test_genre):
        if g not in ds.genre_index:
            raise TrialConstructionError(f"genre {g!r} not in dataset")
    if enroll_k < 1 or max_nontargets_per_test < 1:
        raise ValueError("enroll_k and max_nontargets_per_test must be positive")
    enroll_rng = np.random.default_rng([seed, 0])
    nontarget_rng = np.random.default_rng([seed, 1])
    test_positions = np.array(ds.genre_index[test_genre])
    test_speakers = ds.speaker_labels[test_positions]
    utt = ds.utt_ids

    trials: list[Trial] = []
    n_enrolled = 0
    for spk in ds.speakers:
        cell = ds.positions(spk, enroll_genre)
        if len(cell) < enroll_k:
            continue
        enroll = np.asarray(cell)[enroll_rng.choice(len(cell), size=enroll_k, replace=False)]
        if not len(ds.positions(spk, test_genre)):
            continue
        n_enrolled += 1
        enroll_ids = tuple(utt[enroll])
        used = set(enroll.tolist())
        for p in ds.positions(spk, test_genre):
            if p not in used:
                trials.append(Trial(enroll_ids, utt[p], True))
        others = test_positions[test_speakers != spk]
        if len(others) > max_nontargets_per_test:
            others = np.sort(nontarget_rng.choice(others, size=max_nontargets_per_test, replace=False))
        trials.extend(Trial(enroll_ids, utt[p], False) for p in others)

    if not n_enrolled:
        enroll_counts = sum(len(ds.positions(s, enroll_genre)) >= enroll_k for s in ds.speakers)
        test_counts = sum(len(ds.positions(s, test_genre)) >= 1 for s in ds.speakers)
        raise TrialConstructionError(
            f"no eligible speakers: {enroll_counts} speaker(s) with >= {enroll_k} utterances "
            f"in {enroll_genre!r}, {test_counts} with >= 1 utterance in {test_genre!r}")
    if not any(t.target for t in trials):
        warnings.warn(f"{enroll_genre!r} -> {test_genre!r}: no target trials remain after "
                      "excluding enrollment utterances", NoTargetTrialsWarning, stacklevel=2)
    return trials


Embedder = Union[ProjectionModel, Callable[[np.ndarray], np.ndarray], None]


def embed(model: Embedder, X: np.ndarray) -> np.ndarray:
    if model is None:
        return np.asarray(X, dtype=np.float64)
    if isinstance(model, ProjectionModel):
        return forward(model, X)
    return np.asarray(model(X), dtype=np.float64)


def score_trials(trials: Sequence[Trial], embeddings: np.ndarray, ds: Dataset) -> np.ndarray:
    """Cosine score of each trial: mean enrollment embedding against the test embedding."""
    pos = {u: i for i, u in enumerate(ds.utt_ids)}
    norms = np.linalg.norm(embeddings, axis=1)
    if np.any(norms == 0):
        raise ValueError("cosine score undefined for a zero embedding")
    enroll_cache: dict[tuple[str, ...], np.ndarray] = {}
    scores = np.empty(len(trials))
    for i, t in enumerate(trials):
        e = enroll_cache.get(t.enroll_utts)
        if e is None:
            e = embeddings[[pos[u] for u in t.enroll_utts]].mean(axis=0)
            enroll_cache[t.enroll_utts] = e
        scores[i] = cosine_score(e, embeddings[pos[t.test_utt]])
    return scores


@dataclass
class EerMatrix:
    """EER percentages: rows are enrollment genres, columns are test genres plus ``all``."""

    genres: list[str]
    cells: np.ndarray
    trial_counts: np.ndarray | None = None

    def __post_init__(self):
        self.genres = list(self.genres)
        self.cells = np.asarray(self.cells, dtype=np.float64)
        G = len(self.genres)
        if self.cells.shape != (G, G + 1):
            raise ValueError(f"cells must have shape ({G}, {G + 1}), got {self.cells.shape}")

    @property
    def columns(self) -> list[str]:
        return [*self.genres, ALL_COLUMN]

    def cell(self, enroll_genre: str, test_genre: str) -> float:
        return float(self.cells[self.genres.index(enroll_genre), self.columns.index(test_genre)])

    def mean_off_diagonal(self) -> float:
        G = len(self.genres)
        if G < 2:
            raise ValueError("need at least two genres for cross-genre cells")
        block = self.cells[:, :G]
        return float(block[~np.eye(G, dtype=bool)].mean())

    def mean_diagonal(self) -> float:
        return float(np.diag(self.cells[:, :len(self.genres)]).mean())

    def __eq__(self, other):
        if not isinstance(other, EerMatrix):
            return NotImplemented
        return self.genres == other.genres and np.array_equal(self.cells, other.cells)


def cross_genre_matrix(model: Embedder, ds: Dataset, genres: Sequence[str] | None = None,
                       enroll_k: int = 3, seed: int = 0,
                       max_nontargets_per_test: int = 50) -> EerMatrix:
    """Genre x genre EER matrix; the last column pools each row's trials over all test genres.

    ``model=None`` scores the raw dataset vectors.
    """
    genres = list(ds.genres if genres is None else genres)
    missing = [g for g in genres if g not in ds.genre_index]
    if missing:
        raise TrialConstructionError(f"genre(s) not in dataset: {missing}")
    E = embed(model, ds.vectors)
    G = len(genres)
    cells = np.empty((G, G + 1))
    counts = np.zeros((G, G + 1), dtype=np.int64)
    for r, eg in enumerate(genres):
        row_scores, row_targets = [], []
        for c, tg in enumerate(genres):
            trials = build_cross_genre_trials(ds, eg, tg, enroll_k, max_nontargets_per_test, seed)
            scores = score_trials(trials, E, ds)
            targets = np.array([t.target for t in trials], dtype=bool)
            cells[r, c] = compute_eer(scores, targets)
            counts[r, c] = len(trials)
            row_scores.append(scores)
            row_targets.append(targets)
        cells[r, G] = compute_eer(np.concatenate(row_scores), np.concatenate(row_targets))
        counts[r, G] = counts[r, :G].sum()
    return EerMatrix(genres, cells, counts)


def emit_report(matrix: EerMatrix, path, format: str = "csv") -> None:
    """Write the matrix as CSV (3 decimals) or JSON (full precision)."""
    if format == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["enroll", *matrix.columns])
            for genre, row in zip(matrix.genres, matrix.cells):
                writer.writerow([genre, *(f"{v:.3f}" for v in row)])
    elif format == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"genres": matrix.genres, "columns": matrix.columns,
                       "cells": matrix.cells.tolist()}, fh, indent=2)
            fh.write("\n")
    else:
        raise ValueError(f"unknown report format {format!r}")


def load_report_json(path) -> EerMatrix:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return EerMatrix(data["genres"], np.array(data["cells"], dtype=np.float64))


def format_trials(trials: Sequence[Trial]) -> str:
    return "".join(f"{','.join(t.enroll_utts)}\t{t.test_utt}\t{int(t.target)}\n" for t in trials)


def parse_trials(text: str) -> list[Trial]:
    trials = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3 or parts[2] not in ("0", "1"):
            raise ValueError(f"line {lineno}: expected 'enroll,...<TAB>test<TAB>0|1'")
        trials.append(Trial(tuple(parts[0].split(",")), parts[1], parts[2] == "1"))
    return trials


def det_points_csv(scores, targets) -> str:
    """Raw (threshold, FAR, FRR) points for external DET plotting."""
    thresholds, far, frr = error_rates(scores, targets)
    lines = ["threshold,far,frr"]
    lines.extend(f"{t!r},{a!r},{r!r}" for t, a, r in zip(thresholds.tolist(), far.tolist(), frr.tolist()))
    return "\n".join(lines) + "\n"
