"""Minibatch construction.

Two modes:

* ``genre_pair`` -- pick two genres, then S speakers per genre and M
  utterances per speaker inside that genre.
* ``speaker_only`` -- pick S speakers and M utterances each, ignoring genre.

Sampling is stateless: the batch for ``step`` comes from a generator seeded
with ``(seed, step)``, so any step can be drawn in any order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MIXED_GENRE, ConfigError, Dataset, MiniBatch, SamplingInfeasibleError

MODES = ("genre_pair", "speaker_only")


@dataclass(frozen=True)
class SamplerConfig:
    S: int = 8
    M: int = 4
    seed: int = 0
    mode: str = "genre_pair"

    def __post_init__(self):
        for name in ("S", "M"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(name, f"must be a positive integer, got {v}")
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}, got {self.mode!r}")


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(step)])


class BatchSampler:
    """Precomputes eligibility for one dataset/config and draws batches by step."""

    def __init__(self, ds: Dataset, cfg: SamplerConfig):
        self.ds = ds
        self.cfg = cfg
        if cfg.mode == "genre_pair":
            self._eligible = {}
            for genre in ds.genres:
                spks = [s for s in ds.speakers if len(ds.positions(s, genre)) >= cfg.M]
                if len(spks) >= cfg.S:
                    self._eligible[genre] = spks
            if len(self._eligible) < 2:
                counts = {g: sum(len(ds.positions(s, g)) >= cfg.M for s in ds.speakers)
                          for g in ds.genres}
                raise SamplingInfeasibleError(
                    f"need 2 genres with >= {cfg.S} speakers having >= {cfg.M} utterances; "
                    f"eligible speakers per genre: {counts}")
            self._genres = list(self._eligible)
        else:
            self._speakers = [s for s in ds.speakers if len(ds.positions(s)) >= cfg.M]
            if len(self._speakers) < cfg.S:
                raise SamplingInfeasibleError(
                    f"need {cfg.S} speakers with >= {cfg.M} utterances, "
                    f"found {len(self._speakers)}")

    @property
    def eligible_genres(self) -> list[str]:
        return list(self._genres) if self.cfg.mode == "genre_pair" else []

    def batch(self, step: int) -> MiniBatch:
        rng = step_rng(self.cfg.seed, step)
        S, M = self.cfg.S, self.cfg.M
        if self.cfg.mode == "genre_pair":
            picks = rng.choice(len(self._genres), size=2, replace=False)
            genres = tuple(self._genres[i] for i in picks)
            groups = []
            for g in genres:
                pool = self._eligible[g]
                spks = [pool[i] for i in rng.choice(len(pool), size=S, replace=False)]
                groups.append((g, spks, [self.ds.positions(s, g) for s in spks]))
        else:
            pool = self._speakers
            spks = [pool[i] for i in rng.choice(len(pool), size=S, replace=False)]
            groups = [(MIXED_GENRE, spks, [self.ds.positions(s) for s in spks])]

        pos = np.empty((len(groups), S, M), dtype=np.int64)
        for gi, (_, _, cells) in enumerate(groups):
            for si, cell in enumerate(cells):
                pos[gi, si] = np.asarray(cell)[rng.choice(len(cell), size=M, replace=False)]
        return MiniBatch(
            genres=tuple(g for g, _, _ in groups),
            speakers=tuple(tuple(s) for _, s, _ in groups),
            utt_ids=self.ds.utt_ids[pos],
            vectors=self.ds.vectors[pos],
            positions=pos,
        )


def sample_genre_pair(ds: Dataset, cfg: SamplerConfig, step: int) -> MiniBatch:
    if cfg.mode != "genre_pair":
        raise ConfigError("mode", "sample_genre_pair needs mode='genre_pair'")
    return BatchSampler(ds, cfg).batch(step)


def sample_speakers(ds: Dataset, cfg: SamplerConfig, step: int) -> MiniBatch:
    if cfg.mode != "speaker_only":
        raise ConfigError("mode", "sample_speakers needs mode='speaker_only'")
    return BatchSampler(ds, cfg).batch(step)
