"""Embedding file format and the synthetic multi-genre generator.

File format (UTF-8 text)::

    #dim=<d>
    utt_id<TAB>speaker<TAB>genre<TAB>v1<TAB>...<TAB>vd

Floats are written in shortest round-trip decimal (``repr``), so a save/load
cycle is bit exact. Single-precision values on disk are read into doubles;
the decimal text is parsed directly, with no float32 intermediate. Lines
after the header that start with ``#`` are comments. On read, value fields
may be separated by any whitespace.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .core import ConfigError, Dataset, EmbeddingRecord, GenreAlignError, dataset_validate

# Genre distortion magnitudes at genre_shift=1; each grows linearly with genre_shift.
ROTATION_SCALE = 0.35   # std of skew-symmetric rotation generator entries (radians)
LOG_SCALE_STD = 0.5     # std of per-axis log scale factors
OFFSET_STD = 0.5        # std of offset components, in units of speaker_spread


class FormatError(GenreAlignError, ValueError):
    pass


class ParseError(FormatError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class SynthConfig:
    num_speakers: int = 50
    genres: Sequence[str] = ("g1", "g2", "g3")
    dim: int = 16
    utts_per_speaker_per_genre: int = 20
    speaker_spread: float = 1.0
    within_spread: float = 0.5
    genre_shift: float = 1.0
    seed: int = 7
    speaker_prefix: str = field(default="spk", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "genres", tuple(str(g) for g in self.genres))
        for name in ("num_speakers", "dim", "utts_per_speaker_per_genre"):
            v = getattr(self, name)
            if int(v) != v or v <= 0:
                raise ConfigError(name, f"must be a positive integer, got {v}")
        if len(self.genres) < 2:
            raise ConfigError("genres", "at least 2 genres are required")
        if len(set(self.genres)) != len(self.genres):
            raise ConfigError("genres", "genre names must be unique")
        for name in ("speaker_spread", "within_spread"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(name, f"must be positive, got {v}")
        if not (np.isfinite(self.genre_shift) and self.genre_shift >= 0):
            raise ConfigError("genre_shift", f"must be non-negative, got {self.genre_shift}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed", "must fit in an unsigned 64-bit integer")


def genre_maps(cfg: SynthConfig, rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-genre affine map ``x -> A x + b`` with ``A = rotation @ diag(scale)``."""
    d = cfg.dim
    maps = []
    for _ in cfg.genres:
        gen = rng.normal(0.0, ROTATION_SCALE, size=(d, d))
        skew = (gen - gen.T) / np.sqrt(2.0)
        log_scale = rng.normal(0.0, LOG_SCALE_STD, size=d)
        offset = rng.normal(0.0, OFFSET_STD * cfg.speaker_spread, size=d)
        s = cfg.genre_shift
        A = expm(s * skew) @ np.diag(np.exp(s * log_scale))
        maps.append((A, s * offset))
    return maps


def generate_dataset(cfg: SynthConfig) -> Dataset:
    """Draw a synthetic dataset in which every speaker appears in every genre.

    A single ``numpy.random.Generator`` (PCG64 seeded through ``SeedSequence(cfg.seed)``)
    is consumed in this order: genre maps (genre order), speaker centers, then
    within-speaker noise in (speaker, genre) order.
    """
    rng = np.random.default_rng(cfg.seed)
    maps = genre_maps(cfg, rng)
    centers = rng.normal(0.0, cfg.speaker_spread, size=(cfg.num_speakers, cfg.dim))
    n = cfg.utts_per_speaker_per_genre
    width = len(str(cfg.num_speakers - 1))
    records = []
    for s, center in enumerate(centers):
        speaker = f"{cfg.speaker_prefix}{s:0{width}d}"
        for genre, (A, b) in zip(cfg.genres, maps):
            noise = rng.normal(0.0, cfg.within_spread, size=(n, cfg.dim))
            vecs = (center + noise) @ A.T + b
            for u, v in enumerate(vecs):
                records.append(EmbeddingRecord(f"{speaker}-{genre}-{u:03d}", speaker, genre, v))
    return Dataset(cfg.dim, records)


def _check_field(value: str, what: str, pos: int):
    if not value or any(c in value for c in "\t\n\r") or value != value.strip():
        raise FormatError(f"record {pos}: {what} {value!r} is empty or contains whitespace delimiters")


def format_dataset(ds: Dataset) -> str:
    problems = dataset_validate(ds)
    if problems:
        raise FormatError("invalid dataset: " + "; ".join(problems[:5]))
    lines = [f"#dim={ds.dim}"]
    for pos, rec in enumerate(ds.records):
        for what, value in (("utt_id", rec.utt_id), ("speaker", rec.speaker), ("genre", rec.genre)):
            _check_field(value, what, pos)
        lines.append("\t".join([rec.utt_id, rec.speaker, rec.genre, *map(repr, rec.vector.tolist())]))
    return "\n".join(lines) + "\n"


def save_dataset(ds: Dataset, path) -> None:
    text = format_dataset(ds)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def parse_dataset(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise FormatError("missing header")
    header = lines[0].strip()
    if not header.startswith("#dim="):
        raise ParseError(1, f"missing header: expected '#dim=<d>', got {header[:40]!r}")
    try:
        dim = int(header[len("#dim="):])
    except ValueError:
        raise ParseError(1, f"bad dimension in header {header!r}") from None
    if dim <= 0:
        raise ParseError(1, f"dimension must be positive, got {dim}")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t", 3)
        if len(parts) < 4:
            raise ParseError(lineno, "expected utt_id, speaker, genre and vector fields")
        utt, spk, genre, rest = parts
        values = rest.split()
        if len(values) != dim:
            raise ParseError(lineno, f"row {utt!r} has {len(values)} values, header says dim={dim}")
        try:
            vec = np.array([float(v) for v in values], dtype=np.float64)
        except ValueError as exc:
            raise ParseError(lineno, f"row {utt!r}: {exc}") from None
        records.append(EmbeddingRecord(utt, spk, genre, vec))
    ds = Dataset(dim, records)
    problems = dataset_validate(ds)
    if problems:
        raise FormatError("invalid dataset: " + "; ".join(problems[:5]))
    return ds


def load_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh.read())


def save_labeled_embeddings(path, utt_ids, speakers, genres, vectors) -> None:
    """Write arbitrary labeled vectors (e.g. model outputs) in the embedding file format."""
    save_dataset(Dataset.from_arrays(vectors, speakers, genres, utt_ids), path)


def fixture_config(**overrides) -> SynthConfig:
    """The reference synthetic setup: 50 speakers, 3 genres, dim 16, shift 1.0, seed 7."""
    return SynthConfig(**overrides)
