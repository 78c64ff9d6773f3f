from collections import Counter

import numpy as np
import pytest

from genre_align.core import MIXED_GENRE, SamplingInfeasibleError
from genre_align.io import SynthConfig, generate_dataset
from genre_align.sampler import BatchSampler, SamplerConfig, sample_genre_pair, sample_speakers

from conftest import make_grid_dataset


@pytest.fixture(scope="module")
def three_genre_ds():
    return generate_dataset(SynthConfig(num_speakers=12, dim=4, utts_per_speaker_per_genre=5, seed=3))


def test_two_genres_always_both_present(small_ds):
    cfg = SamplerConfig(S=2, M=2, seed=1)
    for step in range(20):
        b = sample_genre_pair(small_ds, cfg, step)
        assert set(b.genres) == {"a", "b"}


def test_same_seed_step_identical(three_genre_ds):
    cfg = SamplerConfig(S=3, M=2, seed=9)
    a, b = sample_genre_pair(three_genre_ds, cfg, 17), sample_genre_pair(three_genre_ds, cfg, 17)
    np.testing.assert_array_equal(a.utt_ids, b.utt_ids)
    np.testing.assert_array_equal(a.vectors, b.vectors)
    cfg2 = SamplerConfig(S=3, M=2, seed=9, mode="speaker_only")
    np.testing.assert_array_equal(sample_speakers(three_genre_ds, cfg2, 4).utt_ids,
                                  sample_speakers(three_genre_ds, cfg2, 4).utt_ids)


def test_stateless_steps(three_genre_ds):
    sampler = BatchSampler(three_genre_ds, SamplerConfig(S=3, M=2, seed=2))
    later_first = sampler.batch(50).utt_ids
    for step in range(50):
        sampler.batch(step)
    np.testing.assert_array_equal(sampler.batch(50).utt_ids, later_first)


def test_genre_pair_batch_shape(three_genre_ds):
    ds = three_genre_ds
    b = sample_genre_pair(ds, SamplerConfig(S=4, M=3, seed=0), 0)
    assert b.vectors.shape == (2, 4, 3, ds.dim)
    assert len(set(b.genres)) == 2
    for gi, genre in enumerate(b.genres):
        assert len(set(b.speakers[gi])) == 4
        for si, spk in enumerate(b.speakers[gi]):
            for u in b.utt_ids[gi, si]:
                rec = ds.records[list(ds.utt_ids).index(u)]
                assert rec.genre == genre and rec.speaker == spk


def test_pair_frequencies_uniform(three_genre_ds):
    sampler = BatchSampler(three_genre_ds, SamplerConfig(S=2, M=2, seed=5))
    counts = Counter(frozenset(sampler.batch(step).genres) for step in range(3000))
    assert len(counts) == 3
    for c in counts.values():
        assert abs(c / 3000 - 1 / 3) <= 0.03


def test_speaker_batches_mix_genres(three_genre_ds):
    sampler = BatchSampler(three_genre_ds, SamplerConfig(S=4, M=4, seed=0, mode="speaker_only"))
    genre_of = dict(zip(three_genre_ds.utt_ids, three_genre_ds.genre_labels))
    spans = total = 0
    for step in range(1000):
        b = sampler.batch(step)
        assert b.genres == (MIXED_GENRE,)
        for row in b.utt_ids[0]:
            total += 1
            spans += len({genre_of[u] for u in row}) >= 2
    # all 15 utterances of a speaker span 3 genres; P(4 draws from one genre) = 3*C(5,4)/C(15,4)
    assert spans / total > 0.9
    assert spans / total == pytest.approx(1 - 3 * 5 / 1365, abs=0.01)


@pytest.mark.parametrize("mode", ["genre_pair", "speaker_only"])
def test_no_duplicate_utterances(three_genre_ds, mode):
    sampler = BatchSampler(three_genre_ds, SamplerConfig(S=5, M=3, seed=1, mode=mode))
    for step in range(300):
        ids = sampler.batch(step).utt_ids.ravel()
        assert len(set(ids)) == len(ids)


def test_infeasible_reports_counts():
    ds = make_grid_dataset(speakers=3, utts=2)
    with pytest.raises(SamplingInfeasibleError, match="'a': 3"):
        BatchSampler(ds, SamplerConfig(S=4, M=2))
    with pytest.raises(SamplingInfeasibleError):
        BatchSampler(ds, SamplerConfig(S=2, M=5, mode="speaker_only"))


def test_eligibility_filters_small_genres():
    ds = make_grid_dataset(speakers=4, genres=("a", "b", "c"), utts=3)
    keep = [p for p, r in enumerate(ds.records) if not (r.genre == "c" and r.speaker != "s0")]
    sampler = BatchSampler(ds.subset(keep), SamplerConfig(S=2, M=2))
    assert sampler.eligible_genres == ["a", "b"]


def test_mode_mismatch(small_ds):
    with pytest.raises(ValueError):
        sample_speakers(small_ds, SamplerConfig(S=2, M=2), 0)
    with pytest.raises(ValueError):
        SamplerConfig(S=0)
