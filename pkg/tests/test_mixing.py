import zlib

import numpy as np
import pytest

from polymix import audio, mixing, pitchsync
from polymix.audio import AudioClip, tone
from polymix.dataset import GENRES, INSTRUMENTS
from polymix.errors import ContractError, OutOfRangeError
from polymix.mixing import MixStrategy, Source

RATE = 22050


def src(code, k, genre="classical", seconds=1.0, seed=None):
    rng = np.random.default_rng(seed if seed is not None else [zlib.crc32(code.encode()), k])
    clip = AudioClip(0.1 * rng.standard_normal(int(seconds * RATE)), RATE)
    return Source(f"{code}{k}", code, genre, clip)


def ids(pairs):
    return [(a.clip_id, b.clip_id) for a, b in pairs]


def test_pair_random_counts_and_no_repeats():
    a = [src("pia", k, seed=k) for k in range(300)]
    b = [src("vio", k, seed=k) for k in range(200)]
    pairs = mixing.pair_random(a, b, 0)
    assert len(pairs) == 200
    assert len({p[0].clip_id for p in pairs}) == 200
    assert len({p[1].clip_id for p in pairs}) == 200
    assert ids(mixing.pair_random(a, b, 0)) == ids(pairs)
    assert ids(mixing.pair_random(a, b, 1)) != ids(pairs)
    assert len(mixing.pair_random(a[:1], b[:1], 0)) == 1


def test_pair_random_empty_warns(caplog):
    assert mixing.pair_random([], [src("pia", 0)], 0) == []
    assert "empty" in caplog.text


def test_pair_genre_buckets():
    a = [src("pia", k, "classical", seed=k) for k in range(5)]
    a += [src("pia", 5 + k, "jazz_blues", seed=k) for k in range(3)]
    b = [src("vio", k, "classical", seed=k) for k in range(4)]
    pairs = mixing.pair_genre(a, b, 0)
    assert len(pairs) == 4
    assert all(x.genre == y.genre == "classical" for x, y in pairs)
    assert len(mixing.pair_genre(a[:5], b, 0)) == len(mixing.pair_random(a[:5], b, 0))
    other = [src("vio", k, "pop_rock", seed=k) for k in range(4)]
    assert mixing.pair_genre(a, other, 0) == []


def test_genre_and_label_vocab():
    assert "classical" in GENRES and "jazz_blues" in GENRES


def small_corpus(counts):
    return [src(code, k, GENRES[k % 4], seed=i * 100 + k)
            for i, code in enumerate(INSTRUMENTS) for k in range(counts[code])]


def test_random_strategy_55_pairs():
    counts = {code: 2 + i % 3 for i, code in enumerate(INSTRUMENTS)}
    summary = mixing.MixSummary()
    mixed = list(mixing.iter_mixed(small_corpus(counts), "random", 3, summary=summary))
    assert len(summary.pairs) == 55
    for key, n in summary.pairs.items():
        a, b = key.split("+")
        assert n == min(counts[a], counts[b])
    assert all(int(r.labels.sum()) == 2 for r in mixed)
    assert all(len(set(r.instruments)) == 2 for r in mixed)


def test_two_classes_one_pair_and_contract():
    corpus = small_corpus({c: (2 if c in ("pia", "vio") else 0) for c in INSTRUMENTS})
    mixed, summary = mixing.build_mixed_dataset(corpus, "random", 0)
    assert list(summary.pairs) == ["pia+vio"]
    assert len(mixed) == 2
    with pytest.raises(ContractError):
        mixing.build_mixed_dataset(corpus[:2], "random", 0)


def test_labels_are_or_of_sources():
    corpus = small_corpus({c: 1 for c in INSTRUMENTS})
    by_id = {s.clip_id: s for s in corpus}
    for rec in mixing.iter_mixed(corpus, "genre", 0):
        a, b = (by_id[i.split("#")[0]] for i in rec.sources)
        np.testing.assert_array_equal(rec.labels, a.labels | b.labels)


def test_mixing_is_deterministic():
    corpus = small_corpus({c: 2 for c in INSTRUMENTS})
    first = list(mixing.iter_mixed(corpus, "random", 7))
    again = list(mixing.iter_mixed(corpus, "random", 7))
    assert [r.sources for r in first] == [r.sources for r in again]
    for x, y in zip(first, again):
        np.testing.assert_array_equal(x.clip.samples, y.clip.samples)


def test_parallel_matches_serial():
    corpus = small_corpus({c: (2 if c in ("cel", "pia", "vio") else 0) for c in INSTRUMENTS})
    serial = list(mixing.iter_mixed(corpus, "pitch", 1))
    parallel = list(mixing.iter_mixed(corpus, "pitch", 1, jobs=2))
    assert [r.sources for r in serial] == [r.sources for r in parallel]
    for x, y in zip(serial, parallel):
        np.testing.assert_array_equal(x.clip.samples, y.clip.samples)


def test_max_pairs_caps_each_class_pair():
    corpus = small_corpus({c: (5 if c in ("cel", "pia") else 0) for c in INSTRUMENTS})
    mixed, summary = mixing.build_mixed_dataset(corpus, "random", 0, max_pairs=3)
    assert summary.pairs == {"cel+pia": 3} and len(mixed) == 3


def test_segments_are_one_second():
    corpus = [src("pia", 0, seconds=3.0, seed=1), src("vio", 0, seconds=3.0, seed=2)]
    mixed, _ = mixing.build_mixed_dataset(corpus, "random", 0)
    assert len(mixed) == 3 and all(r.clip.n_samples == RATE for r in mixed)


def test_tempo_strategy_skips_silent_pairs():
    silent = Source("pia0", "pia", "classical", AudioClip(np.zeros(3 * RATE), RATE))
    mixed, summary = mixing.build_mixed_dataset([silent, src("vio", 0, seconds=3.0)], "tempo", 0)
    assert mixed == [] and len(summary.skipped) == 1 and summary.pairs == {"pia+vio": 0}


def test_pitch_strategy_skips_out_of_range_pairs():
    # 110 Hz against 660 Hz needs a 31-semitone shift, beyond the +/-24 bound
    low = Source("pia0", "pia", "classical", audio.standardize(tone(110, 1.0)))
    high = Source("vio0", "vio", "classical", audio.standardize(tone(660, 1.0)))
    mixed, summary = mixing.build_mixed_dataset([low, high], "pitch", 0)
    assert mixed == [] and len(summary.skipped) == 1 and summary.pairs == {"pia+vio": 0}
    assert "semitones" in summary.skipped[0][2]


def test_pitch_shift_augment_tone():
    source = Source("t", "pia", "classical", audio.standardize(tone(220, 1.0)))
    (rec,) = mixing.pitch_shift_augment([source], 0, count=1, semitones=(2,))
    f0 = pitchsync.track_pitch(rec.clip).f0[5:-5]
    assert np.all(np.abs(1200 * np.log2(f0 / 246.94)) < 25)
    np.testing.assert_array_equal(rec.labels, source.labels)


def test_pitch_shift_augment_counts():
    sources = [Source(f"s{k}", "pia", "classical", AudioClip(np.zeros(2205), RATE))
               for k in range(100)]
    out = mixing.pitch_shift_augment(sources, 0, count=500)
    assert len(out) == 500
    uses = np.bincount([int(r.sources[0][1:]) for r in out], minlength=100)
    assert uses.max() <= 5
    assert {r.info["semitones"] for r in out} <= set(mixing.PITCH_AUGMENT_SHIFTS)
    with pytest.raises(OutOfRangeError):
        mixing.pitch_shift_augment(sources, 0, semitones=(3,))


def test_pitch_shift_augment_zero_is_identity():
    source = src("pia", 0, seed=3)
    (rec,) = mixing.pitch_shift_augment([source], 0, count=1, semitones=(0,))
    err = np.sqrt(np.mean((rec.clip.samples - source.clip.samples) ** 2) /
                  np.mean(source.clip.samples ** 2))
    assert err < 1e-3


def test_test_tracks():
    corpus = [src(c, k, seconds=2.0, seed=i * 10 + k)
              for i, c in enumerate(("cel", "pia", "vio")) for k in range(2)]
    tracks = mixing.make_test_tracks(corpus, 12, 4)
    assert len(tracks) == 12
    assert all(int(t.labels.sum()) == 2 and t.clip.n_samples == 2 * RATE for t in tracks)
    again = mixing.make_test_tracks(corpus, 12, 4)
    assert [t.sources for t in tracks] == [t.sources for t in again]
    with pytest.raises(ContractError):
        mixing.make_test_tracks(corpus[:2], 1, 0)


def test_strategy_enum_closed():
    assert {s.value for s in MixStrategy} == {"random", "genre", "tempo", "pitch"}
    with pytest.raises(ValueError):
        MixStrategy("key")
