"""Pairing and mixing of monophonic clips into two-instrument examples.

Four strategies produce mixes for every unordered instrument pair:

``random``  shuffle both classes and overlay them one by one
``genre``   the same, restricted to segments sharing a genre
``tempo``   3-second parents tempo-aligned before mixing, then cut to 1 s
``pitch``   the second segment's pitch follows the first, frame by frame
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import audio, pitchsync, temposync
from .audio import AudioClip
from .dataset import GENRES, INSTRUMENTS, ClipRecord
from .errors import ContractError, NoTempoError, OutOfRangeError

log = logging.getLogger(__name__)

PITCH_AUGMENT_SHIFTS = (-6, -4, -2, 2, 4, 6)


class MixStrategy(str, Enum):
    RANDOM = "random"
    GENRE = "genre"
    TEMPO = "tempo"
    PITCH = "pitch"


@dataclass
class Source:
    """A standardized clip plus the metadata pairing needs."""

    clip_id: str
    instrument: str
    genre: str
    clip: AudioClip

    @property
    def labels(self) -> np.ndarray:
        from .dataset import label_vector
        return label_vector(self.instrument)


@dataclass
class MixedRecord:
    clip: AudioClip
    labels: np.ndarray
    sources: tuple
    strategy: MixStrategy
    info: dict = field(default_factory=dict)

    @property
    def instruments(self) -> list[str]:
        return [INSTRUMENTS[i] for i in np.flatnonzero(self.labels)]


@dataclass
class MixSummary:
    pairs: dict = field(default_factory=dict)     # "cel+cla" -> records produced
    skipped: list = field(default_factory=list)   # (source a, source b, reason)


def load_sources(records, rate=audio.TARGET_RATE, rms=audio.TARGET_RMS) -> list[Source]:
    """Load and standardize every record (whole parents, not segments)."""
    out = []
    for rec in records:
        clip = audio.standardize(rec.load(), rate, rms)
        out.append(Source(rec.clip_id, rec.instrument, rec.genre, clip))
    return out


def segment_sources(sources, seg_seconds=1.0) -> list[Source]:
    out = []
    for src in sources:
        for k, seg in enumerate(audio.segment_clip(src.clip, seg_seconds)):
            out.append(Source(f"{src.clip_id}#{k}", src.instrument, src.genre, seg))
    return out


def pair_random(set_a, set_b, rng) -> list[tuple]:
    """Shuffle both sets and zip them; no element is used twice."""
    if not set_a or not set_b:
        log.warning("pair_random: empty input set, no pairs produced")
        return []
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    order_a = rng.permutation(len(set_a))
    order_b = rng.permutation(len(set_b))
    return [(set_a[i], set_b[j]) for i, j in zip(order_a, order_b)]


def pair_genre(set_a, set_b, rng) -> list[tuple]:
    """Random pairing inside each genre bucket, buckets in canonical genre order."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    pairs = []
    for genre in GENRES:
        bucket_a = [s for s in set_a if s.genre == genre]
        bucket_b = [s for s in set_b if s.genre == genre]
        if bucket_a and bucket_b:
            pairs.extend(pair_random(bucket_a, bucket_b, rng))
    return pairs


def _mix_job(job):
    """Mix one pair; returns a list of MixedRecord (empty when skipped) and a reason."""
    strategy, a, b = job
    labels = a.labels | b.labels
    ids = (a.clip_id, b.clip_id)
    if strategy in (MixStrategy.RANDOM, MixStrategy.GENRE):
        return [MixedRecord(audio.overlay(a.clip, b.clip), labels, ids, strategy)], None
    if strategy == MixStrategy.PITCH:
        try:
            mixed, plan = pitchsync.mix_pitch_sync(a.clip, b.clip)
        except OutOfRangeError as exc:
            return [], str(exc)
        return [MixedRecord(mixed, labels, ids, strategy, {"plan": plan.to_json()})], None
    try:
        segments, ratio = temposync.mix_tempo_sync(a.clip, b.clip)
    except (NoTempoError, OutOfRangeError) as exc:
        return [], str(exc)
    return [MixedRecord(seg, labels, (f"{ids[0]}#{k}", f"{ids[1]}#{k}"), strategy,
                        {"ratio": ratio, "parents": list(ids)})
            for k, seg in enumerate(segments)], None


def class_pair_jobs(sources, strategy: MixStrategy, seed: int, max_pairs: int | None = None):
    """Yield ``(class_a, class_b, jobs)`` for every unordered class pair present.

    ``sources`` are 3-second parents; segmentation to 1 s happens here for
    every strategy but ``tempo``. Each class pair draws from its own generator
    seeded with ``(seed, i, j)``, and each pair's roles (which side is aligned
    to the other) are assigned at random.
    """
    strategy = MixStrategy(strategy)
    units = sources if strategy == MixStrategy.TEMPO else segment_sources(sources)
    by_class = {code: [u for u in units if u.instrument == code] for code in INSTRUMENTS}
    present = [i for i, code in enumerate(INSTRUMENTS) if by_class[code]]
    if len(present) < 2:
        raise ContractError("mixing needs at least two instrument classes")
    for i, j in itertools.combinations(present, 2):
        rng = np.random.default_rng([seed, i, j])
        set_a, set_b = by_class[INSTRUMENTS[i]], by_class[INSTRUMENTS[j]]
        if strategy == MixStrategy.GENRE:
            pairs = pair_genre(set_a, set_b, rng)
        else:
            pairs = pair_random(set_a, set_b, rng)
        if max_pairs is not None:
            pairs = pairs[:max_pairs]
        swaps = rng.random(len(pairs)) < 0.5
        jobs = [(strategy, b, a) if swap else (strategy, a, b)
                for (a, b), swap in zip(pairs, swaps)]
        yield INSTRUMENTS[i], INSTRUMENTS[j], jobs


def iter_mixed(sources, strategy, seed: int, max_pairs: int | None = None, jobs: int = 1,
               summary: MixSummary | None = None):
    """Generate MixedRecords class pair by class pair, in deterministic order."""
    summary = summary if summary is not None else MixSummary()
    pool = ProcessPoolExecutor(jobs) if jobs > 1 else None
    try:
        for code_a, code_b, pair_jobs in class_pair_jobs(sources, strategy, seed, max_pairs):
            results = pool.map(_mix_job, pair_jobs, chunksize=8) if pool else map(_mix_job, pair_jobs)
            produced = 0
            for job, (records, reason) in zip(pair_jobs, results):
                if reason is not None:
                    summary.skipped.append((job[1].clip_id, job[2].clip_id, reason))
                    log.info("skipped pair %s + %s: %s", job[1].clip_id, job[2].clip_id, reason)
                for rec in records:
                    produced += 1
                    yield rec
            summary.pairs[f"{code_a}+{code_b}"] = produced
    finally:
        if pool:
            pool.shutdown()


def build_mixed_dataset(records, strategy, seed: int, max_pairs: int | None = None,
                        jobs: int = 1) -> tuple[list[MixedRecord], MixSummary]:
    """Load ``records`` (3-second parents), mix every class pair, return all mixes."""
    sources = records
    if records and isinstance(records[0], ClipRecord):
        sources = load_sources(records)
    summary = MixSummary()
    mixed = list(iter_mixed(sources, strategy, seed, max_pairs, jobs, summary))
    return mixed, summary


def pitch_shift_augment(sources, seed: int, count: int | None = None,
                        semitones=PITCH_AUGMENT_SHIFTS) -> list[MixedRecord]:
    """Single-label control set: each output is one source shifted by a random amount.

    Sources are cycled in freshly shuffled passes, so none is used more than
    ``ceil(count / len(sources))`` times.
    """
    semitones = tuple(int(s) for s in semitones)
    if not set(semitones) <= set(PITCH_AUGMENT_SHIFTS) | {0}:
        raise OutOfRangeError(f"shifts must come from {PITCH_AUGMENT_SHIFTS}")
    if not sources:
        return []
    rng = np.random.default_rng(seed)
    count = len(sources) if count is None else count
    out = []
    order = []
    for _ in range(count):
        if not order:
            order = list(rng.permutation(len(sources)))
        src = sources[order.pop(0)]
        s = int(semitones[rng.integers(len(semitones))])
        n_frames = pitchsync.n_frames_for(src.clip.n_samples, src.clip.sample_rate)
        shifted = pitchsync.apply_pitch_shift(src.clip, pitchsync.ShiftPlan.constant(n_frames, s))
        out.append(MixedRecord(shifted, src.labels, (src.clip_id,), "pitch_shift",
                               {"semitones": s}))
    return out


def make_test_tracks(sources, n_tracks: int, seed: int) -> list[MixedRecord]:
    """Polyphonic evaluation tracks: whole parents of two distinct classes overlaid.

    Class pairs are drawn uniformly among those present and parents within a
    class without replacement (refilled once exhausted).
    """
    by_class = {}
    for src in sources:
        by_class.setdefault(src.instrument, []).append(src)
    codes = sorted(by_class)
    if len(codes) < 2:
        raise ContractError("test tracks need at least two instrument classes")
    pairs = list(itertools.combinations(codes, 2))
    rng = np.random.default_rng(seed)
    pools = {c: [] for c in codes}

    def draw(code):
        if not pools[code]:
            pools[code] = list(rng.permutation(len(by_class[code])))
        return by_class[code][pools[code].pop()]

    out = []
    for _ in range(n_tracks):
        code_a, code_b = pairs[rng.integers(len(pairs))]
        a, b = draw(code_a), draw(code_b)
        n = min(a.clip.n_samples, b.clip.n_samples)
        mixed = audio.overlay(AudioClip(a.clip.samples[:n], a.clip.sample_rate),
                              AudioClip(b.clip.samples[:n], b.clip.sample_rate))
        out.append(MixedRecord(mixed, a.labels | b.labels, (a.clip_id, b.clip_id), "test"))
    return out
