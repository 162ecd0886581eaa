"""Label vocabulary, manifests, the synthetic corpus and feature stores."""

from __future__ import annotations

import json
import logging
import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import audio
from .audio import AudioClip
from .errors import CorruptStoreError, ValidationError

log = logging.getLogger(__name__)

# Canonical label order: alphabetical instrument codes. Index i of every label
# vector, score column and model output refers to INSTRUMENTS[i].
INSTRUMENTS = ("cel", "cla", "flu", "gac", "gel", "org", "pia", "sax", "tru", "vio", "voi")
GENRES = ("classical", "pop_rock", "jazz_blues", "country_folk")
N_CLASSES = len(INSTRUMENTS)
INSTRUMENT_INDEX = {code: i for i, code in enumerate(INSTRUMENTS)}

# genre tags used in IRMAS training file names
IRMAS_GENRES = {"cla": "classical", "pop_roc": "pop_rock", "jaz_blu": "jazz_blues",
                "cou_fol": "country_folk"}


def label_vector(*instruments: str) -> np.ndarray:
    vec = np.zeros(N_CLASSES, dtype=np.uint8)
    for code in instruments:
        vec[INSTRUMENT_INDEX[code]] = 1
    return vec


def label_names(vec) -> list[str]:
    return [INSTRUMENTS[i] for i in np.flatnonzero(np.asarray(vec))]


@dataclass
class ClipRecord:
    path: str
    instrument: str
    genre: str
    duration_s: float | None = None
    split: int | str | None = None
    clip_id: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.instrument not in INSTRUMENT_INDEX:
            raise ValidationError(f"unknown instrument {self.instrument!r}")
        if self.genre not in GENRES:
            raise ValidationError(f"unknown genre {self.genre!r}")
        if self.duration_s is not None and self.duration_s <= 0:
            raise ValidationError(f"duration must be positive, got {self.duration_s}")
        if self.split is not None and self.split != "test" and self.split not in range(5):
            raise ValidationError(f"split must be a fold 0..4 or 'test', got {self.split!r}")
        if not self.clip_id:
            self.clip_id = Path(self.path).stem

    @property
    def labels(self) -> np.ndarray:
        return label_vector(self.instrument)

    def load(self) -> AudioClip:
        return audio.load_wav(self.path)

    def to_json(self, relative_to=None) -> dict:
        path = self.path
        if relative_to is not None:
            path = os.path.relpath(path, relative_to)
        out = {"path": path, "instrument": self.instrument, "genre": self.genre,
               "split": self.split, "id": self.clip_id}
        if self.duration_s is not None:
            out["duration_s"] = self.duration_s
        out.update(self.extra)
        return out


_KNOWN_KEYS = {"path", "instrument", "genre", "split", "id", "duration_s"}


def load_manifest(path) -> list[ClipRecord]:
    """Parse a JSON-lines manifest. Relative paths resolve against its directory.

    File existence is not checked here; see :func:`verify_manifest`.
    """
    base = Path(path).parent
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            missing = {"path", "instrument", "genre"} - obj.keys()
            if missing:
                raise ValidationError(f"missing keys {sorted(missing)}", line=lineno)
            rec_path = obj["path"]
            if not os.path.isabs(rec_path):
                rec_path = str(base / rec_path)
            try:
                records.append(ClipRecord(
                    path=rec_path, instrument=obj["instrument"], genre=obj["genre"],
                    duration_s=obj.get("duration_s"), split=obj.get("split"),
                    clip_id=obj.get("id", ""),
                    extra={k: v for k, v in obj.items() if k not in _KNOWN_KEYS}))
            except ValidationError as exc:
                raise ValidationError(str(exc), line=lineno) from None
    return records


def write_manifest(path, records) -> None:
    base = Path(path).parent
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(relative_to=base), sort_keys=True) + "\n")


@dataclass
class TrackRecord:
    """A labelled audio file with any number of instruments (mixes, test tracks)."""

    path: str
    instruments: tuple
    clip_id: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.instruments = tuple(self.instruments)
        if not self.instruments:
            raise ValidationError("a track needs at least one instrument")
        for code in self.instruments:
            if code not in INSTRUMENT_INDEX:
                raise ValidationError(f"unknown instrument {code!r}")
        if not self.clip_id:
            self.clip_id = Path(self.path).stem

    @property
    def labels(self) -> np.ndarray:
        return label_vector(*self.instruments)

    def load(self) -> AudioClip:
        return audio.load_wav(self.path)

    def to_json(self, relative_to=None) -> dict:
        path = self.path if relative_to is None else os.path.relpath(self.path, relative_to)
        out = {"path": path, "instruments": list(self.instruments), "id": self.clip_id}
        out.update(self.extra)
        return out


def load_tracks(path) -> list[TrackRecord]:
    """Read any manifest as labelled tracks.

    Lines carrying ``instruments`` (a list) are multi-label; lines carrying a
    single ``instrument`` are read as one-label tracks, so monophonic
    manifests load too.
    """
    base = Path(path).parent
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            if "path" not in obj or not ({"instrument", "instruments"} & obj.keys()):
                raise ValidationError("needs 'path' and 'instrument(s)'", line=lineno)
            codes = obj.get("instruments", [obj.get("instrument")])
            rec_path = obj["path"]
            if not os.path.isabs(rec_path):
                rec_path = str(base / rec_path)
            extra = {k: v for k, v in obj.items()
                     if k not in {"path", "instruments", "instrument", "id"}}
            try:
                out.append(TrackRecord(rec_path, codes, obj.get("id", ""), extra))
            except ValidationError as exc:
                raise ValidationError(str(exc), line=lineno) from None
    return out


def write_tracks(path, tracks) -> None:
    base = Path(path).parent
    with open(path, "w", encoding="utf-8") as fh:
        for t in tracks:
            fh.write(json.dumps(t.to_json(relative_to=base), sort_keys=True) + "\n")


def verify_manifest(records) -> list[str]:
    """Return a problem description for every record whose file is unusable."""
    problems = []
    for rec in records:
        if not os.path.exists(rec.path):
            problems.append(f"{rec.clip_id}: missing file {rec.path}")
            continue
        try:
            clip = rec.load()
        except Exception as exc:  # report every decode failure, keep scanning
            problems.append(f"{rec.clip_id}: {exc}")
            continue
        if rec.duration_s is None:
            rec.duration_s = clip.duration
    return problems


def ingest_irmas(root) -> list[ClipRecord]:
    """Build records from an IRMAS-style training tree.

    Expects ``root/<instrument>/*.wav`` where each file name carries bracketed
    tags such as ``[cel][nod][cla]0058__1.wav``; the last tag is the genre.
    Files tagged with genres outside the four supported ones are skipped.
    """
    records = []
    skipped = 0
    for code in INSTRUMENTS:
        folder = Path(root) / code
        if not folder.is_dir():
            continue
        for wav in sorted(folder.glob("*.wav")):
            tags = re.findall(r"\[([a-z_]+)\]", wav.name)
            genre = IRMAS_GENRES.get(tags[-1]) if len(tags) >= 2 else None
            if genre is None:
                skipped += 1
                continue
            records.append(ClipRecord(path=str(wav), instrument=code, genre=genre))
    if skipped:
        log.warning("ingest: skipped %d files without a supported genre tag", skipped)
    return records


# ---------------------------------------------------------------------------
# synthetic corpus

@dataclass(frozen=True)
class Timbre:
    low: int            # MIDI register
    high: int
    harmonics: tuple    # relative amplitudes of partials 1..n
    attack: float       # seconds
    decay: float        # seconds, time constant after attack
    sustain: float      # level the decay settles at
    vibrato: float = 0.0    # depth in semitones
    noise: float = 0.0      # breath/bow noise relative level
    formant: float = 0.0    # centre of a fixed resonance, Hz (0 = none)


def _partials(n, law):
    return tuple(float(law(k)) for k in range(1, n + 1))


TIMBRES = {
    "cel": Timbre(36, 48, _partials(16, lambda k: 1 / k), 0.05, 0.30, 0.35, vibrato=0.06, noise=0.01,
                  formant=300.0),
    "cla": Timbre(55, 67, _partials(15, lambda k: (1 / k) if k % 2 else 0.04 / k), 0.03, 0.4, 0.5),
    "flu": Timbre(74, 86, _partials(4, lambda k: [1, 0.25, 0.08, 0.03][k - 1]), 0.03, 0.3, 0.35,
                  vibrato=0.04, noise=0.03),
    "gac": Timbre(40, 52, _partials(12, lambda k: k ** -1.5), 0.004, 0.12, 0.05),
    "gel": Timbre(50, 62, _partials(20, lambda k: 1 / k ** 0.6), 0.01, 0.5, 0.6),
    "org": Timbre(38, 50, _partials(8, lambda k: [1, 0.9, 0.0, 0.8, 0.0, 0.5, 0.0, 0.6][k - 1]),
                  0.02, 1.0, 0.7),
    "pia": Timbre(60, 72, _partials(10, lambda k: k ** -2.2), 0.003, 0.25, 0.12),
    "sax": Timbre(50, 62, _partials(14, lambda k: 1.0 / (1 + abs(k - 3))), 0.02, 0.3, 0.4,
                  vibrato=0.04, noise=0.02, formant=1300.0),
    "tru": Timbre(62, 74, _partials(14, lambda k: min(k, 4) / 4 / (1 + 0.25 * max(0, k - 4))),
                  0.015, 0.25, 0.5),
    "vio": Timbre(67, 79, _partials(18, lambda k: 1 / k ** 0.9), 0.04, 0.3, 0.35, vibrato=0.02,
                  noise=0.015, formant=2800.0),
    "voi": Timbre(48, 60, _partials(24, lambda k: 1 / k), 0.03, 0.3, 0.4, vibrato=0.02,
                  formant=700.0),
}

SYNTH_RATE = 44100
FORMANT_GAIN = 6.0     # peak boost of a timbre's fixed resonance


def midi_to_hz(m: float) -> float:
    return 440.0 * 2.0 ** ((m - 69) / 12.0)


def synth_note(instrument: str, f0: float, bpm: float, seconds: float, rng: np.random.Generator,
               rate: int = SYNTH_RATE) -> np.ndarray:
    """Render one repeated note of ``instrument`` re-attacked on every beat."""
    tb = TIMBRES[instrument]
    n = int(round(seconds * rate))
    t = np.arange(n) / rate
    vib_rate = rng.uniform(4.5, 6.5)
    inst_freq = f0 * 2.0 ** (tb.vibrato / 12.0 * np.sin(2 * np.pi * vib_rate * t))
    phase = 2 * np.pi * np.cumsum(inst_freq) / rate
    out = np.zeros(n)
    nyquist = rate / 2
    for k, amp in enumerate(tb.harmonics, start=1):
        if amp == 0 or k * f0 * 2 ** (tb.vibrato / 12) >= 0.9 * nyquist:
            continue
        weight = amp
        if tb.formant:
            weight *= 1.0 + FORMANT_GAIN * np.exp(-0.5 * (np.log2(k * f0 / tb.formant) / 0.35) ** 2)
        out += weight * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    if tb.noise:
        out += tb.noise * rng.standard_normal(n) * np.sqrt(len(tb.harmonics))
    if instrument == "gel":
        out = np.tanh(1.5 * out / np.max(np.abs(out)))

    period = 60.0 / bpm
    offset = rng.uniform(0, period)
    since = np.mod(t - offset, period)
    env = np.where(since < tb.attack, since / tb.attack,
                   tb.sustain + (1 - tb.sustain) * np.exp(-(since - tb.attack) / tb.decay))
    env = np.where(t < offset, tb.sustain * np.exp(-t / tb.decay), env)
    out *= env
    return 0.5 * out / np.max(np.abs(out))


def synth_corpus(counts: dict, seed: int, out_dir, seconds: float = 3.0,
                 start_index: int = 0) -> list[ClipRecord]:
    """Write a synthetic monophonic corpus and return its records.

    Each class gets ``counts[code]`` clips at 44.1 kHz. Every clip has one
    equal-tempered fundamental from the class register and a beat-synchronous
    amplitude envelope at a tempo drawn from 60-180 BPM. Ground truth goes to a
    ``.json`` sidecar next to each WAV. Genres are assigned round-robin.
    """
    out_dir = Path(out_dir)
    records = []
    for code in INSTRUMENTS:
        count = counts.get(code, 0)
        if count <= 0:
            continue
        (out_dir / code).mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng([seed, INSTRUMENT_INDEX[code]])
        tb = TIMBRES[code]
        for i in range(start_index, start_index + count):
            midi = int(rng.integers(tb.low, tb.high + 1))
            bpm = float(rng.integers(60, 181))
            f0 = midi_to_hz(midi)
            samples = synth_note(code, f0, bpm, seconds, rng)
            genre = GENRES[i % len(GENRES)]
            stem = f"{code}_{seed}_{i:04d}"
            path = out_dir / code / f"{stem}.wav"
            audio.write_wav(path, AudioClip(samples, SYNTH_RATE))
            truth = {"f0": f0, "midi": midi, "bpm": bpm}
            with open(path.with_suffix(".json"), "w") as fh:
                json.dump(truth, fh, sort_keys=True)
            records.append(ClipRecord(path=str(path), instrument=code, genre=genre,
                                      duration_s=seconds, clip_id=stem, extra=truth))
    return records


def read_sidecar(record: ClipRecord) -> dict:
    with open(Path(record.path).with_suffix(".json")) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# feature stores

STORE_MAGIC = b"CQTS"
STORE_VERSION = 1
_STORE_HEADER = struct.Struct("<4sHIII")


@dataclass
class FeatureStore:
    features: np.ndarray    # (count, rows, cols) float32
    labels: np.ndarray      # (count, 11) uint8

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if self.features.ndim != 3:
            raise ValueError(f"features must be 3-D, got shape {self.features.shape}")
        if self.labels.shape != (len(self.features), N_CLASSES):
            raise ValueError(f"labels shape {self.labels.shape} does not match "
                             f"{len(self.features)} features")

    @property
    def count(self) -> int:
        return len(self.features)

    @property
    def shape(self) -> tuple[int, int]:
        return self.features.shape[1:]

    @classmethod
    def empty(cls, rows=96, cols=87):
        return cls(np.zeros((0, rows, cols), np.float32), np.zeros((0, N_CLASSES), np.uint8))

    def subset(self, index) -> FeatureStore:
        return FeatureStore(self.features[index], self.labels[index])

    def concat(self, other: FeatureStore) -> FeatureStore:
        return FeatureStore(np.concatenate([self.features, other.features]),
                            np.concatenate([self.labels, other.labels]))


def write_store(store: FeatureStore, path) -> None:
    rows, cols = store.shape
    with open(path, "wb") as fh:
        fh.write(_STORE_HEADER.pack(STORE_MAGIC, STORE_VERSION, store.count, rows, cols))
        fh.write(store.features.astype("<f4").tobytes())
        fh.write(store.labels.tobytes())


def read_store(path, expect_shape: tuple[int, int] | None = None) -> FeatureStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _STORE_HEADER.size:
        raise CorruptStoreError(f"{path}: truncated header")
    magic, version, count, rows, cols = _STORE_HEADER.unpack_from(blob)
    if magic != STORE_MAGIC:
        raise CorruptStoreError(f"{path}: bad magic {magic!r}")
    if version != STORE_VERSION:
        raise CorruptStoreError(f"{path}: unsupported version {version}")
    if expect_shape is not None and (rows, cols) != tuple(expect_shape):
        raise CorruptStoreError(f"{path}: matrices are {rows}x{cols}, expected "
                                f"{expect_shape[0]}x{expect_shape[1]}")
    n_feat = count * rows * cols * 4
    expected = _STORE_HEADER.size + n_feat + count * N_CLASSES
    if len(blob) != expected:
        raise CorruptStoreError(f"{path}: size {len(blob)} bytes, expected {expected}")
    off = _STORE_HEADER.size
    features = np.frombuffer(blob, "<f4", count * rows * cols, off).reshape(count, rows, cols)
    labels = np.frombuffer(blob, np.uint8, count * N_CLASSES, off + n_feat).reshape(count, N_CLASSES)
    if labels.size and labels.max() > 1:
        raise CorruptStoreError(f"{path}: label bytes must be 0 or 1")
    return FeatureStore(features.astype(np.float32), labels.copy())
