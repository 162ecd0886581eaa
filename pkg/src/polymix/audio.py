"""Audio clips, WAV I/O, standardization, segmentation and overlay.

Every DSP routine in the package operates on :class:`AudioClip`. Samples are
held as float64 internally; files on disk are written as float32.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.io.wavfile as wavfile
from scipy.signal import firwin, resample_poly

from .errors import ContractError, FormatError, SilentClipError, UnsupportedFormatError

log = logging.getLogger(__name__)

TARGET_RATE = 22050
TARGET_RMS = 0.1

# half-width of the resampling filter, in taps per polyphase branch
_SINC_HALF_TAPS = 32
_KAISER_BETA = 8.6


@dataclass
class AudioClip:
    """Samples plus sample rate.

    ``samples`` is 1-D for mono, or ``(n, channels)`` for undecoded stereo.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ContractError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def rms(self) -> float:
        return float(np.sqrt(np.mean(np.square(self.samples)))) if self.n_samples else 0.0

    def peak(self) -> float:
        return float(np.max(np.abs(self.samples))) if self.n_samples else 0.0


def load_wav(path) -> AudioClip:
    """Decode a PCM16, PCM24 or float32 WAV file into [-1, 1] samples.

    Stereo files keep both channels; :func:`standardize` downmixes.
    """
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        msg = str(exc)
        if "Unknown wave file format" in msg or "Unsupported bit depth" in msg:
            raise UnsupportedFormatError(f"{path}: {msg}") from exc
        raise FormatError(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise FormatError(f"{path}: truncated file") from exc

    if data.ndim == 2 and data.shape[1] > 2:
        raise UnsupportedFormatError(f"{path}: {data.shape[1]} channels (mono/stereo only)")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # scipy left-justifies 24-bit PCM into int32; 32-bit PCM is not accepted
        if not _is_24bit(path):
            raise UnsupportedFormatError(f"{path}: 32-bit integer PCM")
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedFormatError(f"{path}: sample type {data.dtype}")
    return AudioClip(samples, int(rate))


def _is_24bit(path) -> bool:
    with open(path, "rb") as fh:
        head = fh.read(4096)
    i = head.find(b"fmt ")
    if i < 0:
        return False
    bits = int.from_bytes(head[i + 22:i + 24], "little")
    return bits == 24


def write_wav(path, clip: AudioClip) -> None:
    """Write ``clip`` as float32 WAV at its own sample rate."""
    wavfile.write(path, clip.sample_rate, clip.samples.astype(np.float32))


def to_mono(clip: AudioClip) -> AudioClip:
    if clip.samples.ndim == 1:
        return clip
    return AudioClip(clip.samples.mean(axis=1), clip.sample_rate)


def sinc_filter(up: int, down: int) -> np.ndarray:
    """Kaiser-windowed sinc low-pass for an ``up/down`` polyphase resampler."""
    max_rate = max(up, down)
    n_taps = 2 * _SINC_HALF_TAPS * max_rate + 1
    return firwin(n_taps, 1.0 / max_rate, window=("kaiser", _KAISER_BETA))


def resample(samples: np.ndarray, orig_rate: int, target_rate: int) -> np.ndarray:
    """Band-limited resampling of a 1-D signal between integer rates."""
    if orig_rate == target_rate:
        return np.array(samples, dtype=np.float64)
    frac = Fraction(target_rate, orig_rate)
    return resample_by(samples, frac.numerator, frac.denominator)


def resample_by(samples: np.ndarray, up: int, down: int) -> np.ndarray:
    """Resample by the rational factor ``up/down``; output has ceil(n*up/down) samples."""
    if up == down:
        return np.array(samples, dtype=np.float64)
    return resample_poly(np.asarray(samples, dtype=np.float64), up, down,
                         window=sinc_filter(up, down))


def standardize(clip: AudioClip, target_rate: int = TARGET_RATE,
                target_rms: float = TARGET_RMS) -> AudioClip:
    """Downmix, resample and RMS-normalize a clip.

    If reaching ``target_rms`` would push the peak above 1 the whole clip is
    rescaled so the peak is exactly 1, and the lower RMS is logged.
    """
    if clip.n_samples == 0:
        raise ContractError("cannot standardize an empty clip")
    if target_rate <= 0 or target_rms <= 0:
        raise ContractError("target_rate and target_rms must be positive")
    mono = to_mono(clip)
    samples = resample(mono.samples, mono.sample_rate, target_rate)
    rms = float(np.sqrt(np.mean(samples ** 2)))
    if rms == 0.0:
        raise SilentClipError("clip is silent; RMS normalization undefined")
    samples = samples * (target_rms / rms)
    peak = float(np.max(np.abs(samples)))
    if peak > 1.0:
        samples = samples / peak
        log.debug("peak limit: RMS reduced from %.4f to %.4f", target_rms, target_rms / peak)
    return AudioClip(samples, target_rate)


def segment_clip(clip: AudioClip, seg_seconds: float = 1.0) -> list[AudioClip]:
    """Cut into consecutive non-overlapping segments, dropping the remainder."""
    if seg_seconds <= 0:
        raise ContractError("seg_seconds must be positive")
    seg_len = int(round(seg_seconds * clip.sample_rate))
    count = clip.n_samples // seg_len
    return [AudioClip(clip.samples[i * seg_len:(i + 1) * seg_len].copy(), clip.sample_rate)
            for i in range(count)]


def peak_limit(samples: np.ndarray) -> np.ndarray:
    peak = float(np.max(np.abs(samples))) if samples.size else 0.0
    return samples / peak if peak > 1.0 else samples


def overlay(a: AudioClip, b: AudioClip) -> AudioClip:
    """Sample-wise sum of two equal-length clips, peak-limited to 1."""
    if a.sample_rate != b.sample_rate:
        raise ContractError(f"rate mismatch: {a.sample_rate} vs {b.sample_rate}")
    if a.samples.shape != b.samples.shape:
        raise ContractError(f"length mismatch: {a.samples.shape} vs {b.samples.shape}")
    return AudioClip(peak_limit(a.samples + b.samples), a.sample_rate)


def tone(freq: float, seconds: float, rate: int = TARGET_RATE, amp: float = 0.5,
         phase: float = 0.0) -> AudioClip:
    """Pure sine, mostly for tests and examples."""
    t = np.arange(int(round(seconds * rate))) / rate
    return AudioClip(amp * np.sin(2 * np.pi * freq * t + phase), rate)
