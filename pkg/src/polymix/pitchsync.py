"""Pitch tracking, semitone shift plans and pitch-synchronized mixing.

Frames are 10 ms long. Frame ``i`` covers samples
``[round(i * hop), round((i + 1) * hop))`` with ``hop = 0.01 * rate``, and its
64 ms analysis window is centred on the middle of that span (shifted inward
where it would overhang either end of the clip).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import uniform_filter1d

from . import vocoder
from .audio import AudioClip, overlay
from .errors import ContractError, OutOfRangeError

FRAME_S = 0.010
WINDOW_S = 0.064
THRESHOLD = 0.15
F_LOW = 50.0
F_HIGH = 2000.0
MEDIAN_KERNEL = 9
MIN_SEGMENT_FRAMES = 7
MAX_SHIFT = 24
CROSSFADE_S = 0.010


@dataclass
class PitchTrack:
    f0: np.ndarray           # Hz, 0 where unvoiced
    confidence: np.ndarray   # 1 - min normalized difference
    hop_s: float = FRAME_S

    def __len__(self):
        return len(self.f0)

    @property
    def voiced(self) -> np.ndarray:
        return self.f0 > 0


@dataclass
class ShiftPlan:
    """Piecewise-constant integer semitone shifts over 10 ms frames."""

    segments: list  # (start_frame, end_frame, semitones)

    @property
    def n_frames(self) -> int:
        return self.segments[-1][1] if self.segments else 0

    def per_frame(self) -> np.ndarray:
        out = np.zeros(self.n_frames, dtype=np.int64)
        for start, end, s in self.segments:
            out[start:end] = s
        return out

    @classmethod
    def constant(cls, n_frames: int, semitones: int) -> ShiftPlan:
        return cls([(0, n_frames, int(semitones))])

    def to_json(self) -> list:
        return [list(map(int, seg)) for seg in self.segments]


def n_frames_for(n_samples: int, rate: int) -> int:
    return int(np.ceil(n_samples / (FRAME_S * rate)))


def frame_bounds(n_frames: int, n_samples: int, rate: int) -> np.ndarray:
    """Sample index where each frame starts, plus the end of the last one."""
    hop = FRAME_S * rate
    edges = np.round(np.arange(n_frames + 1) * hop).astype(np.int64)
    edges[-1] = n_samples
    return np.minimum(edges, n_samples)


def _difference(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """YIN difference function d(tau) for tau = 0..max_lag, one row per frame."""
    length = frames.shape[1]
    width = length - max_lag
    n_fft = 1 << int(np.ceil(np.log2(length + width)))
    spectra = np.fft.rfft(frames, n_fft, axis=1)
    head = np.fft.rfft(frames[:, :width], n_fft, axis=1)
    cross = np.fft.irfft(spectra * np.conj(head), n_fft, axis=1)[:, :max_lag + 1]
    sq = np.concatenate([np.zeros((len(frames), 1)), np.cumsum(frames ** 2, axis=1)], axis=1)
    lags = np.arange(max_lag + 1)
    energy_head = sq[:, width][:, None]
    energy_shift = sq[:, lags + width] - sq[:, lags]
    return np.maximum(energy_head + energy_shift - 2.0 * cross, 0.0)


def track_pitch(clip: AudioClip, threshold: float = THRESHOLD,
                f_low: float = F_LOW, f_high: float = F_HIGH) -> PitchTrack:
    """Per-10 ms fundamental frequency of a monophonic clip (YIN-style)."""
    if clip.samples.ndim != 1:
        raise ContractError("track_pitch expects a mono clip")
    rate = clip.sample_rate
    length = int(round(WINDOW_S * rate))
    if clip.n_samples < length:
        return PitchTrack(np.zeros(0), np.zeros(0))
    max_lag = int(np.ceil(rate / f_low))
    min_lag = max(2, int(np.floor(rate / f_high)))
    n = n_frames_for(clip.n_samples, rate)
    hop = FRAME_S * rate
    centres = np.round((np.arange(n) + 0.5) * hop).astype(np.int64)
    # edge windows are pulled inside the clip rather than zero-padded
    starts = np.clip(centres - length // 2, 0, clip.n_samples - length)
    frames = sliding_window_view(clip.samples, length)[starts]

    diff = _difference(frames, max_lag)
    cum = np.cumsum(diff[:, 1:], axis=1)
    lags = np.arange(1, max_lag + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cmnd = np.where(cum > 0, diff[:, 1:] * lags / cum, 1.0)
    cmnd = np.concatenate([np.ones((n, 1)), cmnd], axis=1)

    energy = np.sum(frames[:, :length - max_lag] ** 2, axis=1)
    f0 = np.zeros(n)
    conf = np.zeros(n)
    search = cmnd[:, min_lag:max_lag]
    for i in range(n):
        if energy[i] < 1e-10:
            continue
        row = search[i]
        conf[i] = np.clip(1.0 - row.min(), 0.0, 1.0)
        below = np.flatnonzero(row < threshold)
        if below.size == 0:
            continue
        tau = below[0] + min_lag
        while tau + 1 < max_lag and cmnd[i, tau + 1] < cmnd[i, tau]:
            tau += 1
        f0[i] = rate / _refine(diff[i], tau)
    return PitchTrack(f0, conf)


def _refine(curve: np.ndarray, tau: int) -> float:
    """Parabolic interpolation of a minimum at integer lag ``tau``."""
    if tau <= 0 or tau + 1 >= len(curve):
        return float(tau)
    a, b, c = curve[tau - 1], curve[tau], curve[tau + 1]
    denom = a - 2 * b + c
    if denom <= 0:
        return float(tau)
    return tau + 0.5 * (a - c) / denom


def compute_shift_track(a: PitchTrack, b: PitchTrack) -> np.ndarray:
    """Rounded semitones that move ``b`` onto ``a``; 0 where either is unvoiced."""
    if len(a) != len(b):
        raise ContractError(f"frame count mismatch: {len(a)} vs {len(b)}")
    both = a.voiced & b.voiced
    out = np.zeros(len(a), dtype=np.int64)
    out[both] = np.round(12.0 * np.log2(a.f0[both] / b.f0[both])).astype(np.int64)
    return out


def median_smooth(raw: np.ndarray, kernel: int = MEDIAN_KERNEL) -> np.ndarray:
    """Running median; near the edges the window shrinks symmetrically.

    Windows stay odd-sized, so outputs remain integers and every plan produced
    by :func:`smooth_shift_track` is a fixed point of the filter.
    """
    raw = np.asarray(raw, dtype=np.int64)
    n = len(raw)
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        r = min(kernel // 2, i, n - 1 - i)
        out[i] = np.median(raw[i - r:i + r + 1])
    return out


def run_lengths(values) -> list:
    segments = []
    start = 0
    for i in range(1, len(values) + 1):
        if i == len(values) or values[i] != values[start]:
            segments.append((start, i, int(values[start])))
            start = i
    return segments


def merge_segments(segments: list, min_frames: int = MIN_SEGMENT_FRAMES) -> list:
    """Fold segments into their predecessor until no merge rule fires.

    A segment merges when its shift is within 1 semitone of the predecessor's
    or when it is shorter than ``min_frames``; the predecessor's shift wins. A
    short first segment has no predecessor and is kept.
    """
    segs = [list(s) for s in segments]
    changed = True
    while changed:
        out = []
        for seg in segs:
            if out:
                prev = out[-1]
                if abs(seg[2] - prev[2]) <= 1 or seg[1] - seg[0] < min_frames:
                    prev[1] = seg[1]
                    continue
            out.append(seg)
        changed = len(out) != len(segs)
        segs = out
    return [tuple(s) for s in segs]


def smooth_shift_track(raw) -> ShiftPlan:
    raw = np.asarray(raw, dtype=np.int64)
    if raw.size == 0:
        raise ContractError("shift track must be non-empty")
    return ShiftPlan(merge_segments(run_lengths(median_smooth(raw))))


def apply_pitch_shift(clip: AudioClip, plan: ShiftPlan) -> AudioClip:
    """Shift each plan segment by its semitone amount, duration preserved.

    Every distinct shift is rendered over the whole clip and the renders are
    stitched along the plan with 10 ms linear cross-fades.
    """
    n_frames = n_frames_for(clip.n_samples, clip.sample_rate)
    if plan.n_frames != n_frames:
        raise ContractError(f"plan covers {plan.n_frames} frames, clip has {n_frames}")
    for _, _, s in plan.segments:
        if abs(s) > MAX_SHIFT:
            raise OutOfRangeError(f"shift of {s} semitones exceeds +/-{MAX_SHIFT}")
    shifts = sorted({s for _, _, s in plan.segments})
    if len(shifts) == 1:
        return AudioClip(_render(clip.samples, shifts[0]), clip.sample_rate)

    edges = frame_bounds(n_frames, clip.n_samples, clip.sample_rate)
    fade = max(1, int(round(CROSSFADE_S * clip.sample_rate)))
    out = np.zeros(clip.n_samples)
    for s in shifts:
        mask = np.zeros(clip.n_samples)
        for start, end, seg_s in plan.segments:
            if seg_s == s:
                mask[edges[start]:edges[end]] = 1.0
        weight = uniform_filter1d(mask, fade, mode="nearest")
        out += weight * _render(clip.samples, s)
    return AudioClip(out, clip.sample_rate)


def _render(samples, semitones):
    return vocoder.shift(samples, semitones)


def mix_pitch_sync(a: AudioClip, b: AudioClip) -> tuple[AudioClip, ShiftPlan]:
    """Align ``b``'s pitch to ``a`` frame by frame, then overlay the two."""
    track_a = track_pitch(a)
    track_b = track_pitch(b)
    plan = smooth_shift_track(compute_shift_track(track_a, track_b))
    shifted = apply_pitch_shift(b, plan)
    return overlay(a, shifted), plan
