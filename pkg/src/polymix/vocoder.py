"""Phase-locked phase vocoder used for time stretching and pitch shifting.

Analysis frames are read at fractional hops ``ratio * HOP`` and written at the
fixed synthesis hop. Peak bins advance their phase by the instantaneous
frequency measured between the analysis frame and a frame one synthesis hop
earlier; all other bins are locked to the nearest peak (identity phase
locking). At ``ratio == 1`` the output reproduces the input to rounding error.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from .audio import resample_by

N_FFT = 1024
HOP = 256
_TWO_PI = 2.0 * np.pi


@lru_cache(maxsize=2)
def _window(n):
    return get_window("hann", n, fftbins=True)


def _princarg(phase):
    return phase - _TWO_PI * np.round(phase / _TWO_PI)


def _peak_owner(mag: np.ndarray) -> np.ndarray:
    """For every bin, the index of the nearest spectral peak."""
    n = mag.shape[0]
    padded = np.concatenate(([-1.0, -1.0], mag, [-1.0, -1.0]))
    centre = padded[2:-2]
    is_peak = ((centre > padded[1:-3]) & (centre >= padded[3:-1])
               & (centre > padded[:-4]) & (centre >= padded[4:]))
    peaks = np.flatnonzero(is_peak & (centre > 0))
    if peaks.size == 0:
        return np.arange(n)
    bounds = (peaks[:-1] + peaks[1:]) / 2.0
    return peaks[np.searchsorted(bounds, np.arange(n))]


def stretch(samples: np.ndarray, ratio: float, out_len: int | None = None) -> np.ndarray:
    """Play ``samples`` ``ratio`` times faster without changing pitch.

    The result has ``round(len / ratio)`` samples unless ``out_len`` is given.
    """
    x = np.asarray(samples, dtype=np.float64)
    if out_len is None:
        out_len = int(round(len(x) / ratio))
    if len(x) == 0 or out_len == 0:
        return np.zeros(out_len)
    win = _window(N_FFT)
    half = N_FFT // 2
    n_frames = int(np.ceil((out_len + half) / HOP)) + 1
    centres = np.round(np.arange(n_frames) * HOP * ratio).astype(np.int64)

    # input coordinate c maps to padded index c + N_FFT
    right = max(0, int(centres[-1]) + N_FFT + half + 1 - len(x))
    xp = np.pad(x, (N_FFT, right))
    views = sliding_window_view(xp, N_FFT)
    cur = np.fft.rfft(views[centres + N_FFT - half] * win, axis=1)
    prev = np.fft.rfft(views[centres + N_FFT - half - HOP] * win, axis=1)

    omega = _TWO_PI * np.arange(N_FFT // 2 + 1) * HOP / N_FFT
    mag = np.abs(cur)
    phase = np.angle(cur)
    advance = omega + _princarg(phase - np.angle(prev) - omega)

    out = np.zeros(out_len + 2 * N_FFT + HOP * 2)
    wss = np.zeros_like(out)
    synth = phase[0].copy()
    for m in range(n_frames):
        if m > 0:
            owner = _peak_owner(mag[m])
            peak_phase = synth[owner] + advance[m, owner]
            synth = peak_phase + phase[m] - phase[m, owner]
        frame = np.fft.irfft(mag[m] * np.exp(1j * synth), N_FFT) * win
        start = m * HOP + N_FFT - half
        if start >= len(out):
            break
        stop = min(start + N_FFT, len(out))
        out[start:stop] += frame[:stop - start]
        wss[start:stop] += win[:stop - start] ** 2
    y = out[N_FFT:N_FFT + out_len]
    norm = wss[N_FFT:N_FFT + out_len]
    return np.where(norm > 1e-8, y / np.maximum(norm, 1e-8), 0.0)


@lru_cache(maxsize=64)
def _rational(factor: float) -> tuple[int, int]:
    frac = Fraction(factor).limit_denominator(256)
    return frac.numerator, frac.denominator


def shift(samples: np.ndarray, semitones: float) -> np.ndarray:
    """Pitch shift by ``semitones``, keeping the sample count unchanged."""
    x = np.asarray(samples, dtype=np.float64)
    if semitones == 0:
        return x.copy()
    factor = 2.0 ** (semitones / 12.0)
    # lengthen by the pitch factor, then resample back to the original length
    longer = stretch(x, 1.0 / factor, out_len=int(round(len(x) * factor)))
    up, down = _rational(1.0 / factor)
    y = resample_by(longer, up, down)
    if len(y) >= len(x):
        return y[:len(x)]
    return np.pad(y, (0, len(x) - len(y)))
