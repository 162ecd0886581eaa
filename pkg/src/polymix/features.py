"""Constant-Q front end producing the 96x87 model input."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from .audio import TARGET_RATE, AudioClip
from .errors import ContractError

N_BINS = 96
BINS_PER_OCTAVE = 12
HOP = 256
F_MIN = 32.70319566257483  # C1
CLIP_SAMPLES = TARGET_RATE
N_FRAMES = CLIP_SAMPLES // HOP + 1
DB_FLOOR = -80.0


@dataclass
class Spectrogram:
    data: np.ndarray
    bins_per_octave: int = BINS_PER_OCTAVE
    f_min: float = F_MIN
    hop: int = HOP


def bin_frequencies(n_bins=N_BINS, f_min=F_MIN, bins_per_octave=BINS_PER_OCTAVE) -> np.ndarray:
    return f_min * 2.0 ** (np.arange(n_bins) / bins_per_octave)


class KernelBank:
    """Hann-windowed complex exponentials, one per constant-Q bin.

    Each kernel is normalized by its window sum, so a unit-amplitude sinusoid
    at a bin centre yields a magnitude of 0.5 in that bin.
    """

    def __init__(self, rate=TARGET_RATE, n_bins=N_BINS, f_min=F_MIN,
                 bins_per_octave=BINS_PER_OCTAVE):
        self.rate = rate
        self.freqs = bin_frequencies(n_bins, f_min, bins_per_octave)
        self.q = 1.0 / (2.0 ** (1.0 / bins_per_octave) - 1.0)
        self.kernels = []
        for f in self.freqs:
            length = int(np.ceil(self.q * rate / f))
            win = get_window("hann", length, fftbins=False)
            offsets = np.arange(length) - length // 2
            kern = win * np.exp(2j * np.pi * f * offsets / rate) / win.sum()
            # store the conjugate so correlation is a plain dot product
            self.kernels.append(np.conj(kern))
        self.max_len = max(len(k) for k in self.kernels)
        self.pad = self.max_len // 2 + 1
        self._spectra = None

    def frequency_kernels(self, n_fft: int) -> np.ndarray:
        """Kernels centred in an ``n_fft`` frame, transformed: (n_fft, n_bins)."""
        if self._spectra is None or self._spectra.shape[0] != n_fft:
            bank = np.zeros((n_fft, len(self.kernels)), dtype=complex)
            for k, kern in enumerate(self.kernels):
                start = n_fft // 2 - len(kern) // 2
                bank[start:start + len(kern), k] = kern
            self._spectra = np.conj(np.fft.fft(np.conj(bank), axis=0))
        return self._spectra


@lru_cache(maxsize=4)
def kernel_bank(rate=TARGET_RATE) -> KernelBank:
    return KernelBank(rate)


def _check(clip: AudioClip):
    if clip.samples.ndim != 1:
        raise ContractError("cqt expects a mono clip")
    if clip.sample_rate != TARGET_RATE:
        raise ContractError(f"cqt expects {TARGET_RATE} Hz, got {clip.sample_rate}")
    if clip.n_samples != CLIP_SAMPLES:
        raise ContractError(f"cqt expects exactly {CLIP_SAMPLES} samples, got {clip.n_samples}")


def cqt(clip: AudioClip, method: str = "direct") -> np.ndarray:
    """Constant-Q magnitudes, shape (96, 87), for a 1-second 22.05 kHz clip.

    Frames are centred on multiples of the hop over a reflect-padded signal.
    ``method="fft"`` evaluates the same correlations in the frequency domain.
    """
    _check(clip)
    bank = kernel_bank(clip.sample_rate)
    out = np.empty((len(bank.kernels), N_FRAMES))
    if method == "direct":
        padded = np.pad(clip.samples, bank.pad, mode="reflect")
        centres = bank.pad + HOP * np.arange(N_FRAMES)
        for k, kern in enumerate(bank.kernels):
            frames = sliding_window_view(padded, len(kern))[centres - len(kern) // 2]
            out[k] = np.abs(frames @ kern)
    elif method == "fft":
        n_fft = 1 << int(np.ceil(np.log2(bank.max_len)))
        padded = np.pad(clip.samples, n_fft // 2, mode="reflect")
        centres = n_fft // 2 + HOP * np.arange(N_FRAMES)
        frames = sliding_window_view(padded, n_fft)[centres - n_fft // 2]
        spectra = np.fft.fft(frames, axis=1)
        out[:] = np.abs(spectra @ bank.frequency_kernels(n_fft) / n_fft).T
    else:
        raise ValueError(f"unknown method {method!r}")
    return out


def scale_db(mag: np.ndarray, floor_db: float = DB_FLOOR) -> Spectrogram:
    """Map magnitudes to [0, 1]: dB relative to the peak, floored, then affine."""
    mag = np.asarray(mag, dtype=np.float64)
    if np.any(mag < 0):
        raise ContractError("magnitudes must be non-negative")
    peak = mag.max() if mag.size else 0.0
    if peak == 0.0:
        return Spectrogram(np.zeros_like(mag))
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag / peak)
    db = np.maximum(db, floor_db)
    return Spectrogram((db - floor_db) / -floor_db)


def extract(clip: AudioClip) -> np.ndarray:
    """Model input for one 1-second clip: scaled CQT as float32."""
    return scale_db(cqt(clip)).data.astype(np.float32)


def _extract_job(clip):
    return extract(clip)


def extract_many(clips, jobs: int = 1) -> np.ndarray:
    """Stack ``extract`` over clips, optionally across worker processes.

    Output order follows input order regardless of ``jobs``.
    """
    clips = list(clips)
    if not clips:
        return np.zeros((0, N_BINS, N_FRAMES), np.float32)
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as pool:
            feats = list(pool.map(_extract_job, clips, chunksize=16))
    else:
        feats = [extract(c) for c in clips]
    return np.stack(feats)
