"""Audio framing, STFT, mel filterbank, MFCC and a spectral-gating denoiser."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_SAMPLE_RATE = 44100
DEFAULT_CHUNK_MS = 100


@dataclass(frozen=True)
class AudioChunk:
    samples: np.ndarray
    sample_rate_hz: int
    t_start_us: int

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def t_end_us(self) -> int:
        return self.t_start_us + len(self.samples) * 1_000_000 // self.sample_rate_hz


@dataclass(frozen=True)
class Spectrogram:
    values: np.ndarray
    bin_freqs_hz: np.ndarray
    frame_times_s: np.ndarray

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class MelConfig:
    fft_size: int = 512
    hop: int = 128
    n_mels: int = 64
    # 900 Hz is the lowest floor for which 64 bands get distinct centre bins at 512/44.1k
    fmin_hz: float = 900.0
    fmax_hz: Optional[float] = None
    log_floor: float = 1e-10
    n_mfcc: int = 20

    def resolved_fmax(self, sample_rate_hz: int) -> float:
        return sample_rate_hz / 2 if self.fmax_hz is None else float(self.fmax_hz)

    def validate(self, sample_rate_hz: int) -> None:
        fmax = self.resolved_fmax(sample_rate_hz)
        if not 0 <= self.fmin_hz < fmax <= sample_rate_hz / 2:
            raise ValueError(
                f"need 0 <= fmin < fmax <= sr/2, got fmin={self.fmin_hz}, fmax={fmax}, sr={sample_rate_hz}"
            )
        if not 0 < self.hop <= self.fft_size:
            raise ValueError(f"hop must be in (0, fft_size], got {self.hop}")
        if not 0 < self.n_mfcc <= self.n_mels:
            raise ValueError(f"n_mfcc must be in (0, n_mels], got {self.n_mfcc}")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")


def frame_signal(samples, sample_rate_hz: int, chunk_ms: int = DEFAULT_CHUNK_MS, t0_us: int = 0) -> List[AudioChunk]:
    """Split a signal into consecutive, non-overlapping fixed-length chunks.

    The trailing partial chunk is discarded so every chunk has the same length.
    """
    if sample_rate_hz <= 0 or chunk_ms <= 0:
        raise ValueError("sample_rate_hz and chunk_ms must be positive")
    x = np.asarray(samples)
    if x.size == 0:
        return []
    bad = np.flatnonzero(~np.isfinite(x))
    if bad.size:
        raise ValueError(f"non-finite sample at index {int(bad[0])}")
    n = int(round(sample_rate_hz * chunk_ms / 1000))
    step_us = chunk_ms * 1000
    return [
        AudioChunk(x[k * n:(k + 1) * n], sample_rate_hz, t0_us + k * step_us)
        for k in range(len(x) // n)
    ]


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window (DFT-even), as used for STFT analysis."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def _frames(x: np.ndarray, fft_size: int, hop: int) -> np.ndarray:
    return sliding_window_view(x, fft_size)[::hop]


def stft_magnitude(chunk: AudioChunk, cfg: MelConfig = MelConfig()) -> Spectrogram:
    x = np.asarray(chunk.samples, dtype=np.float64)
    if len(x) < cfg.fft_size:
        raise ValueError(f"chunk has {len(x)} samples; at least fft_size={cfg.fft_size} required")
    frames = _frames(x, cfg.fft_size, cfg.hop) * hann_window(cfg.fft_size)
    mag = np.abs(np.fft.rfft(frames, axis=1)).T
    sr = chunk.sample_rate_hz
    freqs = np.arange(cfg.fft_size // 2 + 1) * sr / cfg.fft_size
    times = (np.arange(mag.shape[1]) * cfg.hop + cfg.fft_size / 2) / sr
    return Spectrogram(mag, freqs, times)


def hz_to_mel(f_hz):
    f = np.asarray(f_hz, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency must be non-negative")
    m = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(m) if m.ndim == 0 else m


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError("mel value must be non-negative")
    f = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(f) if f.ndim == 0 else f


def mel_center_bins(cfg: MelConfig, sample_rate_hz: int) -> np.ndarray:
    """FFT bin indices of the n_mels + 2 mel-spaced edge/centre points."""
    fmax = cfg.resolved_fmax(sample_rate_hz)
    mels = np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(fmax), cfg.n_mels + 2)
    return np.floor(mel_to_hz(mels) * cfg.fft_size / sample_rate_hz + 0.5).astype(int)


def mel_filterbank(cfg: MelConfig, sample_rate_hz: int) -> np.ndarray:
    """Triangular filters, linear in FFT-bin index, each peaking at 1.0 on its centre bin."""
    cfg.validate(sample_rate_hz)
    pts = mel_center_bins(cfg, sample_rate_hz)
    dup = np.flatnonzero(np.diff(pts) <= 0)
    if dup.size:
        raise ValueError(
            f"n_mels={cfg.n_mels} too large for fft_size={cfg.fft_size}: "
            f"points {int(dup[0])} and {int(dup[0]) + 1} share bin {int(pts[dup[0]])}"
        )
    k = np.arange(cfg.fft_size // 2 + 1, dtype=np.float64)
    lo, mid, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    rising = (k - lo) / (mid - lo)
    falling = (hi - k) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def power_to_log_mel(power: np.ndarray, fb: np.ndarray, log_floor: float) -> np.ndarray:
    return np.log(fb @ power + log_floor)


def mel_spectrogram(chunk: AudioChunk, cfg: MelConfig = MelConfig()) -> Spectrogram:
    """Natural-log mel power spectrogram, shape (n_mels, n_frames)."""
    spec = stft_magnitude(chunk, cfg)
    fb = mel_filterbank(cfg, chunk.sample_rate_hz)
    values = power_to_log_mel(spec.values ** 2, fb, cfg.log_floor)
    pts = mel_center_bins(cfg, chunk.sample_rate_hz)[1:-1]
    return Spectrogram(values, pts * chunk.sample_rate_hz / cfg.fft_size, spec.frame_times_s)


def dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Rows of the orthonormal DCT-II basis (first n_out of n_in)."""
    k = np.arange(n_out)[:, None]
    n = np.arange(n_in)[None, :]
    basis = np.cos(np.pi * k * (2 * n + 1) / (2 * n_in)) * np.sqrt(2.0 / n_in)
    basis[0] /= np.sqrt(2.0)
    return basis


def mfcc(chunk: AudioChunk, cfg: MelConfig = MelConfig()) -> np.ndarray:
    log_mel = mel_spectrogram(chunk, cfg).values
    return dct_matrix(cfg.n_mfcc, cfg.n_mels) @ log_mel


def _istft_wola(spec: np.ndarray, fft_size: int, hop: int, length: int) -> np.ndarray:
    win = hann_window(fft_size)
    frames = np.fft.irfft(spec, n=fft_size, axis=1) * win
    out = np.zeros(length)
    norm = np.zeros(length)
    for j, fr in enumerate(frames):
        s = j * hop
        out[s:s + fft_size] += fr
        norm[s:s + fft_size] += win ** 2
    return out / np.where(norm > 1e-8, norm, 1.0)


def _padded_stft(x: np.ndarray, fft_size: int, hop: int):
    pad = fft_size
    total = len(x) + 2 * pad
    total += (-(total - fft_size)) % hop
    xp = np.zeros(total)
    xp[pad:pad + len(x)] = x
    frames = _frames(xp, fft_size, hop) * hann_window(fft_size)
    return np.fft.rfft(frames, axis=1), pad, total


def estimate_noise_floor(noise, cfg: MelConfig = MelConfig(), n_std: float = 1.5) -> np.ndarray:
    """Per-bin gate threshold from a noise-only recording: mean + n_std * std of magnitudes."""
    spec, _, _ = _padded_stft(np.asarray(noise, dtype=np.float64), cfg.fft_size, cfg.hop)
    mag = np.abs(spec)
    return mag.mean(axis=0) + n_std * mag.std(axis=0)


def denoise_spectral_gate(signal, noise_floor, strength: float = 1.0, cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Zero STFT bins whose magnitude falls below strength * noise_floor, then resynthesize.

    This is a simple stand-in denoiser; phase is kept and the output has the
    input's length.
    """
    x = np.asarray(signal, dtype=np.float64)
    floor = np.asarray(noise_floor, dtype=np.float64)
    if floor.shape != (cfg.fft_size // 2 + 1,):
        raise ValueError(f"noise_floor must have {cfg.fft_size // 2 + 1} bins, got {floor.shape}")
    if not 0.0 <= strength <= 1.0:
        raise ValueError("strength must be in [0, 1]")
    if x.size == 0:
        return x.copy()
    spec, pad, total = _padded_stft(x, cfg.fft_size, cfg.hop)
    keep = np.abs(spec) >= strength * floor
    y = _istft_wola(spec * keep, cfg.fft_size, cfg.hop, total)
    return y[pad:pad + len(x)]
