"""PCM audio -> normalized log-mel spectrograms -> (context, future) windows."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np

LOG_FLOOR = 1e-10


class WavError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


@dataclass
class PcmSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("PcmSignal must be mono")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("PcmSignal samples must be finite")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MelSpectrogram:
    frames: np.ndarray
    frame_shift_s: float
    n_mels: int


@dataclass
class NormalizationStats:
    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise ValueError(f"invalid normalization stats lo={self.lo} hi={self.hi}")


@dataclass
class NormalizedSpectrogram:
    frames: np.ndarray
    frame_shift_s: float
    n_mels: int


@dataclass
class WindowPair:
    context: np.ndarray
    future: np.ndarray
    origin_frame: int


@dataclass
class FrontendConfig:
    frame_len_s: float = 0.025
    frame_shift_s: float = 0.010
    n_mels: int = 128
    fmin: float = 20.0
    fmax: float | None = None
    context_frames: int = 128
    future_frames: int = 256
    stride: int = 16


# --- WAV ---------------------------------------------------------------------


def load_wav(data: bytes) -> PcmSignal:
    """Decode a RIFF/WAVE byte string holding PCM-16 or float-32 audio."""
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavError("malformed header", 0)
    pos = 12
    fmt = None
    payload = None
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = pos + 8
        if cid == b"fmt ":
            if size < 16 or body + size > len(data):
                raise WavError("malformed header", pos)
            tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", data, body)
            if tag == 0xFFFE and size >= 40:
                (tag,) = struct.unpack_from("<H", data, body + 24)
            fmt = (tag, channels, rate, bits, pos)
        elif cid == b"data":
            if fmt is None:
                raise WavError("malformed header: data chunk before fmt chunk", pos)
            if body + size > len(data):
                raise WavError("truncated data chunk", len(data))
            payload = (body, size)
            break
        pos = body + size + (size & 1)
    if fmt is None:
        raise WavError("malformed header: missing fmt chunk", pos)
    if payload is None:
        raise WavError("truncated data chunk: no data chunk found", pos)
    tag, channels, rate, bits, fmt_pos = fmt
    if channels not in (1, 2):
        raise WavError(f"unsupported channel count {channels}", fmt_pos + 10)
    if tag == 1 and bits == 16:
        dtype, scale = "<i2", 1.0 / 32768.0
    elif tag == 3 and bits == 32:
        dtype, scale = "<f4", 1.0
    else:
        raise WavError(f"unsupported codec (format tag {tag}, {bits} bits)", fmt_pos + 8)
    body, size = payload
    width = np.dtype(dtype).itemsize * channels
    if size % width:
        raise WavError("truncated data chunk", body + size - size % width)
    raw = np.frombuffer(data, dtype=dtype, count=size // np.dtype(dtype).itemsize, offset=body)
    samples = raw.astype(np.float64) * scale
    if channels == 2:
        samples = samples.reshape(-1, 2).mean(axis=1)
    return PcmSignal(samples, rate)


def dump_wav(signal: PcmSignal) -> bytes:
    """Encode as mono PCM-16."""
    pcm = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2").tobytes()
    header = struct.pack("<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(pcm), b"WAVE", b"fmt ", 16, 1, 1,
                         signal.sample_rate, signal.sample_rate * 2, 2, 16, b"data", len(pcm))
    return header + pcm


# --- spectral analysis -------------------------------------------------------


def frame_geometry(sample_rate: int, frame_len_s: float, frame_shift_s: float) -> tuple[int, int, int]:
    """(window length, hop, FFT size) in samples."""
    win = int(round(frame_len_s * sample_rate))
    hop = int(round(frame_shift_s * sample_rate))
    nfft = 1 << (win - 1).bit_length()
    return win, hop, nfft


def num_frames(n_samples: int, win: int, hop: int) -> int:
    return (n_samples - win) // hop + 1 if n_samples >= win else 0


def stft_power(signal: PcmSignal, frame_len_s: float = 0.025, frame_shift_s: float = 0.010) -> np.ndarray:
    """Hann-windowed power spectrum, one row per frame, shape T x (nfft/2 + 1)."""
    if not frame_len_s >= frame_shift_s > 0:
        raise ValueError("need frame_len_s >= frame_shift_s > 0")
    win, hop, nfft = frame_geometry(signal.sample_rate, frame_len_s, frame_shift_s)
    n = num_frames(len(signal.samples), win, hop)
    if n < 1:
        raise ValueError(f"signal of {len(signal.samples)} samples is shorter than one frame ({win})")
    frames = np.lib.stride_tricks.sliding_window_view(signal.samples, win)[::hop][:n]
    spectrum = np.fft.rfft(frames * np.hanning(win), n=nfft, axis=1)
    return spectrum.real**2 + spectrum.imag**2


def hz_to_mel(f):
    return 1127.0 * np.log(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (np.exp(np.asarray(m, dtype=np.float64) / 1127.0) - 1.0)


def mel_edges(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """n_mels + 2 equally mel-spaced edge points (mel units)."""
    return np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)


def mel_center_frequencies(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    return mel_to_hz(mel_edges(n_mels, fmin, fmax)[1:-1])


def mel_filterbank(n_bins: int, sample_rate: int, n_mels: int = 128, fmin: float = 20.0,
                   fmax: float | None = None) -> np.ndarray:
    """Triangular filters (triangles in the mel domain), shape n_mels x n_bins."""
    fmax = sample_rate / 2 if fmax is None else fmax
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    if not 0 <= fmin < fmax <= sample_rate / 2:
        raise ValueError(f"need 0 <= fmin < fmax <= Nyquist, got fmin={fmin} fmax={fmax}")
    if n_mels > n_bins:
        raise ValueError(f"n_mels={n_mels} exceeds the number of DFT bins ({n_bins})")
    nfft = 2 * (n_bins - 1)
    bin_mel = hz_to_mel(np.arange(n_bins) * sample_rate / nfft)
    edges = mel_edges(n_mels, fmin, fmax)
    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (bin_mel - left) / (center - left)
    down = (right - bin_mel) / (right - center)
    bank = np.clip(np.minimum(up, down), 0.0, None)
    empty = np.flatnonzero(bank.sum(axis=1) <= 0)
    if empty.size:
        raise ValueError(f"mel filter {int(empty[0])} covers no DFT bin; reduce n_mels, raise fmin, "
                         "or use a longer frame")
    return bank


def log_mel(power: np.ndarray, sample_rate: int, n_mels: int = 128, fmin: float = 20.0,
            fmax: float | None = None, frame_shift_s: float = 0.010) -> MelSpectrogram:
    bank = mel_filterbank(power.shape[1], sample_rate, n_mels, fmin, fmax)
    energies = power @ bank.T
    return MelSpectrogram(np.log(energies + LOG_FLOOR), frame_shift_s, n_mels)


def spectrogram(signal: PcmSignal, cfg: FrontendConfig = FrontendConfig()) -> MelSpectrogram:
    power = stft_power(signal, cfg.frame_len_s, cfg.frame_shift_s)
    return log_mel(power, signal.sample_rate, cfg.n_mels, cfg.fmin, cfg.fmax, cfg.frame_shift_s)


# --- normalization and windowing --------------------------------------------


def fit_normalization(corpus: Iterable[MelSpectrogram]) -> NormalizationStats:
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    lo = min(float(s.frames.min()) for s in corpus)
    hi = max(float(s.frames.max()) for s in corpus)
    if not lo < hi:
        raise ValueError("degenerate corpus: all values equal")
    return NormalizationStats(lo, hi)


def normalize(spec: MelSpectrogram, stats: NormalizationStats) -> NormalizedSpectrogram:
    y = 2.0 * (spec.frames - stats.lo) / (stats.hi - stats.lo) - 1.0
    return NormalizedSpectrogram(np.clip(y, -1.0, 1.0).astype(np.float32), spec.frame_shift_s, spec.n_mels)


def window_pairs(spec: NormalizedSpectrogram, ctx: int = 128, horizon: int = 256, stride: int = 16) -> list[WindowPair]:
    t = spec.frames.shape[0]
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if t < ctx + horizon:
        raise ValueError(f"spectrogram too short: {t} frames < {ctx} + {horizon}")
    return [WindowPair(spec.frames[o:o + ctx], spec.frames[o + ctx:o + ctx + horizon], o)
            for o in range(0, t - ctx - horizon + 1, stride)]
