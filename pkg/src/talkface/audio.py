"""Complex STFT spectrograms centred on video frame times, plus WAV I/O."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import windows

from .errors import AudioError, ShapeError

SAMPLE_RATE = 16000
WINDOW_SAMPLES = 480      # 30 ms
HOP_SAMPLES = 160         # 10 ms
FFT_SIZE = 512
N_BINS = 256
N_COLUMNS = 24

_HANN = windows.hann(WINDOW_SAMPLES, sym=False)


@dataclass
class Spectrogram:
    """256 frequency bins x 24 time columns x (real, imag)."""

    data: np.ndarray
    frame_timestamp: float
    padded: bool = False

    def __post_init__(self):
        if self.data.shape != (N_BINS, N_COLUMNS, 2):
            raise ShapeError(f"spectrogram must be 256x24x2, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise AudioError("non-finite spectrogram values")

    @property
    def complex(self) -> np.ndarray:
        return self.data[..., 0] + 1j * self.data[..., 1]


def stft_window(samples, sample_rate: int = SAMPLE_RATE):
    """Hann-windowed 30 ms slice, zero-padded to 512, bins 1..256.

    Returns:
        (bins, padded) where ``padded`` is True if the slice was shorter
        than 480 samples and had to be zero-extended.
    """
    if sample_rate != SAMPLE_RATE:
        raise AudioError(f"stft_window expects {SAMPLE_RATE} Hz input; resample first")
    x = np.asarray(samples, dtype=np.float64).ravel()
    padded = x.size < WINDOW_SAMPLES
    if x.size > WINDOW_SAMPLES:
        raise AudioError(f"window slice longer than {WINDOW_SAMPLES} samples")
    if padded:
        x = np.concatenate([x, np.zeros(WINDOW_SAMPLES - x.size)])
    spec = np.fft.rfft(x * _HANN, n=FFT_SIZE)
    return spec[1:N_BINS + 1], padded


def resample_linear(x, rate_in: int, rate_out: int = SAMPLE_RATE) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if rate_in == rate_out:
        return x
    n_out = int(round(x.size * rate_out / rate_in))
    t_out = np.arange(n_out) / rate_out
    return np.interp(t_out, np.arange(x.size) / rate_in, x)


def column_starts(timestamp: float, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """First sample of each of the 24 windows around ``timestamp``.

    Column centres sit at t + (j - 11.5) * 10 ms, so the 24 columns span
    240 ms centred on the frame. The frame time is rounded to a sample once
    so that a whole-hop audio shift moves columns by exactly one.
    """
    centre = int(round(timestamp * sample_rate))
    offsets = (np.arange(N_COLUMNS) - (N_COLUMNS - 1) / 2.0) * HOP_SAMPLES
    return centre + offsets.astype(np.int64) - WINDOW_SAMPLES // 2


def build_spectrogram_sequence(audio, video_timestamps, sample_rate: int = SAMPLE_RATE) -> list[Spectrogram]:
    """One 256x24 complex spectrogram per video timestamp.

    Audio outside the recording is treated as silence; spectrograms that
    needed such padding carry ``padded=True``.
    """
    x = np.asarray(audio, dtype=np.float64).ravel()
    if x.size == 0:
        raise AudioError("empty audio")
    x = resample_linear(x, sample_rate, SAMPLE_RATE)
    ts = np.asarray(video_timestamps, dtype=np.float64).ravel()
    if ts.size == 0:
        return []
    starts = np.stack([column_starts(t) for t in ts])                    # (n, 24)
    idx = starts[..., None] + np.arange(WINDOW_SAMPLES)                  # (n, 24, 480)
    inside = (idx >= 0) & (idx < x.size)
    frames = np.where(inside, x[np.clip(idx, 0, x.size - 1)], 0.0) * _HANN
    spec = np.fft.rfft(frames, n=FFT_SIZE, axis=-1)[..., 1:N_BINS + 1]   # (n, 24, 256)
    spec = np.transpose(spec, (0, 2, 1))
    out = []
    for k in range(ts.size):
        data = np.stack([spec[k].real, spec[k].imag], axis=-1)
        out.append(Spectrogram(data, float(ts[k]), padded=not bool(inside[k].all())))
    return out


def spectrogram_batch(specs) -> np.ndarray:
    """Stack into an N x 2 x 256 x 24 float32 array (network layout)."""
    return np.stack([np.transpose(s.data, (2, 0, 1)) for s in specs]).astype(np.float32)


def read_wav(path):
    """16-bit PCM WAV to (float samples in [-1, 1], sample rate); multi-channel is averaged."""
    with wave.open(str(path), "rb") as w:
        if w.getsampwidth() != 2:
            raise AudioError(f"{path}: only 16-bit PCM is supported")
        n_ch, rate = w.getnchannels(), w.getframerate()
        raw = w.readframes(w.getnframes())
    x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if n_ch > 1:
        x = x.reshape(-1, n_ch).mean(axis=1)
    return x, rate


def write_wav(path, samples, sample_rate: int = SAMPLE_RATE) -> None:
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 32767 / 32768)
    pcm = np.round(x * 32768.0).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())
