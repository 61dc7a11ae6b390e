"""Deterministic signal primitives: STFT/iSTFT, resampling, loudness, WAV I/O.

Everything here is pure numpy and stateless; buffers are treated as
immutable once constructed.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window, resample_poly

LOUDNESS_EPS = 1e-12

VALID_PIPELINE_RATES = (16000, 24000, 44100)


@dataclass(frozen=True)
class AudioBuffer:
    """Mono waveform plus its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("samples must be a non-empty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 1024
    win_size: int = 1024
    hop_size: int = 256
    window: str = "hann"
    center_pad: bool = True

    def __post_init__(self):
        if not (0 < self.hop_size <= self.win_size <= self.fft_size):
            raise ValueError(
                "need 0 < hop_size <= win_size <= fft_size, got "
                f"hop={self.hop_size} win={self.win_size} fft={self.fft_size}"
            )

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window_array(self) -> np.ndarray:
        w = get_window(self.window, self.win_size, fftbins=True)
        if self.win_size < self.fft_size:
            pad = self.fft_size - self.win_size
            w = np.pad(w, (pad // 2, pad - pad // 2))
        return w


@dataclass(frozen=True)
class ComplexSpectrogram:
    """One-sided complex STFT, shape [frames, bins]."""

    data: np.ndarray
    config: StftConfig
    sample_rate: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.ndim != 2:
            raise ValueError("spectrogram data must be 2-D [frames, bins]")
        if data.shape[1] != self.config.n_bins:
            raise ValueError(
                f"bins {data.shape[1]} != fft_size/2+1 = {self.config.n_bins}"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("spectrogram contains NaN or Inf")
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.data)


DEFAULT_STFT = StftConfig()


def stft(x: AudioBuffer, cfg: StftConfig = DEFAULT_STFT) -> ComplexSpectrogram:
    """One-sided STFT of a mono buffer."""
    sig = x.samples
    win = cfg.window_array()
    n = cfg.fft_size
    hop = cfg.hop_size
    if cfg.center_pad:
        sig = np.pad(sig, (n // 2, n // 2))
    if sig.size < n:
        sig = np.pad(sig, (0, n - sig.size))
    n_frames = 1 + (sig.size - n) // hop
    idx = np.arange(n)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = sig[idx] * win[None, :]
    spec = np.fft.rfft(frames, n=n, axis=1)
    return ComplexSpectrogram(spec, cfg, x.sample_rate)


def istft(S: ComplexSpectrogram, out_len: int) -> AudioBuffer:
    """Overlap-add inverse of `stft`. `out_len` must match the frame count
    up to one hop of slack."""
    cfg = S.config
    n, hop = cfg.fft_size, cfg.hop_size
    win = cfg.window_array()
    n_frames = S.n_frames
    full_len = n + hop * (n_frames - 1)
    pad = n // 2 if cfg.center_pad else 0
    max_len = full_len - 2 * pad if cfg.center_pad else full_len
    if not (0 < out_len <= max_len + hop):
        raise ValueError(
            f"out_len {out_len} inconsistent with {n_frames} frames "
            f"(max {max_len + hop})"
        )
    frames = np.fft.irfft(S.data, n=n, axis=1) * win[None, :]
    out = np.zeros(full_len)
    norm = np.zeros(full_len)
    wsq = win * win
    for i in range(n_frames):
        out[i * hop : i * hop + n] += frames[i]
        norm[i * hop : i * hop + n] += wsq
    out = out / np.maximum(norm, 1e-12)
    out = out[pad : pad + out_len]
    if out.size < out_len:
        out = np.pad(out, (0, out_len - out.size))
    return AudioBuffer(out, S.sample_rate)


def resample(x: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limited resampling; identity when rates match."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == x.sample_rate:
        return x
    frac = Fraction(target_rate, x.sample_rate).limit_denominator(1000)
    y = resample_poly(x.samples, frac.numerator, frac.denominator)
    out_len = int(round(len(x) * target_rate / x.sample_rate))
    if y.size > out_len:
        y = y[:out_len]
    elif y.size < out_len:
        y = np.pad(y, (0, out_len - y.size))
    return AudioBuffer(y, target_rate)


def loudness(x: AudioBuffer) -> float:
    """RMS loudness in dB with a -240 dB silence floor."""
    rms = float(np.sqrt(np.mean(x.samples**2)))
    return 20.0 * np.log10(rms + LOUDNESS_EPS)


def write_wav(path, x: AudioBuffer, bit_depth: str = "int16") -> None:
    """Write mono WAV. 16-bit mode clamps to [-1, 1) and rounds to the
    nearest of 65536 levels; float32 mode round-trips exactly."""
    if bit_depth == "int16":
        q = np.round(x.samples * 32768.0)
        q = np.clip(q, -32768, 32767).astype(np.int16)
        payload = q
    elif bit_depth == "float32":
        payload = x.samples.astype(np.float32)
    else:
        raise ValueError(f"unsupported bit depth: {bit_depth!r}")
    try:
        wavfile.write(str(path), x.sample_rate, payload)
    except OSError as e:
        raise OSError(f"cannot write WAV {path}: {e}") from e


def read_wav(path) -> AudioBuffer:
    """Read a mono PCM16 or IEEE float32 WAV back into [-1, 1] floats."""
    try:
        rate, data = wavfile.read(str(path))
    except OSError as e:
        raise OSError(f"cannot read WAV {path}: {e}") from e
    if data.ndim != 1:
        raise ValueError(f"{path}: only mono WAV is supported")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return AudioBuffer(samples, int(rate))
