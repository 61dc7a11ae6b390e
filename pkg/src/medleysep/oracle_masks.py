"""Ideal time-frequency mask oracles: binary (IBM), ratio (IRM), and
complex ratio (cIRM) masks plus mask application.

These define separation upper bounds; cIRM reconstructs stems exactly on
non-degenerate bins, so its scores sit far above the magnitude masks.
"""

from __future__ import annotations

import numpy as np

from .audio_core import AudioBuffer, ComplexSpectrogram, istft

IRM_EPS = 1e-8
CIRM_DELTA = 1e-8


def _check_shapes(specs):
    if not specs:
        raise ValueError("need at least one spectrogram")
    shape = specs[0].data.shape
    cfg = specs[0].config
    for s in specs[1:]:
        if s.data.shape != shape or s.config != cfg:
            raise ValueError("spectrograms must share shape and STFT config")


def ibm(stems) -> list:
    """Ideal binary masks: per bin, 1 for the strict-maximum-magnitude
    source (ties to the lowest index), 0 elsewhere. Masks partition the
    time-frequency plane."""
    _check_shapes(stems)
    mags = np.stack([np.abs(s.data) for s in stems])
    winner = np.argmax(mags, axis=0)  # argmax takes the first max: tie rule
    return [(winner == i).astype(np.float64) for i in range(len(stems))]


def irm(stems) -> list:
    """Ideal ratio masks: per-source magnitude over the magnitude sum."""
    _check_shapes(stems)
    mags = np.stack([np.abs(s.data) for s in stems])
    denom = mags.sum(axis=0) + IRM_EPS
    return [mags[i] / denom for i in range(len(stems))]


def cirm(stem: ComplexSpectrogram, mixture: ComplexSpectrogram) -> np.ndarray:
    """Complex ideal ratio mask S/X, zeroed where |X| is degenerate.
    Unclipped, so applying it to X reproduces S exactly on live bins."""
    _check_shapes([stem, mixture])
    X = mixture.data
    live = np.abs(X) > CIRM_DELTA
    mask = np.zeros_like(X)
    mask[live] = stem.data[live] / X[live]
    return mask


def oracle_separate_fn(kind: str, cfg=None):
    """Build a `separate_fn(mixture, stems)` for the evaluation harness
    that applies the chosen ideal mask. kind in {ibm, irm, cirm}."""
    from .audio_core import DEFAULT_STFT, stft

    if kind not in ("ibm", "irm", "cirm"):
        raise ValueError(f"unknown mask kind {kind!r}")
    cfg = cfg or DEFAULT_STFT

    def separate(mixture: AudioBuffer, stems):
        X = stft(mixture, cfg)
        specs = [stft(s, cfg) for s in stems]
        if kind == "ibm":
            masks = ibm(specs)
        elif kind == "irm":
            masks = irm(specs)
        else:
            masks = [cirm(s, X) for s in specs]
        return [apply_mask(m, X, len(mixture)) for m in masks]

    return separate


def apply_mask(mask: np.ndarray, mixture: ComplexSpectrogram, out_len: int) -> AudioBuffer:
    """Apply a real or complex mask to the mixture spectrogram and invert."""
    if mask.shape != mixture.data.shape:
        raise ValueError(f"mask shape {mask.shape} != {mixture.data.shape}")
    masked = ComplexSpectrogram(mask * mixture.data, mixture.config,
                                mixture.sample_rate)
    return istft(masked, out_len)
