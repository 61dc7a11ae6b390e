"""Dynamic construction of training mixtures: unison, duet, and
main-vs-rest arms, with same-singer / same-song correlation sampling.

Every produced mixture satisfies mixture == sum(sources) bitwise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.signal import resample_poly

from .audio_core import AudioBuffer, ComplexSpectrogram, StftConfig, loudness, stft, istft

logger = logging.getLogger(__name__)

SILENCE_FLOOR_DB = -60.0
CHUNK_NORM_DB = -20.0  # per-chunk RMS normalization before gain draws


@dataclass(frozen=True)
class MixPolicy:
    category: str = "duet"
    p_same_singer: float = 0.1
    p_same_song: float = 0.1
    p_speech: float = 0.3
    n_rest_range: tuple = (1, 3)
    detune_cents_range: tuple = (-20.0, 20.0)
    octave_choices: tuple = (-1200.0, 0.0, 1200.0)
    formant_ratio_range: tuple = (0.9, 1.1)
    gain_range_db: tuple = (-5.0, 0.0)
    main_margin_db: float = 1.0
    chunk_seconds: float = 3.0

    def __post_init__(self):
        for p in (self.p_same_singer, self.p_same_song, self.p_speech):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability out of [0,1]: {p}")
        lo, hi = self.n_rest_range
        if not (1 <= lo <= hi <= 3):
            raise ValueError("n_rest_range must lie within [1, 3]")
        if self.detune_cents_range != (-20.0, 20.0):
            raise ValueError("detune range is fixed to [-20, +20] cents")


@dataclass(frozen=True)
class MixtureExample:
    mixture: AudioBuffer
    sources: list
    category: str
    provenance: dict

    def __post_init__(self):
        total = np.zeros(len(self.mixture))
        for s in self.sources:
            if len(s) != len(self.mixture):
                raise ValueError("all sources must share the mixture length")
            total = total + s.samples
        if not np.array_equal(total, self.mixture.samples):
            raise ValueError("mixture must equal the exact sum of sources")


# ---------------------------------------------------------------------------
# signal transforms


def _stretch(x: np.ndarray, factor: float, win: int = 1024, hop: int = 256):
    """Phase-vocoder time stretch: output duration ~= factor * input."""
    window = np.hanning(win)
    pad = np.pad(x, (win, win))
    ana_hop = hop / factor
    n_frames = int((pad.size - win) / ana_hop)
    if n_frames < 2:
        return np.copy(x)
    phase = np.angle(np.fft.rfft(pad[:win] * window))
    acc = phase.copy()
    omega = 2 * np.pi * np.arange(win // 2 + 1) * hop / win
    out = np.zeros(win + hop * n_frames)
    norm = np.zeros_like(out)
    wsq = window * window
    prev_phase = phase
    for i in range(n_frames):
        start = int(round(i * ana_hop))
        frame = pad[start : start + win]
        if frame.size < win:
            frame = np.pad(frame, (0, win - frame.size))
        spec = np.fft.rfft(frame * window)
        mag, ph = np.abs(spec), np.angle(spec)
        if i > 0:
            expected = omega * (ana_hop / hop)
            delta = ph - prev_phase - expected
            delta -= 2 * np.pi * np.round(delta / (2 * np.pi))
            acc = acc + omega + delta * (hop / ana_hop)
        prev_phase = ph
        synth = np.fft.irfft(mag * np.exp(1j * acc)) * window
        out[i * hop : i * hop + win] += synth
        norm[i * hop : i * hop + win] += wsq
    out = out / np.maximum(norm, 1e-8)
    # strip the analysis padding, rescaled to the synthesis time axis
    lead = int(round(win * factor))
    out = out[lead:]
    target = int(round(x.size * factor))
    if out.size < target:
        out = np.pad(out, (0, target - out.size))
    return out[:target]


def pitch_shift(x: AudioBuffer, cents: float) -> AudioBuffer:
    """Duration-preserving pitch shift by the given amount in cents."""
    if abs(cents) > 1220:
        raise ValueError(f"|cents| must be <= 1220, got {cents}")
    rate = 2.0 ** (cents / 1200.0)
    if abs(rate - 1.0) < 1e-9:
        return AudioBuffer(np.copy(x.samples), x.sample_rate)
    stretched = _stretch(x.samples, rate)
    frac = Fraction(rate).limit_denominator(1000)
    y = resample_poly(stretched, frac.denominator, frac.numerator)
    if y.size < len(x):
        y = np.pad(y, (0, len(x) - y.size))
    return AudioBuffer(y[: len(x)], x.sample_rate)


def _cepstral_envelope(log_mag: np.ndarray, n_lifter: int) -> np.ndarray:
    """Smooth spectral envelope via low-quefrency liftering, per frame."""
    ceps = np.fft.irfft(log_mag, axis=-1)
    lifter = np.zeros(ceps.shape[-1])
    lifter[:n_lifter] = 1.0
    lifter[-(n_lifter - 1):] = 1.0
    return np.fft.rfft(ceps * lifter, axis=-1).real


def formant_shift(x: AudioBuffer, ratio: float, n_lifter: int = 30) -> AudioBuffer:
    """Scale the spectral envelope frequency axis by `ratio` while keeping
    the excitation (and thus the fundamental) untouched."""
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    cfg = StftConfig(fft_size=1024, win_size=1024, hop_size=256)
    S = stft(x, cfg)
    mag = np.abs(S.data)
    log_mag = np.log(mag + 1e-10)
    env = _cepstral_envelope(log_mag, n_lifter)
    bins = np.arange(env.shape[1])
    # envelope evaluated at f/ratio gives the envelope moved up by ratio
    src_bins = bins / ratio
    warped = np.stack([np.interp(src_bins, bins, e) for e in env])
    filt = np.exp(warped - env)
    shaped = ComplexSpectrogram(S.data * filt, cfg, x.sample_rate)
    return istft(shaped, len(x))


# ---------------------------------------------------------------------------
# chunking / gains


def _chunk(x: AudioBuffer, policy: MixPolicy, rng) -> AudioBuffer:
    n = int(round(policy.chunk_seconds * x.sample_rate))
    if len(x) < n:
        raise ValueError(
            f"source shorter than chunk: {len(x)} < {n} samples"
        )
    start = int(rng.integers(0, len(x) - n + 1))
    return AudioBuffer(x.samples[start : start + n], x.sample_rate)


def _normalize_rms(x: AudioBuffer, target_db: float = CHUNK_NORM_DB) -> AudioBuffer:
    cur = loudness(x)
    if cur < SILENCE_FLOOR_DB:
        return x
    gain = 10.0 ** ((target_db - cur) / 20.0)
    return AudioBuffer(x.samples * gain, x.sample_rate)


def _draw_gain(policy: MixPolicy, rng) -> float:
    lo, hi = policy.gain_range_db
    return 10.0 ** (rng.uniform(lo, hi) / 20.0)


# ---------------------------------------------------------------------------
# mixture construction


def make_unison(x: AudioBuffer, policy: MixPolicy, rng) -> MixtureExample:
    """Mix a chunk with its pitch/formant-shifted copy."""
    chunk = _normalize_rms(_chunk(x, policy, rng))
    octave = float(rng.choice(policy.octave_choices))
    detune = float(rng.uniform(*policy.detune_cents_range))
    ratio = float(rng.uniform(*policy.formant_ratio_range))
    shifted = formant_shift(pitch_shift(chunk, octave + detune), ratio)
    g1, g2 = _draw_gain(policy, rng), _draw_gain(policy, rng)
    s1 = AudioBuffer(chunk.samples * g1, chunk.sample_rate)
    s2 = AudioBuffer(shifted.samples * g2, chunk.sample_rate)
    mixture = AudioBuffer(s1.samples + s2.samples, chunk.sample_rate)
    return MixtureExample(
        mixture=mixture,
        sources=[s1, s2],
        category="unison",
        provenance={
            "transforms": {
                "octave_cents": octave,
                "detune_cents": detune,
                "formant_ratio": ratio,
                "gains": [g1, g2],
            }
        },
    )


def make_duet(a: AudioBuffer, b: AudioBuffer, policy: MixPolicy, rng) -> MixtureExample:
    """Mix two gain-scaled chunks of independent sources."""
    ca = _normalize_rms(_chunk(a, policy, rng))
    cb = _normalize_rms(_chunk(b, policy, rng))
    n = min(len(ca), len(cb))
    g1, g2 = _draw_gain(policy, rng), _draw_gain(policy, rng)
    s1 = AudioBuffer(ca.samples[:n] * g1, ca.sample_rate)
    s2 = AudioBuffer(cb.samples[:n] * g2, cb.sample_rate)
    mixture = AudioBuffer(s1.samples + s2.samples, ca.sample_rate)
    return MixtureExample(
        mixture=mixture,
        sources=[s1, s2],
        category="duet",
        provenance={"transforms": {"gains": [g1, g2]}},
    )


def make_main_vs_rest(
    main: AudioBuffer, rest: list, policy: MixPolicy, rng, max_redraws: int = 8
) -> MixtureExample:
    """Mix one main chunk against the sum of 1-3 rest chunks, with the main
    kept louder than the rest-sum by at least the policy margin."""
    if not (1 <= len(rest) <= 3):
        raise ValueError("need 1 to 3 rest sources")
    for _ in range(max_redraws):
        main_chunk = _normalize_rms(_chunk(main, policy, rng))
        if loudness(main_chunk) >= SILENCE_FLOOR_DB:
            break
    else:
        raise ValueError("main source is persistently silent")
    rest_chunks = [_normalize_rms(_chunk(r, policy, rng)) for r in rest]
    n = min([len(main_chunk)] + [len(c) for c in rest_chunks])
    rest_sum = np.zeros(n)
    for c in rest_chunks:
        rest_sum = rest_sum + c.samples[:n] * _draw_gain(policy, rng)
    rest_buf = AudioBuffer(rest_sum, main_chunk.sample_rate)
    main_scaled = AudioBuffer(main_chunk.samples[:n] * _draw_gain(policy, rng),
                              main_chunk.sample_rate)
    deficit = (loudness(rest_buf) + policy.main_margin_db) - loudness(main_scaled)
    if deficit > 0:
        boost = 10.0 ** (deficit / 20.0)
        main_scaled = AudioBuffer(main_scaled.samples * boost, main_scaled.sample_rate)
    mixture = AudioBuffer(main_scaled.samples + rest_buf.samples,
                          main_scaled.sample_rate)
    return MixtureExample(
        mixture=mixture,
        sources=[main_scaled, rest_buf],
        category="main_vs_rest",
        provenance={"n_rest": len(rest)},
    )


# ---------------------------------------------------------------------------
# correlation sampling


def sample_pair(index, policy: MixPolicy, rng):
    """Draw two SourceRecords per the correlation policy: same singer with
    p_same_singer, else same song with p_same_song, else independent; one
    side may come from the speech pool with p_speech."""
    u = rng.random()
    if u < policy.p_same_singer:
        singers = [s for s, recs in index.by_singer.items() if len(recs) >= 2]
        if singers:
            recs = index.by_singer[singers[int(rng.integers(len(singers)))]]
            i, j = rng.choice(len(recs), size=2, replace=False)
            return recs[int(i)], recs[int(j)]
        logger.info("no singer with >= 2 utterances; independent draw")
    elif u < policy.p_same_singer + policy.p_same_song:
        songs = {}
        for song, recs in index.by_song.items():
            by_singer = {}
            for r in recs:
                by_singer.setdefault(r.singer_id, r)
            if len(by_singer) >= 2:
                songs[song] = list(by_singer.values())
        if songs:
            keys = sorted(songs)
            recs = songs[keys[int(rng.integers(len(keys)))]]
            i, j = rng.choice(len(recs), size=2, replace=False)
            return recs[int(i)], recs[int(j)]
        logger.info("no song with >= 2 singers; independent draw")
    pools = []
    for _ in range(2):
        use_speech = index.speech and rng.random() < policy.p_speech
        pools.append(index.speech if use_speech else index.singing)
    a = pools[0][int(rng.integers(len(pools[0])))]
    b = pools[1][int(rng.integers(len(pools[1])))]
    return a, b


def sample_main_and_rest(index, policy: MixPolicy, rng):
    """Draw one main record plus 1-3 rest records for the main-vs-rest arm."""
    lo, hi = policy.n_rest_range
    n_rest = int(rng.integers(lo, hi + 1))
    pool = index.singing if index.singing else index.records
    picks = [pool[int(rng.integers(len(pool)))] for _ in range(n_rest + 1)]
    return picks[0], picks[1:]
