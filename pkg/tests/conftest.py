import json

import numpy as np
import pytest
import torch

from medleysep.audio_core import AudioBuffer, write_wav


def sine(freq, sr=24000, seconds=1.0, amp=0.5, phase=0.0):
    t = np.arange(int(seconds * sr)) / sr
    return AudioBuffer(amp * np.sin(2 * np.pi * freq * t + phase), sr)


def peak_freq(buf, n=1 << 18):
    """Dominant frequency via zero-padded DFT with parabolic interpolation."""
    x = buf.samples * np.hanning(len(buf))
    X = np.abs(np.fft.rfft(x, n))
    k = int(np.argmax(X))
    if 0 < k < X.size - 1:
        a, b, c = X[k - 1], X[k], X[k + 1]
        denom = a - 2 * b + c
        k = k + (0.5 * (a - c) / denom if denom != 0 else 0.0)
    return k * buf.sample_rate / n


def synth_voice(f0, seed, sr=16000, n=8000, n_harmonics=5):
    """Harmonic tone with a slow random amplitude envelope plus a small
    noise floor (log-magnitude losses are ill-conditioned on exactly
    silent spectrogram bins, which natural recordings never have)."""
    r = np.random.default_rng(seed)
    t = np.arange(n) / sr
    sig = sum((0.5 / (k + 1)) * np.sin(2 * np.pi * f0 * (k + 1) * t + r.uniform(0, 6))
              for k in range(n_harmonics))
    env = 0.5 + 0.5 * np.sin(2 * np.pi * r.uniform(0.5, 2) * t + r.uniform(0, 6))
    return (sig * env * 0.3 + 1e-3 * r.standard_normal(n)).astype(np.float32)


def toy_duets(n_examples=10, sr=16000, n=8000, seed=7):
    """Fixed synthetic duet set as (mix, refs) float32 torch tensors."""
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n_examples):
        a = synth_voice(rng.uniform(150, 250), 100 + i, sr, n)
        b = synth_voice(rng.uniform(300, 450), 200 + i, sr, n)
        examples.append((torch.tensor(a + b), torch.tensor(np.stack([a, b]))))
    return examples


def toy_batch_fn(examples, batch_size=4):
    def batch(rng, step):
        idx = rng.integers(0, len(examples), size=batch_size)
        mix = torch.stack([examples[i][0] for i in idx])
        ref = torch.stack([examples[i][1] for i in idx])
        return mix, ref, "duet"

    return batch


@pytest.fixture
def tiny_manifest(tmp_path):
    """Manifest of 6 synthetic singing + 2 speech WAVs, 4 s each at 24 kHz."""
    rng = np.random.default_rng(0)
    lines = []
    for i in range(8):
        domain = "speech" if i >= 6 else "singing"
        f0 = rng.uniform(120, 400)
        buf = AudioBuffer(
            synth_voice(f0, 300 + i, sr=24000, n=4 * 24000).astype(np.float64),
            24000)
        path = tmp_path / f"utt{i}.wav"
        write_wav(path, buf, "float32")
        lines.append({
            "utterance_id": f"utt{i}",
            "audio_path": str(path),
            "singer_id": f"singer{i // 2}",
            "song_id": "" if domain == "speech" else f"song{i % 3}",
            "domain": domain,
            "duration": 4.0,
        })
    manifest = tmp_path / "manifest.jsonl"
    manifest.write_text("\n".join(json.dumps(x) for x in lines) + "\n")
    return manifest
