"""Training losses and assignment schemes: SI-SDR, bounded SNR,
multi-resolution STFT losses, mixture consistency, uPIT, and the
loudness-prior one-vs-rest loss.

All functions are torch-differentiable and also accept numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np
import torch

SI_SDR_CAP_DB = 200.0
SNR_TAU = 1e-3  # bounds SNR at 10*log10(1/tau) = 30 dB
LOG_MAG_EPS = 1e-7

DEFAULT_RESOLUTIONS = ((512, 128, 512), (1024, 256, 1024), (2048, 512, 2048))


@dataclass(frozen=True)
class LossConfig:
    time_loss: str = "snr"  # "si_sdr" | "snr"
    stft_resolutions: tuple = DEFAULT_RESOLUTIONS
    time_weight: float = 1.0
    stft_mag_weight: float = 0.5
    stft_ri_weight: float = 0.5
    apply_mixture_consistency: bool = True

    def __post_init__(self):
        if self.time_loss not in ("si_sdr", "snr"):
            raise ValueError(f"unknown time loss {self.time_loss!r}")
        weights = (self.time_weight, self.stft_mag_weight, self.stft_ri_weight)
        if any(w < 0 for w in weights) or not any(w > 0 for w in weights):
            raise ValueError("weights must be non-negative with at least one > 0")
        if (self.stft_mag_weight > 0 or self.stft_ri_weight > 0) and not self.stft_resolutions:
            raise ValueError("stft_resolutions required when STFT weights > 0")


def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x
    if hasattr(x, "samples"):  # AudioBuffer
        x = x.samples
    return torch.as_tensor(np.asarray(x), dtype=torch.float64)


def si_sdr(est, ref):
    """Scale-invariant SDR in dB, capped at +200 on zero residual."""
    est, ref = _as_tensor(est), _as_tensor(ref)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {ref.shape}")
    ref_energy = torch.sum(ref * ref)
    if ref_energy == 0:
        raise ValueError("si_sdr undefined for all-zero reference")
    alpha = torch.sum(est * ref) / ref_energy
    target = alpha * ref
    noise = target - est
    num = torch.sum(target * target)
    den = torch.sum(noise * noise)
    cap = 10 ** (SI_SDR_CAP_DB / 10)
    return 10 * torch.log10(torch.clamp(num / torch.clamp(den, min=num / cap),
                                        min=1e-300))


def snr(est, ref, tau: float = SNR_TAU):
    """Soft-thresholded SNR in dB, bounded at 10*log10(1/tau)."""
    est, ref = _as_tensor(est), _as_tensor(ref)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {ref.shape}")
    ref_energy = torch.sum(ref * ref)
    if ref_energy == 0:
        raise ValueError("snr undefined for all-zero reference")
    err = ref - est
    return 10 * torch.log10(ref_energy / (torch.sum(err * err) + tau * ref_energy))


def _stft_mag(x: torch.Tensor, fft: int, hop: int, win: int):
    window = torch.hann_window(win, dtype=x.dtype, device=x.device)
    spec = torch.stft(x, n_fft=fft, hop_length=hop, win_length=win,
                      window=window, center=True, return_complex=True)
    return spec


def multi_res_stft_loss(est, ref, resolutions=DEFAULT_RESOLUTIONS):
    """Sum over resolutions of spectral convergence + log-magnitude L1."""
    est, ref = _as_tensor(est), _as_tensor(ref)
    total = est.new_zeros(())
    for fft, hop, win in resolutions:
        E = torch.abs(_stft_mag(est, fft, hop, win))
        R = torch.abs(_stft_mag(ref, fft, hop, win))
        sc = torch.linalg.norm(R - E) / torch.clamp(torch.linalg.norm(R), min=1e-12)
        log_l1 = torch.mean(torch.abs(torch.log(R + LOG_MAG_EPS)
                                      - torch.log(E + LOG_MAG_EPS)))
        total = total + sc + log_l1
    return total


def ri_stft_loss(est, ref, resolutions=DEFAULT_RESOLUTIONS):
    """Sum over resolutions of L1 on real and imaginary STFT coefficients."""
    est, ref = _as_tensor(est), _as_tensor(ref)
    total = est.new_zeros(())
    for fft, hop, win in resolutions:
        E = _stft_mag(est, fft, hop, win)
        R = _stft_mag(ref, fft, hop, win)
        diff = R - E
        total = total + torch.mean(torch.abs(diff.real)) + torch.mean(torch.abs(diff.imag))
    return total


def composite_loss(cfg: LossConfig):
    """Per-pair loss (lower is better) combining time and STFT terms."""
    time_fn = si_sdr if cfg.time_loss == "si_sdr" else snr

    def base_loss(est, ref):
        loss = _as_tensor(est).new_zeros(())
        if cfg.time_weight > 0:
            loss = loss + cfg.time_weight * (-time_fn(est, ref))
        if cfg.stft_mag_weight > 0:
            loss = loss + cfg.stft_mag_weight * multi_res_stft_loss(
                est, ref, cfg.stft_resolutions)
        if cfg.stft_ri_weight > 0:
            loss = loss + cfg.stft_ri_weight * ri_stft_loss(
                est, ref, cfg.stft_resolutions)
        return loss

    return base_loss


def mixture_consistency(estimates, mixture):
    """Shift each estimate by an equal share of the residual so the
    estimates sum exactly to the mixture. Idempotent."""
    ests = [_as_tensor(e) for e in estimates]
    mix = _as_tensor(mixture)
    residual = mix - sum(ests)
    share = residual / len(ests)
    return [e + share for e in ests]


def upit_loss(estimates, references, base_loss):
    """Utterance-level PIT: min over all assignments of the mean pairwise
    loss. Returns (loss, permutation); permutation[i] is the reference
    index assigned to estimate i."""
    if len(estimates) != len(references):
        raise ValueError("estimate / reference count mismatch")
    n = len(estimates)
    best_loss, best_perm = None, None
    for perm in permutations(range(n)):
        loss = sum(base_loss(estimates[i], references[perm[i]]) for i in range(n)) / n
        if best_loss is None or loss.item() < best_loss.item():
            best_loss, best_perm = loss, perm
    return best_loss, best_perm


def orpit_loss(est_main, est_rest, ref_main, ref_rest_sum, base_loss):
    """One-vs-rest loss under the main-louder prior: fixed assignment, no
    permutation search. Mean of the two terms, matching upit_loss scaling."""
    return (base_loss(est_main, ref_main) + base_loss(est_rest, ref_rest_sum)) / 2
