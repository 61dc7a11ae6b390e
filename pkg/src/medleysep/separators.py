"""Separation models: Conv-TasNet backbone with learnable or STFT basis
(complex spectral mapping), the iSRNet refinement network built from
ConvNeXt-style blocks, and the heuristic high-band magnitude routing.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .audio_core import AudioBuffer, ComplexSpectrogram, StftConfig
from .objectives import mixture_consistency

HEURISTIC_EPS = 1e-8


@dataclass(frozen=True)
class TcnConfig:
    n_blocks: int = 8
    n_repeats: int = 3
    bottleneck_ch: int = 128
    conv_ch: int = 512
    skip_ch: int = 128
    kernel: int = 3


@dataclass(frozen=True)
class BackboneConfig:
    basis: str = "stft"  # "stft" | "learnable"
    n_sources: int = 2
    tcn: TcnConfig = TcnConfig()
    stft: StftConfig = StftConfig()
    sample_rate: int = 24000
    model_scale: str = "base"  # "base" | "large"
    apply_mixture_consistency: bool = True
    # learnable-basis encoder
    enc_filters: int = 256
    enc_kernel: int = 32
    enc_stride: int = 16

    def __post_init__(self):
        if self.basis not in ("stft", "learnable"):
            raise ValueError(f"unknown basis {self.basis!r}")
        if self.n_sources != 2:
            raise ValueError("all shipped tasks use exactly 2 output sources")
        if self.model_scale not in ("base", "large"):
            raise ValueError(f"unknown model scale {self.model_scale!r}")

    @property
    def effective_tcn(self) -> TcnConfig:
        """TCN hyperparameters after applying the scale ("large" doubles
        bottleneck and conv channels)."""
        if self.model_scale == "large":
            return replace(self.tcn,
                           bottleneck_ch=self.tcn.bottleneck_ch * 2,
                           conv_ch=self.tcn.conv_ch * 2)
        return self.tcn


@dataclass(frozen=True)
class ISRNetConfig:
    n_convnext_blocks: int = 8
    channels: int = 48
    freq_boundary_hz: float = 3000.0
    stft: StftConfig = StftConfig()
    sample_rate: int = 24000

    def __post_init__(self):
        if not 0 < self.freq_boundary_hz < self.sample_rate / 2:
            raise ValueError("freq_boundary_hz must be below Nyquist")

    @property
    def boundary_bin(self) -> int:
        return int(round(self.freq_boundary_hz * self.stft.fft_size / self.sample_rate))


class GlobalLayerNorm(nn.Module):
    """Normalization over both channel and time axes (gLN)."""

    def __init__(self, channels):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(1, channels, 1))
        self.beta = nn.Parameter(torch.zeros(1, channels, 1))

    def forward(self, x):
        mean = x.mean(dim=(1, 2), keepdim=True)
        var = x.var(dim=(1, 2), keepdim=True, unbiased=False)
        return self.gamma * (x - mean) / torch.sqrt(var + 1e-8) + self.beta


class TemporalBlock(nn.Module):
    def __init__(self, cfg: TcnConfig, dilation: int, last: bool = False):
        super().__init__()
        b, h, k = cfg.bottleneck_ch, cfg.conv_ch, cfg.kernel
        self.expand = nn.Conv1d(b, h, 1)
        self.prelu1 = nn.PReLU()
        self.norm1 = GlobalLayerNorm(h)
        self.dconv = nn.Conv1d(h, h, k, padding=(k - 1) // 2 * dilation,
                               dilation=dilation, groups=h)
        self.prelu2 = nn.PReLU()
        self.norm2 = GlobalLayerNorm(h)
        # the residual path of the final block feeds nothing downstream
        self.res = None if last else nn.Conv1d(h, b, 1)
        self.skip = nn.Conv1d(h, cfg.skip_ch, 1)

    def forward(self, x):
        y = self.norm1(self.prelu1(self.expand(x)))
        y = self.norm2(self.prelu2(self.dconv(y)))
        out = x if self.res is None else x + self.res(y)
        return out, self.skip(y)


class TemporalConvNet(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, cfg: TcnConfig):
        super().__init__()
        self.in_norm = GlobalLayerNorm(in_ch)
        self.bottleneck = nn.Conv1d(in_ch, cfg.bottleneck_ch, 1)
        n_total = cfg.n_repeats * cfg.n_blocks
        self.blocks = nn.ModuleList(
            TemporalBlock(cfg, 2 ** (i % cfg.n_blocks), last=(i == n_total - 1))
            for i in range(n_total)
        )
        self.out_prelu = nn.PReLU()
        self.out_conv = nn.Conv1d(cfg.skip_ch, out_ch, 1)

    def forward(self, x):
        y = self.bottleneck(self.in_norm(x))
        skip_total = 0.0
        for block in self.blocks:
            y, skip = block(y)
            skip_total = skip_total + skip
        return self.out_conv(self.out_prelu(skip_total))


class ConvTasNet(nn.Module):
    """Two-output separator. The STFT basis directly predicts per-source
    real/imaginary coefficients; the learnable basis uses the classic
    masking formulation with conv encoder / transposed-conv decoder."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        n_src = config.n_sources
        if config.basis == "stft":
            feat = 2 * config.stft.n_bins
            self.tcn = TemporalConvNet(feat, n_src * feat, config.effective_tcn)
            window = torch.hann_window(config.stft.win_size)
            self.register_buffer("window", window)
        else:
            self.encoder = nn.Conv1d(1, config.enc_filters, config.enc_kernel,
                                     stride=config.enc_stride, bias=False)
            self.tcn = TemporalConvNet(config.enc_filters,
                                       n_src * config.enc_filters, config.effective_tcn)
            self.decoder = nn.ConvTranspose1d(config.enc_filters, 1,
                                              config.enc_kernel,
                                              stride=config.enc_stride, bias=False)

    @property
    def min_input_len(self) -> int:
        if self.config.basis == "stft":
            return self.config.stft.hop_size
        return self.config.enc_kernel

    def forward(self, mix: torch.Tensor) -> torch.Tensor:
        """mix: (B, T) -> estimates (B, n_sources, T)."""
        if mix.dim() != 2:
            raise ValueError("expected (batch, samples) input")
        if mix.shape[-1] < self.min_input_len:
            raise ValueError(
                f"input too short: need at least {self.min_input_len} samples"
            )
        n_src = self.config.n_sources
        # normalize the input scale away (the TCN's global layer norm discards
        # it anyway) so the output head predicts coefficients at unit scale
        gain = mix.pow(2).mean(dim=-1, keepdim=True).sqrt().clamp(min=1e-8)
        mix_n = mix / gain
        if self.config.basis == "stft":
            cfg = self.config.stft
            spec = torch.stft(mix_n, n_fft=cfg.fft_size, hop_length=cfg.hop_size,
                              win_length=cfg.win_size, window=self.window,
                              center=True, return_complex=True)  # (B, F, K)
            B, Fb, K = spec.shape
            feat = torch.cat([spec.real, spec.imag], dim=1)  # (B, 2F, K)
            out = self.tcn(feat).reshape(B, n_src, 2, Fb, K)
            est_spec = torch.complex(out[:, :, 0], out[:, :, 1])
            est = torch.istft(est_spec.reshape(B * n_src, Fb, K),
                              n_fft=cfg.fft_size, hop_length=cfg.hop_size,
                              win_length=cfg.win_size, window=self.window,
                              center=True, length=mix.shape[-1])
            est = est.reshape(B, n_src, -1)
        else:
            w = F.relu(self.encoder(mix_n.unsqueeze(1)))  # (B, N, K)
            masks = torch.sigmoid(self.tcn(w))
            B, _, K = w.shape
            masks = masks.reshape(B, n_src, -1, K)
            est = self.decoder((w.unsqueeze(1) * masks).reshape(B * n_src, -1, K))
            est = est.squeeze(1)
            if est.shape[-1] < mix.shape[-1]:
                est = F.pad(est, (0, mix.shape[-1] - est.shape[-1]))
            est = est[..., : mix.shape[-1]].reshape(B, n_src, -1)
        est = est * gain.unsqueeze(1)
        if self.config.apply_mixture_consistency:
            ests = mixture_consistency(list(est.unbind(dim=1)), mix)
            est = torch.stack(ests, dim=1)
        return est


def backbone_separate(model: ConvTasNet, mixture: AudioBuffer) -> list:
    """Run the backbone on a single buffer, returning per-source buffers of
    exactly the mixture length."""
    if mixture.sample_rate != model.config.sample_rate:
        raise ValueError(
            f"mixture rate {mixture.sample_rate} != model rate "
            f"{model.config.sample_rate}"
        )
    with torch.no_grad():
        mix = torch.as_tensor(mixture.samples, dtype=torch.float32).unsqueeze(0)
        est = model(mix)[0]
    return [AudioBuffer(e.numpy().astype(np.float64), mixture.sample_rate)
            for e in est.unbind(0)]


# ---------------------------------------------------------------------------
# heuristic high-band magnitudes


def heuristic_stft(mixture_spec: ComplexSpectrogram, initial_estimates,
                   boundary_bin: int) -> list:
    """Per-source heuristic magnitudes: below the boundary the initial
    estimate magnitude; above it the mixture magnitude split per frame in
    proportion to each source's low-band energy."""
    n_bins = mixture_spec.data.shape[1]
    if not 0 < boundary_bin < n_bins:
        raise ValueError(f"boundary_bin must be in (0, {n_bins})")
    for e in initial_estimates:
        if e.data.shape != mixture_spec.data.shape:
            raise ValueError("estimate/mixture spectrogram shape mismatch")
    mix_mag = np.abs(mixture_spec.data)
    est_mags = [np.abs(e.data) for e in initial_estimates]
    weights = np.stack([m[:, :boundary_bin].sum(axis=1) for m in est_mags])
    shares = weights / (weights.sum(axis=0, keepdims=True) + HEURISTIC_EPS)
    out = []
    for mag, share in zip(est_mags, shares):
        h = mag.copy()
        h[:, boundary_bin:] = mix_mag[:, boundary_bin:] * share[:, None]
        out.append(h)
    return out


def _heuristic_torch(mix_mag, est_mags, boundary_bin):
    """Torch version of heuristic_stft on (B, F, K) magnitude tensors."""
    weights = torch.stack([m[:, :boundary_bin].sum(dim=1) for m in est_mags])
    shares = weights / (weights.sum(dim=0, keepdim=True) + HEURISTIC_EPS)
    out = []
    for mag, share in zip(est_mags, shares):
        high = mix_mag[:, boundary_bin:] * share.unsqueeze(1)
        out.append(torch.cat([mag[:, :boundary_bin], high], dim=1))
    return out


# ---------------------------------------------------------------------------
# iSRNet


class ConvNeXtBlock(nn.Module):
    """Depthwise 7x7 over time-frequency, per-position LayerNorm, 4x
    pointwise expansion with GELU, projection, residual."""

    def __init__(self, channels):
        super().__init__()
        self.dwconv = nn.Conv2d(channels, channels, 7, padding=3, groups=channels)
        self.norm = nn.LayerNorm(channels)
        self.pw1 = nn.Linear(channels, 4 * channels)
        self.pw2 = nn.Linear(4 * channels, channels)

    def forward(self, x):
        y = self.dwconv(x)
        y = y.permute(0, 2, 3, 1)  # (B, F, K, C)
        y = self.pw2(F.gelu(self.pw1(self.norm(y))))
        return x + y.permute(0, 3, 1, 2)


class ISRNet(nn.Module):
    """Refinement network over log1p-compressed magnitude inputs: mixture,
    two initial estimates, and two heuristic magnitudes (5 channels in,
    one refined magnitude per source out)."""

    def __init__(self, config: ISRNetConfig, n_sources: int = 2):
        super().__init__()
        self.config = config
        self.n_sources = n_sources
        c = config.channels
        self.stem = nn.Conv2d(1 + 2 * n_sources, c, 3, padding=1)
        self.blocks = nn.ModuleList(
            ConvNeXtBlock(c) for _ in range(config.n_convnext_blocks)
        )
        self.head = nn.Conv2d(c, n_sources, 3, padding=1)

    def forward(self, mix_mag, est_mags, heur_mags):
        """All inputs (B, F, K) magnitude tensors; returns list of refined
        (B, F, K) magnitudes."""
        feats = torch.stack([mix_mag, *est_mags, *heur_mags], dim=1)
        y = self.stem(torch.log1p(feats))
        for block in self.blocks:
            y = block(y)
        refined = F.softplus(self.head(y))
        return list(refined.unbind(dim=1))


class SRNetReferenceStack(nn.Module):
    """Plain wide convolutional stack with the same I/O contract as ISRNet,
    kept as the parameter-count comparison point."""

    def __init__(self, n_sources: int = 2, channels: int = 176, n_layers: int = 8):
        super().__init__()
        layers = [nn.Conv2d(1 + 2 * n_sources, channels, 5, padding=2), nn.ReLU()]
        for _ in range(n_layers):
            layers += [nn.Conv2d(channels, channels, 5, padding=2), nn.ReLU()]
        layers += [nn.Conv2d(channels, n_sources, 5, padding=2)]
        self.net = nn.Sequential(*layers)

    def forward(self, mix_mag, est_mags, heur_mags):
        feats = torch.stack([mix_mag, *est_mags, *heur_mags], dim=1)
        return list(F.softplus(self.net(torch.log1p(feats))).unbind(dim=1))


class JointSeparator(nn.Module):
    """Backbone + iSRNet: refine backbone magnitudes with the heuristic
    high-band routing, keep the initial-estimate phase, resynthesize."""

    def __init__(self, backbone: ConvTasNet, isrnet: ISRNet):
        super().__init__()
        if backbone.config.stft != isrnet.config.stft:
            raise ValueError("backbone and iSRNet must share the STFT config")
        self.backbone = backbone
        self.isrnet = isrnet

    def forward(self, mix: torch.Tensor):
        """Returns (refined, initial), both (B, n_sources, T)."""
        initial = self.backbone(mix)
        cfg = self.backbone.config.stft
        window = self.backbone.window
        B, n_src, T = initial.shape

        def _stft(x):
            return torch.stft(x, n_fft=cfg.fft_size, hop_length=cfg.hop_size,
                              win_length=cfg.win_size, window=window,
                              center=True, return_complex=True)

        mix_spec = _stft(mix)
        est_specs = [_stft(initial[:, i]) for i in range(n_src)]
        est_mags = [torch.abs(s) for s in est_specs]
        heur = _heuristic_torch(torch.abs(mix_spec), est_mags,
                                self.isrnet.config.boundary_bin)
        refined_mags = self.isrnet(torch.abs(mix_spec), est_mags, heur)
        outs = []
        for spec, mag in zip(est_specs, refined_mags):
            phase = torch.angle(spec)
            refined_spec = torch.polar(mag, phase)
            outs.append(torch.istft(refined_spec, n_fft=cfg.fft_size,
                                    hop_length=cfg.hop_size,
                                    win_length=cfg.win_size, window=window,
                                    center=True, length=T))
        refined = torch.stack(outs, dim=1)
        if self.backbone.config.apply_mixture_consistency:
            ests = mixture_consistency(list(refined.unbind(dim=1)), mix)
            refined = torch.stack(ests, dim=1)
        return refined, initial


def isrnet_refine(joint: JointSeparator, mixture: AudioBuffer) -> list:
    """Run the joint model on one buffer, returning refined estimates."""
    if mixture.sample_rate != joint.backbone.config.sample_rate:
        raise ValueError("mixture rate does not match model rate")
    with torch.no_grad():
        mix = torch.as_tensor(mixture.samples, dtype=torch.float32).unsqueeze(0)
        refined, _ = joint(mix)
    return [AudioBuffer(e.numpy().astype(np.float64), mixture.sample_rate)
            for e in refined[0].unbind(0)]


def count_params(model: nn.Module) -> int:
    """Number of trainable scalars."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
