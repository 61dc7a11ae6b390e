"""Optimization loop wiring mixer -> separator -> objectives, with
checkpointing and the two-stage (backbone, then joint iSRNet) schedule.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import mixer as mixer_mod
from .audio_core import AudioBuffer
from .corpus import SourceIndex
from .mixer import MixPolicy
from .objectives import LossConfig, composite_loss, orpit_loss, si_sdr, upit_loss
from .separators import (BackboneConfig, ConvTasNet, ISRNet, ISRNetConfig,
                         JointSeparator)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainLoopConfig:
    steps: int = 200_000
    batch_size: int = 8
    lr: float = 5e-4
    grad_clip: float = 5.0
    checkpoint_every: int = 1000
    log_every: int = 50
    task: str = "duet_unison"  # "duet_unison" | "main_vs_rest"
    p_unison: float = 0.5  # share of unison batches in the duet_unison task
    aux_initial_weight: float = 0.2  # backbone-output loss weight in joint runs
    run_dir: str = "runs/default"
    seed: int = 0


def save_checkpoint(path, model, step: int, config_echo: dict, optimizer=None):
    payload = {
        "version": CHECKPOINT_VERSION,
        "step": step,
        "config": config_echo,
        "state": model.state_dict(),
    }
    if optimizer is not None:
        payload["optimizer"] = optimizer.state_dict()
    os.makedirs(os.path.dirname(str(path)) or ".", exist_ok=True)
    torch.save(payload, str(path))


def load_checkpoint(path):
    payload = torch.load(str(path), map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version in {path}")
    return payload


def _config_echo(obj) -> dict:
    if dataclasses.is_dataclass(obj):
        return {f.name: _config_echo(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_config_echo(v) for v in obj]
    return obj


def manifest_batch_fn(index: SourceIndex, policy: MixPolicy, loop: TrainLoopConfig,
                      sample_rate: int):
    """Batch provider drawing fresh dynamic mixtures from a source manifest.
    Returns (mix, refs) float32 tensors of shape (B, T) / (B, 2, T)."""
    from .audio_core import read_wav, resample

    cache = {}

    def _load(record) -> AudioBuffer:
        if record.utterance_id not in cache:
            buf = read_wav(record.audio_path)
            cache[record.utterance_id] = resample(buf, sample_rate)
        return cache[record.utterance_id]

    def batch(rng, step: int):
        mixes, refs = [], []
        if loop.task == "main_vs_rest":
            category = "main_vs_rest"
        else:
            category = "unison" if rng.random() < loop.p_unison else "duet"
        for _ in range(loop.batch_size):
            if category == "unison":
                rec, _ = mixer_mod.sample_pair(index, policy, rng)
                ex = mixer_mod.make_unison(_load(rec), policy, rng)
            elif category == "duet":
                a, b = mixer_mod.sample_pair(index, policy, rng)
                ex = mixer_mod.make_duet(_load(a), _load(b), policy, rng)
            else:
                main, rest = mixer_mod.sample_main_and_rest(index, policy, rng)
                ex = mixer_mod.make_main_vs_rest(
                    _load(main), [_load(r) for r in rest], policy, rng)
            mixes.append(ex.mixture.samples)
            refs.append(np.stack([s.samples for s in ex.sources]))
        mix = torch.as_tensor(np.stack(mixes), dtype=torch.float32)
        ref = torch.as_tensor(np.stack(refs), dtype=torch.float32)
        return mix, ref, category

    return batch


def _batch_loss(est, ref, category: str, base_loss):
    """PIT loss for one batch: uPIT on duet/unison, fixed one-vs-rest
    assignment on main_vs_rest."""
    total = 0.0
    B = est.shape[0]
    for b in range(B):
        if category == "main_vs_rest":
            total = total + orpit_loss(est[b, 0], est[b, 1],
                                       ref[b, 0], ref[b, 1], base_loss)
        else:
            loss, _ = upit_loss(list(est[b].unbind(0)), list(ref[b].unbind(0)),
                                base_loss)
            total = total + loss
    return total / B


def _optimize(model, forward, batch_fn, loop: TrainLoopConfig, loss_cfg: LossConfig,
              config_echo: dict, start_step: int = 0, optimizer_state=None):
    """Shared loop for backbone training and joint finetuning. `forward`
    maps a mixture batch to the tensor(s) the loss is computed on."""
    base_loss = composite_loss(loss_cfg)
    rng = np.random.default_rng(loop.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=loop.lr)
    if optimizer_state is not None:
        optimizer.load_state_dict(optimizer_state)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, factor=0.5, patience=10)
    os.makedirs(loop.run_dir, exist_ok=True)
    log_path = os.path.join(loop.run_dir, "log.jsonl")
    ckpts = []

    def _ckpt(step):
        path = os.path.join(loop.run_dir, f"step_{step}.ckpt")
        save_checkpoint(path, model, step, config_echo, optimizer)
        ckpts.append(path)

    _ckpt(start_step)
    bad_streak = 0
    running = None
    last_done = start_step
    with open(log_path, "a", encoding="utf-8") as log:
        for step in range(start_step, loop.steps):
            try:
                mix, ref, category = batch_fn(rng, step)
            except KeyboardInterrupt:
                logger.info("interrupted; checkpointing at step %d", last_done)
                break
            loss = forward(mix, ref, category, base_loss)
            if not torch.isfinite(loss):
                bad_streak += 1
                logger.warning("non-finite loss at step %d, skipping", step)
                if bad_streak >= 3:
                    raise RuntimeError(
                        f"3 consecutive non-finite losses ending at step {step}")
                optimizer.zero_grad()
                continue
            bad_streak = 0
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), loop.grad_clip)
            optimizer.step()
            last_done = step + 1
            val = float(loss.item())
            running = val if running is None else 0.95 * running + 0.05 * val
            if (step + 1) % loop.log_every == 0:
                scheduler.step(running)
            if (step + 1) % loop.log_every == 0 or step == start_step:
                log.write(json.dumps({
                    "step": step, "loss": val, "running": running,
                    "category": category, "lr": optimizer.param_groups[0]["lr"],
                    "time": time.time(),
                }) + "\n")
                log.flush()
            if (step + 1) % loop.checkpoint_every == 0:
                _ckpt(step + 1)
    if last_done > start_step and not ckpts[-1].endswith(f"step_{last_done}.ckpt"):
        _ckpt(last_done)
    return ckpts


def train(backbone_cfg: BackboneConfig, loss_cfg: LossConfig,
          loop: TrainLoopConfig, batch_fn, start_from=None):
    """Train a backbone separator. `batch_fn(rng, step)` supplies
    (mix, refs, category) batches; every step draws a fresh batch.
    Returns (model, checkpoint paths)."""
    torch.manual_seed(loop.seed)
    model = ConvTasNet(backbone_cfg)
    start_step = 0
    opt_state = None
    if start_from is not None:
        payload = load_checkpoint(start_from)
        model.load_state_dict(payload["state"])
        start_step = payload["step"]
        opt_state = payload.get("optimizer")
    echo = {"kind": "backbone", "backbone": _config_echo(backbone_cfg),
            "loss": _config_echo(loss_cfg), "loop": _config_echo(loop)}

    def forward(mix, ref, category, base_loss):
        est = model(mix)
        return _batch_loss(est, ref, category, base_loss)

    ckpts = _optimize(model, forward, batch_fn, loop, loss_cfg, echo,
                      start_step=start_step, optimizer_state=opt_state)
    return model, ckpts


def joint_finetune(backbone_ckpt, backbone_cfg: BackboneConfig,
                   isrnet_cfg: ISRNetConfig, loss_cfg: LossConfig,
                   loop: TrainLoopConfig, batch_fn):
    """Finetune backbone + iSRNet jointly from a pre-trained backbone
    checkpoint; the loss targets the refined outputs, with an optional
    auxiliary term on the initial estimates."""
    torch.manual_seed(loop.seed)
    backbone = ConvTasNet(backbone_cfg)
    payload = load_checkpoint(backbone_ckpt)
    try:
        backbone.load_state_dict(payload["state"])
    except RuntimeError as e:
        raise ValueError(f"checkpoint incompatible with backbone config: {e}") from e
    isrnet = ISRNet(isrnet_cfg, n_sources=backbone_cfg.n_sources)
    joint = JointSeparator(backbone, isrnet)
    echo = {"kind": "joint", "backbone": _config_echo(backbone_cfg),
            "isrnet": _config_echo(isrnet_cfg), "loss": _config_echo(loss_cfg),
            "loop": _config_echo(loop)}

    def forward(mix, ref, category, base_loss):
        refined, initial = joint(mix)
        loss = _batch_loss(refined, ref, category, base_loss)
        if loop.aux_initial_weight > 0:
            loss = loss + loop.aux_initial_weight * _batch_loss(
                initial, ref, category, base_loss)
        return loss

    ckpts = _optimize(joint, forward, batch_fn, loop, loss_cfg, echo)
    return joint, ckpts


def mean_si_sdr_improvement(model, examples) -> float:
    """Mean SI-SDRi over fixed (mix, refs) tensors under the best
    2-way permutation; used for toy-run validation."""
    model_was_training = model.training
    model.eval()
    scores = []
    with torch.no_grad():
        for mix, ref in examples:
            out = model(mix.unsqueeze(0))
            est = out[0] if isinstance(out, tuple) else out
            est = est[0]
            perms = [(0, 1), (1, 0)]
            best = None
            for p in perms:
                s = sum(float(si_sdr(est[i], ref[p[i]])) for i in range(2)) / 2
                best = s if best is None or s > best else best
            base = sum(float(si_sdr(mix, ref[i])) for i in range(2)) / 2
            scores.append(best - base)
    if model_was_training:
        model.train()
    return float(np.mean(scores))
