import json
import os

import numpy as np
import pytest
import torch

from conftest import toy_batch_fn, toy_duets
from medleysep.audio_core import StftConfig
from medleysep.corpus import SourceIndex, load_manifest
from medleysep.mixer import MixPolicy
from medleysep.objectives import LossConfig
from medleysep.separators import BackboneConfig, ISRNetConfig, TcnConfig
from medleysep.trainer import (TrainLoopConfig, joint_finetune, load_checkpoint,
                               manifest_batch_fn, save_checkpoint, train)

TINY_STFT = StftConfig(256, 256, 64)
TINY_TCN = TcnConfig(n_blocks=3, n_repeats=1, bottleneck_ch=8, conv_ch=16,
                     skip_ch=8)
LOSS = LossConfig(time_loss="snr", stft_resolutions=((256, 64, 256),))


def tiny_cfg(**kw):
    return BackboneConfig(basis="stft", stft=TINY_STFT, sample_rate=16000,
                          tcn=TINY_TCN, **kw)


def loop_cfg(run_dir, **kw):
    defaults = dict(steps=5, batch_size=2, lr=1e-3, checkpoint_every=100,
                    log_every=1, run_dir=str(run_dir), seed=0)
    defaults.update(kw)
    return TrainLoopConfig(**defaults)


def _read_log(run_dir):
    with open(os.path.join(str(run_dir), "log.jsonl"), encoding="utf-8") as f:
        return [json.loads(line) for line in f]


def test_zero_step_budget_initial_checkpoint_only(tmp_path):
    examples = toy_duets(n_examples=2)
    loop = loop_cfg(tmp_path / "run", steps=0)
    model, ckpts = train(tiny_cfg(), LOSS, loop, toy_batch_fn(examples, 2))
    assert len(ckpts) == 1
    assert ckpts[0].endswith("step_0.ckpt")
    payload = load_checkpoint(ckpts[0])
    assert payload["step"] == 0


def test_identical_seed_identical_first_step_loss(tmp_path):
    examples = toy_duets(n_examples=2)
    losses = []
    for name in ("a", "b"):
        loop = loop_cfg(tmp_path / name, steps=2)
        train(tiny_cfg(), LOSS, loop, toy_batch_fn(examples, 2))
        losses.append(_read_log(tmp_path / name)[0]["loss"])
    assert losses[0] == losses[1]


def test_checkpoint_roundtrip_bitwise(tmp_path):
    examples = toy_duets(n_examples=2)
    loop = loop_cfg(tmp_path / "run", steps=3)
    model, ckpts = train(tiny_cfg(), LOSS, loop, toy_batch_fn(examples, 2))
    payload = load_checkpoint(ckpts[-1])
    resaved = tmp_path / "resaved.ckpt"

    class _Stub:
        def __init__(self, state):
            self._state = state

        def state_dict(self):
            return self._state

    save_checkpoint(resaved, _Stub(payload["state"]), payload["step"],
                    payload["config"])
    again = load_checkpoint(resaved)
    assert again["step"] == payload["step"]
    assert again["config"] == payload["config"]
    for key, val in payload["state"].items():
        assert torch.equal(again["state"][key], val), key


def test_checkpoint_config_echo_rebuilds_model(tmp_path):
    from medleysep.config import _build
    from medleysep.separators import ConvTasNet

    examples = toy_duets(n_examples=2)
    loop = loop_cfg(tmp_path / "run", steps=1)
    model, ckpts = train(tiny_cfg(), LOSS, loop, toy_batch_fn(examples, 2))
    payload = load_checkpoint(ckpts[-1])
    rebuilt = ConvTasNet(_build(BackboneConfig, payload["config"]["backbone"]))
    rebuilt.load_state_dict(payload["state"])  # raises on shape mismatch
    mix = examples[0][0].unsqueeze(0)
    with torch.no_grad():
        np.testing.assert_allclose(rebuilt(mix).numpy(), model(mix).numpy())


def test_resume_continues_step_counter(tmp_path):
    examples = toy_duets(n_examples=4)
    loop_a = loop_cfg(tmp_path / "run", steps=4, checkpoint_every=2)
    _, ckpts = train(tiny_cfg(), LOSS, loop_a, toy_batch_fn(examples, 2))
    mid = [c for c in ckpts if c.endswith("step_2.ckpt")][0]
    loop_b = loop_cfg(tmp_path / "run2", steps=6, checkpoint_every=2)
    _, ckpts_b = train(tiny_cfg(), LOSS, loop_b, toy_batch_fn(examples, 2),
                       start_from=mid)
    assert load_checkpoint(ckpts_b[0])["step"] == 2
    assert load_checkpoint(ckpts_b[-1])["step"] == 6


def test_toy_loss_decreases_from_step0(tmp_path):
    examples = toy_duets(n_examples=4)
    loop = loop_cfg(tmp_path / "run", steps=60, log_every=5)
    train(tiny_cfg(), LOSS, loop, toy_batch_fn(examples, 2))
    log = _read_log(tmp_path / "run")
    assert log[-1]["running"] < log[0]["loss"]


def test_nonfinite_loss_aborts_after_three(tmp_path):
    def bad_batch(rng, step):
        mix = torch.full((2, 2048), float("nan"))
        ref = torch.zeros(2, 2, 2048)
        ref[:, :, 0] = 1.0
        return mix, ref, "duet"

    loop = loop_cfg(tmp_path / "run", steps=10)
    with pytest.raises(RuntimeError, match="non-finite"):
        train(tiny_cfg(), LOSS, loop, bad_batch)


def test_dynamic_mixing_no_repeated_mixtures(tiny_manifest, tmp_path):
    records = load_manifest(tiny_manifest)
    index = SourceIndex.build(records)
    policy = MixPolicy(chunk_seconds=1.0)
    loop = TrainLoopConfig(steps=0, batch_size=2, run_dir=str(tmp_path),
                           seed=3, task="duet_unison")
    batch = manifest_batch_fn(index, policy, loop, 16000)
    rng = np.random.default_rng(3)
    seen = set()
    for step in range(25):
        mix, ref, category = batch(rng, step)
        assert category in ("duet", "unison")
        assert mix.shape == (2, 16000)
        assert ref.shape == (2, 2, 16000)
        np.testing.assert_allclose(ref.sum(dim=1).numpy(), mix.numpy(),
                                   atol=1e-6)
        for b in range(mix.shape[0]):
            key = mix[b].numpy().tobytes()
            assert key not in seen
            seen.add(key)


def test_manifest_batch_fn_main_vs_rest(tiny_manifest, tmp_path):
    records = load_manifest(tiny_manifest)
    index = SourceIndex.build(records)
    policy = MixPolicy(category="main_vs_rest", chunk_seconds=1.0)
    loop = TrainLoopConfig(steps=0, batch_size=2, run_dir=str(tmp_path),
                           seed=0, task="main_vs_rest")
    batch = manifest_batch_fn(index, policy, loop, 16000)
    mix, ref, category = batch(np.random.default_rng(0), 0)
    assert category == "main_vs_rest"
    assert ref.shape[1] == 2  # main + rest-sum


def test_joint_finetune_improves_over_frozen_backbone(tmp_path):
    from medleysep.trainer import mean_si_sdr_improvement

    examples = toy_duets()
    cfg = BackboneConfig(basis="stft", stft=TINY_STFT, sample_rate=16000,
                         tcn=TcnConfig(n_blocks=4, n_repeats=2,
                                       bottleneck_ch=24, conv_ch=48,
                                       skip_ch=24))
    loop_a = loop_cfg(tmp_path / "backbone", steps=150, batch_size=4,
                      checkpoint_every=150, log_every=25)
    backbone, ckpts = train(cfg, LOSS, loop_a, toy_batch_fn(examples))
    base = mean_si_sdr_improvement(backbone, examples)
    icfg = ISRNetConfig(n_convnext_blocks=2, channels=16,
                        freq_boundary_hz=3000, stft=TINY_STFT,
                        sample_rate=16000)
    loop_b = loop_cfg(tmp_path / "joint", steps=100, batch_size=4, lr=5e-4,
                      checkpoint_every=100, log_every=25)
    joint, _ = joint_finetune(ckpts[-1], cfg, icfg, LOSS, loop_b,
                              toy_batch_fn(examples))
    assert mean_si_sdr_improvement(joint, examples) > base


def test_joint_checkpoint_stores_both_submodels(tmp_path):
    examples = toy_duets(n_examples=2)
    loop_a = loop_cfg(tmp_path / "backbone", steps=1)
    _, ckpts = train(tiny_cfg(), LOSS, loop_a, toy_batch_fn(examples, 2))
    icfg = ISRNetConfig(n_convnext_blocks=1, channels=4,
                        freq_boundary_hz=3000, stft=TINY_STFT,
                        sample_rate=16000)
    loop_b = loop_cfg(tmp_path / "joint", steps=1)
    _, joint_ckpts = joint_finetune(ckpts[-1], tiny_cfg(), icfg, LOSS, loop_b,
                                    toy_batch_fn(examples, 2))
    state = load_checkpoint(joint_ckpts[-1])["state"]
    prefixes = {k.split(".")[0] for k in state}
    assert "backbone" in prefixes and "isrnet" in prefixes


def test_joint_finetune_incompatible_checkpoint(tmp_path):
    examples = toy_duets(n_examples=2)
    loop_a = loop_cfg(tmp_path / "backbone", steps=0)
    _, ckpts = train(tiny_cfg(), LOSS, loop_a, toy_batch_fn(examples, 2))
    other = BackboneConfig(basis="stft", stft=TINY_STFT, sample_rate=16000,
                           tcn=TcnConfig(n_blocks=2, n_repeats=1,
                                         bottleneck_ch=4, conv_ch=8,
                                         skip_ch=4))
    icfg = ISRNetConfig(n_convnext_blocks=1, channels=4,
                        freq_boundary_hz=3000, stft=TINY_STFT,
                        sample_rate=16000)
    with pytest.raises(ValueError, match="incompatible"):
        joint_finetune(ckpts[-1], other, icfg, LOSS,
                       loop_cfg(tmp_path / "joint", steps=1),
                       toy_batch_fn(examples, 2))


def test_unsupported_checkpoint_version(tmp_path):
    path = tmp_path / "bad.ckpt"
    torch.save({"version": 99, "step": 0, "config": {}, "state": {}}, path)
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(path)
