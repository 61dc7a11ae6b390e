"""Command-line entry point: `medleysep {mix,train,finetune,eval,oracle,report}`.

Exit codes: 0 success, 1 configuration error, 2 I/O error. These are a
stable contract.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import corpus, mixer, trainer
from .audio_core import read_wav, resample, write_wav
from .config import ConfigError, echo_config, load_config
from .evaluation import evaluate_dataset, summarize, write_records
from .oracle_masks import oracle_separate_fn
from .reporting import format_summary, render_figures, write_summary_table
from .separators import (BackboneConfig, ConvTasNet, ISRNet, ISRNetConfig,
                         JointSeparator, backbone_separate, isrnet_refine)

logger = logging.getLogger("medleysep")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2


def _parser():
    p = argparse.ArgumentParser(prog="medleysep",
                                description="multi-singing separation toolkit")
    p.add_argument("--log-level", default="INFO")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="experiment config JSON")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--workers", type=int, default=None)

    mix = sub.add_parser("mix", help="materialize dynamic mixtures offline")
    common(mix)
    mix.add_argument("--n-examples", type=int, default=10)
    mix.add_argument("--category", choices=("unison", "duet", "main_vs_rest"),
                     default=None)

    train = sub.add_parser("train", help="train a backbone separator")
    common(train)

    fine = sub.add_parser("finetune", help="joint backbone + iSRNet finetuning")
    common(fine)
    fine.add_argument("--checkpoint", required=True, help="backbone checkpoint")
    fine.add_argument("--boundary-hz", type=float, default=None)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on MedleyVox metadata")
    common(ev)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--metadata", default=None, help="MedleyVox metadata JSONL")
    ev.add_argument("--clipped", action="store_true",
                    help="additionally score after 16-bit save-load")

    orc = sub.add_parser("oracle", help="evaluate ideal masks on MedleyVox metadata")
    common(orc)
    orc.add_argument("mask_kind", choices=("ibm", "irm", "cirm"))
    orc.add_argument("--metadata", default=None)
    orc.add_argument("--clipped", action="store_true")

    rep = sub.add_parser("report", help="tables + figures from eval records")
    common(rep)
    rep.add_argument("records", help="EvalRecord JSONL file")
    return p


def _load_cfg(args, extra=None):
    overrides = {"seed": getattr(args, "seed", None),
                 "workers": getattr(args, "workers", None)}
    overrides.update(extra or {})
    return load_config(args.config, overrides)


def _load_segments(cfg, args):
    path = getattr(args, "metadata", None) or cfg.medleyvox_metadata
    if not path:
        raise ConfigError("missing MedleyVox metadata path "
                          "(--metadata or config medleyvox_metadata)")
    return corpus.load_medleyvox_metadata(path)


def cmd_mix(args) -> int:
    cfg = _load_cfg(args, {"mix.category": args.category} if args.category else None)
    if not cfg.manifest:
        raise ConfigError("missing field: manifest")
    records = corpus.load_manifest(cfg.manifest)
    index = corpus.SourceIndex.build(records)
    os.makedirs(args.out, exist_ok=True)
    echo_config(cfg, args.out)
    rng = np.random.default_rng(cfg.seed)
    policy = cfg.mix
    cache = {}

    def load(rec):
        if rec.utterance_id not in cache:
            cache[rec.utterance_id] = resample(read_wav(rec.audio_path),
                                               cfg.sample_rate)
        return cache[rec.utterance_id]

    prov_path = os.path.join(args.out, "provenance.jsonl")
    with open(prov_path, "w", encoding="utf-8") as prov:
        for i in range(args.n_examples):
            if policy.category == "unison":
                rec, _ = mixer.sample_pair(index, policy, rng)
                ex = mixer.make_unison(load(rec), policy, rng)
                utts = [rec.utterance_id]
            elif policy.category == "duet":
                a, b = mixer.sample_pair(index, policy, rng)
                ex = mixer.make_duet(load(a), load(b), policy, rng)
                utts = [a.utterance_id, b.utterance_id]
            else:
                main, rest = mixer.sample_main_and_rest(index, policy, rng)
                ex = mixer.make_main_vs_rest(load(main), [load(r) for r in rest],
                                             policy, rng)
                utts = [main.utterance_id] + [r.utterance_id for r in rest]
            stem_names = []
            for j, src in enumerate(ex.sources):
                name = f"ex{i:05d}_src{j}.wav"
                write_wav(os.path.join(args.out, name), src, "float32")
                stem_names.append(name)
            mix_name = f"ex{i:05d}_mix.wav"
            write_wav(os.path.join(args.out, mix_name), ex.mixture, "float32")
            # paths relative to the output dir keep identical-seed runs
            # byte-identical regardless of where they land
            prov.write(json.dumps({
                "example": i, "category": ex.category, "utterances": utts,
                "mixture_path": mix_name, "stem_paths": stem_names,
                **ex.provenance,
            }) + "\n")
    print(f"wrote {args.n_examples} examples to {args.out}")
    return EXIT_OK


def _batch_fn_from_cfg(cfg):
    if not cfg.manifest:
        raise ConfigError("missing field: manifest")
    records = corpus.load_manifest(cfg.manifest)
    if not records:
        raise ConfigError(f"manifest {cfg.manifest} has no usable records")
    index = corpus.SourceIndex.build(records)
    return trainer.manifest_batch_fn(index, cfg.mix, cfg.train, cfg.sample_rate)


def cmd_train(args) -> int:
    cfg = _load_cfg(args, {"train.run_dir": os.path.join(args.out, "run"),
                           "train.seed": args.seed} if args.seed is not None
                    else {"train.run_dir": os.path.join(args.out, "run")})
    echo_config(cfg, args.out)
    batch_fn = _batch_fn_from_cfg(cfg)
    trainer.train(cfg.backbone, cfg.loss, cfg.train, batch_fn)
    print(f"training complete; checkpoints in {cfg.train.run_dir}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    extra = {"train.run_dir": os.path.join(args.out, "run")}
    if args.seed is not None:
        extra["train.seed"] = args.seed
    if args.boundary_hz is not None:
        extra["isrnet.freq_boundary_hz"] = args.boundary_hz
    cfg = _load_cfg(args, extra)
    echo_config(cfg, args.out)
    batch_fn = _batch_fn_from_cfg(cfg)
    trainer.joint_finetune(args.checkpoint, cfg.backbone, cfg.isrnet,
                           cfg.loss, cfg.train, batch_fn)
    print(f"joint finetuning complete; checkpoints in {cfg.train.run_dir}")
    return EXIT_OK


def _separator_from_checkpoint(path, cfg):
    from .config import _build

    payload = trainer.load_checkpoint(path)
    echo = payload["config"]
    kind = echo.get("kind", "backbone")
    backbone_cfg = _build(BackboneConfig, echo["backbone"])
    if kind == "joint":
        model = JointSeparator(ConvTasNet(backbone_cfg),
                               ISRNet(_build(ISRNetConfig, echo["isrnet"])))
        model.load_state_dict(payload["state"])
        model.eval()
        return lambda mixture, stems: isrnet_refine(model, mixture)
    model = ConvTasNet(backbone_cfg)
    model.load_state_dict(payload["state"])
    model.eval()
    return lambda mixture, stems: backbone_separate(model, mixture)


def _run_eval(separate_fn, segments, cfg, args) -> int:
    os.makedirs(args.out, exist_ok=True)
    echo_config(cfg, args.out)
    opts = cfg.eval_options
    variants = [("unclipped", dataclasses.replace(opts, clipped_eval=False))]
    if getattr(args, "clipped", False):
        variants.append(("clipped", dataclasses.replace(opts, clipped_eval=True)))
    summaries = {}
    all_records = None
    for name, vopts in variants:
        records, summary = evaluate_dataset(separate_fn, segments, vopts)
        write_records(os.path.join(args.out, f"records_{name}.jsonl"), records)
        write_summary_table(summary, os.path.join(args.out, f"summary_{name}.tsv"))
        summaries[name] = summary
        if name == "unclipped":
            all_records = records
        print(f"[{name}]")
        print(format_summary(summary))
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as f:
        json.dump(summaries, f, indent=2)
    render_figures(all_records, summaries["unclipped"], args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    segments = _load_segments(cfg, args)
    separate_fn = _separator_from_checkpoint(args.checkpoint, cfg)
    return _run_eval(separate_fn, segments, cfg, args)


def cmd_oracle(args) -> int:
    cfg = _load_cfg(args)
    segments = _load_segments(cfg, args)
    separate_fn = oracle_separate_fn(args.mask_kind, cfg.backbone.stft)
    return _run_eval(separate_fn, segments, cfg, args)


def cmd_report(args) -> int:
    from .evaluation import EvalRecord

    records = []
    with open(args.records, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                records.append(EvalRecord(**json.loads(line)))
    summary = summarize(records)
    os.makedirs(args.out, exist_ok=True)
    write_summary_table(summary, os.path.join(args.out, "summary.tsv"))
    figures = render_figures(records, summary, args.out)
    print(format_summary(summary))
    print("figures: " + ", ".join(figures))
    return EXIT_OK


_COMMANDS = {"mix": cmd_mix, "train": cmd_train, "finetune": cmd_finetune,
             "eval": cmd_eval, "oracle": cmd_oracle, "report": cmd_report}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on bad usage; fold that into the config-error
        # code so 2 stays reserved for I/O failures
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.INFO))
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, corpus.ManifestError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
