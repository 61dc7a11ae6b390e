import json

import pytest

from medleysep.config import (ConfigError, ExperimentConfig, echo_config,
                              load_config, resolved_dict)


def test_defaults_without_file():
    cfg = load_config()
    assert cfg.sample_rate == 24000
    assert cfg.backbone.basis == "stft"
    assert cfg.isrnet.freq_boundary_hz == 3000.0


def test_file_values_and_nested_sections(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({
        "sample_rate": 16000,
        "manifest": "train.jsonl",
        "backbone": {"basis": "learnable", "tcn": {"n_blocks": 4}},
        "loss": {"time_loss": "si_sdr",
                 "stft_resolutions": [[256, 64, 256]]},
    }))
    cfg = load_config(path)
    assert cfg.sample_rate == 16000
    assert cfg.backbone.basis == "learnable"
    assert cfg.backbone.tcn.n_blocks == 4
    assert cfg.backbone.tcn.n_repeats == 3  # untouched default
    assert cfg.loss.stft_resolutions == ((256, 64, 256),)


def test_overrides_win_over_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 1, "isrnet": {"freq_boundary_hz": 1500}}))
    cfg = load_config(path, {"seed": 2, "isrnet.freq_boundary_hz": 4500.0})
    assert cfg.seed == 2
    assert cfg.isrnet.freq_boundary_hz == 4500.0


def test_none_overrides_ignored():
    cfg = load_config(None, {"seed": None, "workers": 3})
    assert cfg.seed == 0
    assert cfg.workers == 3


def test_unknown_field_rejected(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"no_such_field": 1}))
    with pytest.raises(ConfigError, match="no_such_field"):
        load_config(path)


def test_invalid_value_wrapped_as_config_error(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"backbone": {"basis": "wavelet"}}))
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="cannot load"):
        load_config(tmp_path / "absent.json")


def test_malformed_json_is_config_error(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)


def test_data_root_prefixes_relative_paths(tmp_path, monkeypatch):
    monkeypatch.setenv("MEDLEYSEP_DATA_ROOT", str(tmp_path))
    cfg = load_config(None, {"manifest": "train.jsonl",
                             "medleyvox_metadata": "/abs/meta.jsonl"})
    assert cfg.manifest == str(tmp_path / "train.jsonl")
    assert cfg.medleyvox_metadata == "/abs/meta.jsonl"  # absolute untouched


def test_data_root_ignored_when_unset(monkeypatch):
    monkeypatch.delenv("MEDLEYSEP_DATA_ROOT", raising=False)
    cfg = load_config(None, {"manifest": "train.jsonl"})
    assert cfg.manifest == "train.jsonl"


def test_echo_roundtrips_through_loader(tmp_path):
    cfg = load_config(None, {"sample_rate": 16000,
                             "loss.time_loss": "si_sdr"})
    path = echo_config(cfg, tmp_path)
    assert load_config(path) == cfg


def test_resolved_dict_materializes_defaults():
    d = resolved_dict(ExperimentConfig())
    assert d["backbone"]["tcn"]["n_blocks"] == 8
    assert d["eval_options"]["filter_taps"] == 512
