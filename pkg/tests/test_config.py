import json

import pytest

from pantcr import config
from pantcr.errors import ValidationError


def test_defaults_build_valid_sections():
    cfg = config.default_config()
    assert config.network_config(cfg).stage_widths == (16, 24, 48)
    assert config.train_config(cfg).seed == 0
    assert config.synth_config(cfg).reduced_size == 128
    assert config.split_counts(cfg) == {"train": 32, "val": 8, "test_reduced": 4, "test_full": 0}


def test_overrides_parse_json_values():
    cfg = config.apply_overrides(config.default_config(), ["train.epochs=500", "net.ablation.se_mode=off", "seed=7"])
    assert cfg["train"]["epochs"] == 500
    assert cfg["net"]["ablation"]["se_mode"] == "off"
    assert config.train_config(cfg).seed == 7


@pytest.mark.parametrize("item", ["train.momentum=1", "nosuch=1", "train.epochs"])
def test_bad_overrides(item):
    with pytest.raises(ValidationError):
        config.apply_overrides(config.default_config(), [item])


def test_load_config_file_and_run_json(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"train": {"epochs": 3}}))
    assert config.load_config(p)["train"]["epochs"] == 3
    run = tmp_path / "run.json"
    run.write_text(json.dumps({"subcommand": "train", "seed": 1, "config": {"seed": 1}, "args": {}}))
    assert config.load_config(run)["seed"] == 1
    p.write_text(json.dumps({"train": {"warmup": 3}}))
    with pytest.raises(ValidationError):
        config.load_config(p)
    with pytest.raises(ValidationError):
        config.load_config(tmp_path / "missing.json")
