import json

import pytest

from graphdistill.config import RunConfig, apply_overrides, distill_config, load_config, parse_config
from graphdistill.student_distill import ConfigError


def test_defaults_complete():
    cfg = parse_config({})
    blob = cfg.to_json()
    assert blob["distill"]["lambda"] == 1.0 and blob["distill"]["epsilon"] == 0.05
    assert blob["evaluation"]["alphas"] == [0.0, 0.5, 1.0]
    assert blob["dataset"]["sbm"]["nodes_per_block"] == 250


def test_unknown_key_names_path():
    with pytest.raises(ConfigError, match="distill.temperature"):
        parse_config({"distill": {"temperature": 2}})


def test_type_error_names_path():
    with pytest.raises(ConfigError, match="teacher.epochs"):
        parse_config({"teacher": {"epochs": "many"}})


def test_range_error_names_path():
    with pytest.raises(ConfigError, match="distill.epsilon"):
        parse_config({"distill": {"epsilon": -0.1}})


def test_empty_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("  \n")
    with pytest.raises(ConfigError, match="empty"):
        load_config(p)


def test_invalid_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)


def test_overrides():
    cfg = apply_overrides(parse_config({}), {"distill.eta": 0.2, "seed": 4, "distill.lambda": 0.5})
    assert cfg.distill.eta == 0.2 and cfg.seed == 4 and cfg.distill.lambda_ == 0.5
    with pytest.raises(ConfigError, match="distill.nope"):
        apply_overrides(cfg, {"distill.nope": 1})


def test_hash_ignores_output_and_tracks_values():
    a = parse_config({})
    b = apply_overrides(a, {"output": "elsewhere"})
    c = apply_overrides(a, {"distill.mu": 0.2})
    assert a.hash() == b.hash() != c.hash()
    assert a.hash("teacher") == c.hash("teacher")


def test_distill_config_seed():
    cfg = parse_config({"seed": 3})
    assert distill_config(cfg).seed == 3 and distill_config(cfg, 7).seed == 7


def test_roundtrip():
    cfg = parse_config({"dataset": {"path": "data/x"}, "positions": {"dim": 0}})
    assert parse_config(json.loads(json.dumps(cfg.to_json()))).to_json() == cfg.to_json()
    assert isinstance(cfg, RunConfig)
