import json

import numpy as np
import pytest

from maskgc.config import (ConfigError, RunConfig, apply_override, derive_rng, load_config,
                           parse_override, save_config)


def test_toml_and_json_load_identically(tmp_path):
    (tmp_path / "c.toml").write_text(
        "seed = 4\n[model]\nd_model = 32\nobjective = \"nll\"\n[optimizer]\nsparsity = 0.02\n")
    (tmp_path / "c.json").write_text(json.dumps(
        {"seed": 4, "model": {"d_model": 32, "objective": "nll"}, "optimizer": {"sparsity": 0.02}}))
    a, b = load_config(tmp_path / "c.toml"), load_config(tmp_path / "c.json")
    assert a == b and a.model.d_model == 32 and a.seed == 4


def test_unknown_keys_are_errors(tmp_path):
    (tmp_path / "c.toml").write_text("[model]\nwidth = 3\n")
    with pytest.raises(ConfigError, match="model.width"):
        load_config(tmp_path / "c.toml")
    (tmp_path / "d.toml").write_text("[trainer]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "d.toml")


def test_overrides_coerce_types():
    cfg = load_config(None, ["model.d_model=16", "model.layerwise_masks=true",
                             "optimizer.learning_rate=1e-2", "seed=7"])
    assert cfg.model.d_model == 16 and cfg.model.layerwise_masks is True
    assert cfg.optimizer.learning_rate == 0.01 and cfg.seed == 7
    with pytest.raises(ConfigError):
        apply_override(cfg, "model.nope", "1")
    with pytest.raises(ConfigError):
        apply_override(cfg, "d_model", "1")
    with pytest.raises(ConfigError):
        apply_override(cfg, "model.layerwise_masks", "maybe")
    with pytest.raises(ConfigError):
        parse_override("model.d_model")


def test_validation():
    with pytest.raises(ConfigError):
        RunConfig().replace(**{"model.n_vars": 3, "model.objective": "mae"}).validate()
    with pytest.raises(ConfigError):
        RunConfig().replace(**{"model.n_vars": 3, "optimizer.epochs": 0}).validate()
    with pytest.raises(ConfigError):
        RunConfig().replace(**{"model.n_vars": 3, "data.test_fraction": 1.0}).validate()


def test_save_round_trip(tmp_path):
    cfg = RunConfig().replace(**{"model.d_model": 12, "seed": 3})
    save_config(cfg, tmp_path / "r.json")
    assert load_config(tmp_path / "r.json") == cfg


def test_derived_streams_are_independent_and_reproducible():
    a = derive_rng(0, "init").random(4)
    assert np.array_equal(a, derive_rng(0, "init").random(4))
    assert not np.array_equal(a, derive_rng(0, "dropout").random(4))
    assert not np.array_equal(a, derive_rng(1, "init").random(4))
