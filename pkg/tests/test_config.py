"""Tests for configuration loading, precedence and the environment helpers."""

import json
from pathlib import Path

import pytest
from pydantic import ValidationError

from utils.config_helpers import read_config_file, resolve_log_level
from verispec.config import Config, deep_merge, inherit_workers, load_config
from verispec.errors import ConfigError
from verispec.specdec import FragmentTruncation

REPO_ROOT = Path(__file__).resolve().parent.parent


def write_json(path: Path, data: dict) -> Path:
    path.write_text(json.dumps(data))
    return path


class TestLoadConfig:
    def test_defaults(self):
        config = load_config()
        assert config.acceptance.epsilon == 0.09
        assert config.acceptance.delta == 0.3
        assert config.labels.heads == 10
        assert config.labels.loss.lambda_max == 0.2
        assert config.bench.samples_per_prompt == 20
        assert config.bench.ks == (1, 5, 10)
        assert config.corpus.threshold == 0.85

    def test_file_then_flags(self, tmp_path):
        path = write_json(tmp_path / "c.json", {"seed": 3, "acceptance": {"epsilon": 0.2, "delta": 0.5}})
        config = load_config(path, {"acceptance": {"epsilon": 0.05, "delta": None}})
        assert config.seed == 3
        assert config.acceptance.epsilon == 0.05
        assert config.acceptance.delta == 0.5

    def test_yaml_file(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("refmodel:\n  n: 4\n  heads: 2\nacceptance:\n  fragment_truncation: lenient\n")
        config = load_config(path)
        assert (config.refmodel.n, config.refmodel.heads) == (4, 2)
        assert config.acceptance.fragment_truncation is FragmentTruncation.LENIENT

    def test_empty_yaml_is_defaults(self, tmp_path):
        path = tmp_path / "empty.yml"
        path.write_text("")
        assert load_config(path) == Config()

    def test_environment_names_the_file(self, tmp_path, monkeypatch):
        path = write_json(tmp_path / "env.json", {"workers": 3})
        monkeypatch.setenv("VERISPEC_CONFIG", str(path))
        assert load_config().workers == 3

    def test_explicit_path_beats_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("VERISPEC_CONFIG", str(write_json(tmp_path / "env.json", {"workers": 3})))
        assert load_config(write_json(tmp_path / "flag.json", {"workers": 5})).workers == 5

    @pytest.mark.parametrize(
        "data",
        [{"unknown": 1}, {"acceptance": {"epsilonn": 0.1}}, {"labels": {"heads": 0}}, {"acceptance": {"delta": 2.0}}],
    )
    def test_invalid_values(self, tmp_path, data):
        with pytest.raises(ConfigError):
            load_config(write_json(tmp_path / "bad.json", data))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.json")

    @pytest.mark.parametrize(
        "name,text", [("bad.yaml", "a: [1, 2"), ("list.json", "[1, 2]"), ("config.toml", "a = 1")]
    )
    def test_unreadable_files(self, tmp_path, name, text):
        path = tmp_path / name
        path.write_text(text)
        with pytest.raises(ConfigError):
            load_config(path)

    def test_models_are_frozen(self):
        config = Config()
        with pytest.raises(ValidationError):
            config.seed = 4

    def test_shipped_config_is_valid(self):
        config = load_config(REPO_ROOT / "verispec_config.json")
        assert config.workers == 4
        assert config.bench.workers == 4
        assert config.refmodel.labels == "syntax"
        assert config.paths.medusa_model is not None

    def test_bench_workers_follow_top_level(self, tmp_path):
        path = write_json(tmp_path / "c.json", {"workers": 3, "bench": {"samples_per_prompt": 2}})
        assert load_config(path).bench.workers == 3
        assert load_config(overrides={"workers": 5}).bench.workers == 5

    def test_bench_workers_set_explicitly_win(self, tmp_path):
        path = write_json(tmp_path / "c.json", {"workers": 3, "bench": {"workers": 2}})
        assert load_config(path).bench.workers == 2
        assert load_config(path).workers == 3


class TestHelpers:
    def test_inherit_workers_leaves_input_alone(self):
        data = {"workers": 2}
        assert inherit_workers(data) == {"workers": 2, "bench": {"workers": 2}}
        assert data == {"workers": 2}
        assert inherit_workers({"bench": {}}) == {"bench": {}}

    def test_deep_merge(self):
        base = {"a": 1, "b": {"c": 2, "d": 3}}
        merged = deep_merge(base, {"b": {"c": 9, "d": None}, "e": None, "f": 4})
        assert merged == {"a": 1, "b": {"c": 9, "d": 3}, "f": 4}
        assert base == {"a": 1, "b": {"c": 2, "d": 3}}

    def test_read_config_file_rejects_unknown_suffix(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[x]")
        with pytest.raises(ValueError):
            read_config_file(path)

    def test_log_level_precedence(self, monkeypatch):
        assert resolve_log_level() == "INFO"
        monkeypatch.setenv("VERISPEC_LOG_LEVEL", "warning")
        assert resolve_log_level() == "WARNING"
        assert resolve_log_level("debug") == "DEBUG"
