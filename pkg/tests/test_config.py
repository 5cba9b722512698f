import json

import pytest

from hiertree.config import resolve_config
from hiertree.errors import ConfigError


class TestPrecedence:
    def test_defaults(self):
        cfg = resolve_config(env={})
        assert cfg.momentum == 0.9
        assert cfg.tolerance == 0.0
        assert cfg.leaf_threshold == 2
        assert cfg.direct_threshold == 10
        assert cfg.max_depth == 6
        assert cfg.seed == 0

    def test_file_overrides_defaults(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"lambda": 0.5, "seed": 7}))
        cfg = resolve_config(str(path), env={})
        assert cfg.momentum == 0.5 and cfg.seed == 7

    def test_env_overrides_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"cache_dir": "/from/file"}))
        cfg = resolve_config(str(path), env={"HIERTREE_CACHE_DIR": "/from/env"})
        assert cfg.cache_dir == "/from/env"

    def test_flags_override_env_and_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"cache_dir": "/from/file", "lambda": 0.1}))
        cfg = resolve_config(
            str(path),
            env={"HIERTREE_CACHE_DIR": "/from/env"},
            overrides={"cache_dir": "/from/flag", "momentum": 0.3},
        )
        assert cfg.cache_dir == "/from/flag"
        assert cfg.momentum == 0.3

    def test_none_overrides_do_not_mask(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"lambda": 0.4}))
        cfg = resolve_config(str(path), env={}, overrides={"momentum": None})
        assert cfg.momentum == 0.4

    def test_tau_alias(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"tau": 0.05}))
        assert resolve_config(str(path), env={}).tolerance == 0.05


class TestFileFormats:
    def test_toml(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text('lambda = 0.25\nmax_depth = 3\n')
        cfg = resolve_config(str(path), env={})
        assert cfg.momentum == 0.25 and cfg.max_depth == 3

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            resolve_config("/no/such/config.json", env={})

    def test_bad_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            resolve_config(str(path), env={})

    def test_bad_toml(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("= broken =")
        with pytest.raises(ConfigError):
            resolve_config(str(path), env={})

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"not_a_knob": 1}))
        with pytest.raises(ConfigError):
            resolve_config(str(path), env={})


class TestEcho:
    def test_api_key_masked_in_echo(self):
        cfg = resolve_config(env={"HIERTREE_API_KEY": "super-secret"})
        echoed = cfg.to_dict()
        assert echoed["api_key"] == "***"
        assert cfg.api_key == "super-secret"
