import json

import pytest

from pathmaps.config import (
    PRESETS,
    ConfigError,
    ExperimentConfig,
    config_from_dict,
    load_config,
    preset,
    runtime_settings
)


class TestConfigFromDict:

    def test_defaults_are_consistent(self):
        cfg = ExperimentConfig().validate()
        assert cfg.map_tokenizer.channels == 1
        assert cfg.fusion.d == cfg.mapper.d

    def test_overlay_keeps_unset_keys(self):
        cfg = config_from_dict({"train": {"epochs": 3}, "synth": {"params": ["power", "delay"]},
                                "mapper": {"tasks": ["power"]}})
        assert cfg.train.epochs == 3
        assert cfg.train.batch_size == ExperimentConfig().train.batch_size
        assert cfg.synth.params == ("power", "delay")
        assert cfg.mapper.tasks == ("power",)

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="sections"):
            config_from_dict({"optimizer": {}})

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="lr"):
            config_from_dict({"train": {"lr": 0.1}})

    def test_invalid_value_is_wrapped(self):
        with pytest.raises(ConfigError) as info:
            config_from_dict({"train": {"epochs": 0}})
        assert info.value.code == "config-error"

    def test_width_mismatch(self):
        with pytest.raises(ConfigError, match="fusion.d"):
            config_from_dict({"fusion": {"d": 32}})

    def test_task_not_synthesized(self):
        with pytest.raises(ConfigError, match="not synthesized"):
            config_from_dict({"synth": {"params": ["power"]}, "mapper": {"tasks": ["power", "delay"]}})

    def test_patch_divisibility(self):
        with pytest.raises(ConfigError, match="image_size"):
            config_from_dict({"synth": {"image_size": 60}})

    def test_round_trip_through_dict(self):
        cfg = config_from_dict({"train": {"epochs": 7}, "mapper": {"max_path_index": 6}})
        assert config_from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


class TestPresets:

    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_presets_validate(self, name):
        cfg = preset(name)
        assert cfg.fusion.d == cfg.mapper.d
        assert cfg.tokenizer.K == cfg.map_tokenizer.K

    def test_sizes_grow(self):
        small, base, large = preset("small"), preset("base"), preset("large")
        assert small.mapper.d < base.mapper.d < large.mapper.d
        assert small.mapper.n_routed < base.mapper.n_routed < large.mapper.n_routed
        assert large.mapper.n_token_blocks == 3 * large.mapper.n_task_blocks

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset("huge")


class TestLoadConfig:

    def test_file_on_top_of_preset(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"train": {"epochs": 2}}), encoding="utf-8")
        cfg = load_config(path, "small")
        assert cfg.train.epochs == 2
        assert cfg.mapper.d == preset("small").mapper.d

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="Cannot read"):
            load_config(tmp_path / "absent.json")

    def test_bad_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(path)


class TestRuntimeSettings:

    def test_environment(self, monkeypatch, tmp_path):
        monkeypatch.setenv("PATHMAPS_DEVICE", "cpu")
        monkeypatch.setenv("PATHMAPS_OUT_DIR", str(tmp_path))
        monkeypatch.setenv("PATHMAPS_WORKERS", "3")
        monkeypatch.setenv("DEBUG", "true")
        settings = runtime_settings()
        assert settings.out_dir == tmp_path
        assert settings.workers == 3
        assert settings.debug

    @pytest.mark.parametrize("value", ["zero", "0"])
    def test_bad_workers(self, monkeypatch, value):
        monkeypatch.setenv("PATHMAPS_WORKERS", value)
        with pytest.raises(ConfigError):
            runtime_settings()
