"""Configuration tests: strict schema, defaults, JSON loading."""
import json

import pytest

from kvpack import ConfigError, RunConfig, config_from_dict, load_config
from kvpack.config import SCHEMA_VERSION


class TestDefaults:
    def test_default_config_builds(self):
        config = RunConfig()
        assert config.scheduler.kind == "mell"
        assert config.scheduler.batching is True
        assert config.sim.epoch_slots == 1
        assert config.schema_version == SCHEMA_VERSION

    def test_empty_document_equals_defaults(self):
        assert config_from_dict({}) == RunConfig()

    def test_round_trip_through_dict(self):
        config = config_from_dict({"sim": {"seed": 7},
                                   "scheduler": {"kind": "bf"}})
        doc = config.to_dict()
        doc.pop("schema_version")
        doc["workload"].pop("trace_path")
        assert config_from_dict(doc) == config


class TestStrictness:
    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict({"clutser": {}})

    def test_unknown_section_key_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict({"sim": {"seeed": 3}})

    def test_type_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict({"sim": {"seed": "zero"}})
        with pytest.raises(ConfigError):
            config_from_dict({"scheduler": {"batching": 1}})

    def test_unknown_scheduler_kind_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict({"scheduler": {"kind": "fifo"}})

    def test_wrong_schema_version_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict({"schema_version": 99})

    def test_value_range_checks(self):
        with pytest.raises(ConfigError):
            config_from_dict({"cluster": {"capacity_bytes": 0}})
        with pytest.raises(ConfigError):
            config_from_dict({"migration": {"budget_fraction": 0.0}})
        with pytest.raises(ConfigError):
            config_from_dict({"workload": {"mean_interarrival_slots": -1}})
        with pytest.raises(ConfigError):
            config_from_dict({"sim": {"epoch_slots": 0}})


class TestLoadConfig:
    def test_valid_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"sim": {"seed": 5}}))
        assert load_config(str(path)).sim.seed == 5

    def test_missing_file_is_config_error(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "absent.json"))

    def test_invalid_json_is_config_error(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(str(path))
