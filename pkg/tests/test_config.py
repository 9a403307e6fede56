import json

import pytest

from src.config import EvolutionConfig, env_setting
from src.errors import ValidationError


def test_defaults_are_valid():
    config = EvolutionConfig().validate()
    assert config.bad_case_fraction == 0.3
    assert config.min_improvement == 0.05
    assert config.top_k == 5
    assert config.retrieval_threshold == 0.5
    assert config.turn_cap == 20
    assert config.stake_per_week == 100.0
    assert config.utility_policy == "brier"


@pytest.mark.parametrize("changes", [
    {"bad_case_fraction": 0.0},
    {"bad_case_fraction": 1.5},
    {"min_improvement": -0.1},
    {"top_k": 0},
    {"turn_cap": 0},
    {"stake_per_week": 0.0},
    {"utility_policy": "log"},
    {"retrieval_threshold": float("nan")},
])
def test_validate_rejects_bad_values(changes):
    with pytest.raises(ValidationError) as info:
        EvolutionConfig(**changes).validate()
    assert info.value.field == next(iter(changes))


def test_from_file_reads_known_keys(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"top_k": 3, "min_improvement": 0.1, "parallel_rollouts": True}), encoding="utf-8")
    config = EvolutionConfig.from_file(path)
    assert config.top_k == 3
    assert config.min_improvement == 0.1
    assert config.parallel_rollouts is True


def test_from_file_rejects_unknown_key(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"top_kk": 3}), encoding="utf-8")
    with pytest.raises(ValidationError) as info:
        EvolutionConfig.from_file(path)
    assert info.value.field == "top_kk"


def test_from_dict_rejects_wrong_types():
    with pytest.raises(ValidationError):
        EvolutionConfig.from_dict({"top_k": 2.5})
    with pytest.raises(ValidationError):
        EvolutionConfig.from_dict({"parallel_rollouts": "yes"})


def test_from_file_rejects_invalid_json(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{\n  \"top_k\": ,\n}", encoding="utf-8")
    with pytest.raises(ValidationError) as info:
        EvolutionConfig.from_file(path)
    assert info.value.line_number == 2


def test_overrides_skip_none():
    config = EvolutionConfig()
    assert config.with_overrides(top_k=None) is config
    changed = config.with_overrides(top_k=2, retrieval_threshold=0.3)
    assert (changed.top_k, changed.retrieval_threshold) == (2, 0.3)
    with pytest.raises(ValidationError):
        config.with_overrides(stake_per_week=-1.0)


def test_env_setting(monkeypatch):
    monkeypatch.setenv("LIVE_EVO_TEST_VALUE", "abc")
    assert env_setting("LIVE_EVO_TEST_VALUE") == "abc"
    monkeypatch.setenv("LIVE_EVO_TEST_VALUE", "")
    assert env_setting("LIVE_EVO_TEST_VALUE", "fallback") == "fallback"
    monkeypatch.delenv("LIVE_EVO_TEST_VALUE")
    assert env_setting("LIVE_EVO_TEST_VALUE") is None
