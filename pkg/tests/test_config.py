from __future__ import annotations

import json

import pytest

from evfusion.backends import BackendKind
from evfusion.config import apply_env, config_from_dict, load_config, with_overrides
from evfusion.errors import ConfigurationError
from evfusion.evidence import ContentType, ReliabilityTier


def raw(**extra) -> dict:
    profiles = {
        "source_a": {"kind": "fixture", "endpoint_id": "a", "fixture_path": "chat"},
        "source_b": {"kind": "fixture", "endpoint_id": "b", "fixture_path": "chat"},
        "reasoner": {"kind": "remote_http", "endpoint_id": "r", "url": "http://r.test"},
        "tools": {"kind": "fixture", "endpoint_id": "t", "fixture_path": "."},
    }
    return {"profiles": profiles, **extra}


def write(tmp_path, data) -> str:
    path = tmp_path / "cfg" / "config.json"
    path.parent.mkdir(exist_ok=True)
    path.write_text(json.dumps(data))
    return str(path)


def test_load_resolves_fixture_paths_against_config_dir(tmp_path):
    cfg = load_config(write(tmp_path, raw()), env={})
    assert cfg.profiles["source_a"].fixture_path == str(tmp_path / "cfg" / "chat")
    assert cfg.sources == ("a", "b")
    assert not cfg.offline


def test_env_then_flags_override_in_order(tmp_path):
    env = {"FW_SEED": "9", "FW_WORKERS": "3", "FW_PROFILE_REASONER_URL": "http://other.test", "HOME": "/x"}
    cfg = load_config(write(tmp_path, raw(seed=1)), env=env, overrides={"workers": 5, "seed": None})
    assert (cfg.seed, cfg.workers) == (9, 5)
    assert cfg.profiles["reasoner"].url == "http://other.test"


def test_env_can_switch_every_profile_offline(tmp_path):
    env = {"FW_PROFILE_REASONER_KIND": "fixture", "FW_PROFILE_REASONER_FIXTURE_PATH": "chat"}
    cfg = load_config(write(tmp_path, raw()), env=env)
    assert cfg.profiles["reasoner"].kind is BackendKind.FIXTURE
    assert cfg.offline


def test_env_with_unknown_role_is_rejected():
    with pytest.raises(ConfigurationError):
        apply_env(raw(), {"FW_PROFILE_JUDGE_URL": "http://x"})


def test_content_override_and_scoring():
    cfg = config_from_dict(raw(content_override="MUSIC", scoring={"tiers": {"heuristic": {"cap": 0.55}}}))
    assert cfg.content_override is ContentType.MUSIC
    assert cfg.scoring.tiers[ReliabilityTier.HEURISTIC].cap == 0.55
    assert cfg.to_dict()["content_override"] == "music"


@pytest.mark.parametrize(
    "data",
    [
        {"profiles": {}},
        {"profiles": []},
        raw(workers=0),
        raw(content_override="opera"),
        raw(loop={"step1_rounds": 4}),
        raw(seed="many"),
        raw(scoring={"tiers": {"oracle": {}}}),
        {**raw(), "profiles": {**raw()["profiles"], "judge": {"kind": "fixture", "fixture_path": "x"}}},
        {
            **raw(),
            "profiles": {**raw()["profiles"], "source_b": {"kind": "fixture", "endpoint_id": "a", "fixture_path": "x"}},
        },
    ],
)
def test_invalid_configs(data):
    with pytest.raises(ConfigurationError):
        config_from_dict(data)


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.json", env={})
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigurationError):
        load_config(bad, env={})


def test_with_overrides_ignores_none():
    cfg = config_from_dict(raw())
    assert with_overrides(cfg, seed=None, workers=4).workers == 4
    assert with_overrides(cfg, seed=None).seed == cfg.seed


def test_catalog_loads_default():
    assert len(config_from_dict(raw()).catalog()) == 25
