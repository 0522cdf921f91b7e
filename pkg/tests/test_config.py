from __future__ import annotations

import pytest

from imac.config import ConfigError, RunConfig, dump_config, load_config, parse_config


def test_defaults_validate():
    cfg = RunConfig().validate()
    assert cfg.curriculum.mode == "plr" and cfg.horizon.fixed_h == 15 and cfg.world_model.context == 4
    assert cfg.curriculum.staleness == 0.1 and cfg.curriculum.buffer_size == 2500


def test_parse_sections_and_types():
    cfg = parse_config("""
[world_model]
hidden = 64, 32
residual = true
lr = 2e-3
[curriculum]
mode = random   # inline comment
[data]
total_transitions = 9_000
""")
    assert cfg.world_model.hidden == (64, 32) and cfg.world_model.residual is True
    assert cfg.world_model.lr == 2e-3 and cfg.curriculum.mode == "random" and cfg.data.total_transitions == 9000


@pytest.mark.parametrize("text,match", [
    ("[nope]\nx = 1\n", "unknown section"),
    ("[agent]\ngama = 0.9\n", "unknown key agent.gama"),
    ("[agent]\ngamma = fast\n", "agent.gamma"),
    ("[curriculum]\nmode = greedy\n", "mode"),
    ("[agent]\ngamma = 1.5\n", "gamma"),
    ("not an ini line\n", "no section headers"),
])
def test_invalid_configs(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_dump_parse_roundtrip(tiny_config):
    assert parse_config(dump_config(tiny_config)) == tiny_config


def test_replace_leaves_original():
    base = RunConfig()
    other = base.replace(curriculum={"mode": "fixed"})
    assert base.curriculum.mode == "plr" and other.curriculum.mode == "fixed"


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="missing.ini"):
        load_config(tmp_path / "missing.ini")
