import json

import pytest

from visioncomm.config import ConfigError, ExperimentConfig


def test_defaults_validate_and_match_reference_settings():
    cfg = ExperimentConfig()
    assert cfg.gamma == pytest.approx(1 / 3) and cfg.gamma_tilde == 0.3
    assert cfg.scene_config().frame_interval == 0.05 and cfg.alpha == 5
    assert cfg.scene_config().coherence_time == pytest.approx(cfg.alpha * 0.05)
    assert cfg.m_values == (1, 3, 5) and cfg.n_bs == 4 and cfg.users == (2, 3, 4)
    assert cfg.uman_train.beta == 2.0 and cfg.uman_train.eta == 4.0


def test_json_round_trip(tmp_path):
    cfg = ExperimentConfig(seed=11, m_values=(1, 2))
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert ExperimentConfig.load(str(path)) == cfg


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"scene": {"bogus": 1}},
    {"scene": 3},
    {"gamma": 1.5},
    {"users": [5]},
    {"m_values": [0]},
    {"c_test": 0},
    {"scene": {"n_stations": 0}},
    {"scene": {"min_vehicles": 9}},
    {"grids": {"heatmap_factor": 4}},
    {"uman_train": {"epochs": 0}},
])
def test_invalid_documents_raise_config_error(doc):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(doc)


def test_unreadable_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(str(bad))
    arr = tmp_path / "arr.json"
    arr.write_text(json.dumps([1, 2]))
    with pytest.raises(ConfigError):
        ExperimentConfig.load(str(arr))


def test_station_count_limits_users(tiny_cfg):
    assert tiny_cfg.n_bs == 3 and len(tiny_cfg.scene_config().cameras) == 3
    assert tiny_cfg.vran_config().n_bs == 3
