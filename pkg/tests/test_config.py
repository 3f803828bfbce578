import pytest
import yaml

from gsrc.config import RunConfig
from gsrc.errors import ValidationError


def test_defaults_validate():
    cfg = RunConfig.from_dict({})
    assert cfg.driver["system"] == "lorenz63" and cfg.reservoir["n_nodes"] == 2000
    assert cfg.search is None
    assert cfg.reservoir_params(3).input_dim == 3


@pytest.mark.parametrize("raw", [
    {"bogus": 1},
    {"driver": {"sytem": "lorenz63"}},
    {"reservoir": {"spectral_radius": 0.9, "colour": "red"}},
    {"search": {"axes": {"spectral_radius": [0.5]}, "gates": "gs_only"}},
])
def test_unknown_keys_rejected(raw):
    with pytest.raises(ValidationError, match="unknown"):
        RunConfig.from_dict(raw)


@pytest.mark.parametrize("raw", [
    {"driver": {"duration": 0}},
    {"driver": {"dt": -0.01}},
    {"driver": {"system": "rossler"}},
    {"driver": {"standardize": "yes"}},
    {"reservoir": {"pnz": 1.5}},
    {"reservoir": {"n_nodes": 10.5}},
    {"training": {"features": "cubic"}},
    {"training": {"beta": -1}},
    {"gs": {"seeds": [1, 1]}},
    {"evaluation": {"n_starts": 0}},
    {"search": {"axes": {}}},
    {"search": {"axes": {"spectral_radius": []}}},
    {"search": {"axes": {"spectral_radius": [-1.0]}}},
    {"search": {"axes": {"spectral_radius": [1.0]}, "gate": "sometimes"}},
    {"output": {"directory": ""}},
    {"driver": "lorenz63"},
])
def test_invalid_values_rejected(raw):
    with pytest.raises(ValidationError):
        RunConfig.from_dict(raw)


def test_dump_round_trip(tmp_path):
    cfg = RunConfig.from_dict({"reservoir": {"spectral_radius": 1.1},
                               "search": {"axes": {"spectral_radius": [0.5, 1.0]}}})
    (tmp_path / "c.yaml").write_text(cfg.dump())
    back = RunConfig.load(tmp_path / "c.yaml")
    assert back.to_dict() == cfg.to_dict()
    assert back.search_plan(3).size == 2


def test_overrides():
    cfg = RunConfig.from_dict({"search": {"axes": {"pnz": [0.01]}}}).with_overrides(seed=42, out="x")
    assert cfg.reservoir["seed"] == 42 and cfg.search["base_seed"] == 42 and cfg.output["directory"] == "x"


def test_bad_yaml(tmp_path):
    (tmp_path / "c.yaml").write_text("driver: [unclosed\n")
    with pytest.raises(ValidationError, match="YAML"):
        RunConfig.load(tmp_path / "c.yaml")
    with pytest.raises(ValidationError, match="cannot read"):
        RunConfig.load(tmp_path / "missing.yaml")


def test_integers_normalized():
    cfg = RunConfig.from_dict({"driver": {"duration": 50}, "reservoir": {"n_nodes": 300}})
    assert isinstance(cfg.driver["duration"], float) and isinstance(cfg.reservoir["n_nodes"], int)
    assert yaml.safe_load(cfg.dump())["driver"]["duration"] == 50.0
