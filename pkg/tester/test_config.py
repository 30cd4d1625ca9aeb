import json

import pytest
from pydantic import ValidationError

from solitonforge.config import COMMANDS, ExperimentConfig, Tolerances, WeightSpec
from solitonforge.exceptions import DomainError


def test_defaults():
    config = ExperimentConfig(command="cao")
    assert config.n == 2 and config.seed == 42 and config.jobs == 1
    assert config.eps_list == [1e-2, 3e-3, 1e-3, 3e-4, 1e-4]
    assert config.tolerances() == Tolerances()
    assert json.loads(json.dumps(config.echo()))["command"] == "cao"


def test_every_command_is_accepted():
    for command in COMMANDS:
        assert ExperimentConfig(command=command).command == command
    with pytest.raises(ValidationError):
        ExperimentConfig(command="plot")


def test_extra_keys_rejected():
    with pytest.raises(ValidationError):
        ExperimentConfig(command="cao", radius=3.0)
    with pytest.raises(ValidationError):
        Tolerances(newton_steps=3)


@pytest.mark.parametrize(
    "fields",
    [
        {"t_min": 5.0, "t_max": 1.0},
        {"t_min": 0.0, "t_max": 1.0, "h": 0.25},
        {"h": -1.0},
        {"eps_list": [1e-2, -1e-3]},
        {"jobs": 0},
        {"seed": -1},
    ],
)
def test_invalid_fields(fields):
    with pytest.raises(ValidationError):
        ExperimentConfig(command="cao", **fields)


def test_weight_exponent_checked_for_gluing_commands():
    assert ExperimentConfig(command="cao", gamma=3.0).gamma == 3.0
    with pytest.raises(ValidationError):
        ExperimentConfig(command="glue", n=2, gamma=2.0)
    assert ExperimentConfig(command="glue", n=3, gamma=3.0).weight_spec().gamma == 3.0


def test_weight_spec():
    spec = WeightSpec(gamma=1.0, delta=0.5)
    assert spec.check(2) is spec
    with pytest.raises(DomainError):
        spec.check(1)
    with pytest.raises(ValidationError):
        WeightSpec(gamma=0.0, delta=0.5)
    with pytest.raises(ValidationError):
        WeightSpec(gamma=1.0, delta=1.0)


def test_from_sources(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"command": "glue", "eps": 1e-3, "seed": 7}), encoding="utf-8")
    config = ExperimentConfig.from_sources(str(path), {"seed": 9, "n": None})
    assert config.command == "glue" and config.eps == 1e-3
    assert config.seed == 9 and config.n == 2


def test_from_sources_rejects_non_object(tmp_path):
    path = tmp_path / "run.json"
    path.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(DomainError):
        ExperimentConfig.from_sources(str(path), {"command": "cao"})
    with pytest.raises(OSError):
        ExperimentConfig.from_sources(str(tmp_path / "missing.json"), {"command": "cao"})
