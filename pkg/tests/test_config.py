import json

import pytest

from tagprompt.config import TrainConfig
from tagprompt.errors import ConfigError


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.lr, cfg.top_k, cfg.bank_capacity, cfg.tau_init) == (2e-5, 1, 32768, 0.07)
    assert cfg.template == "a paper of [class]"
    assert not cfg.negative_enabled
    assert cfg.replace(alpha=0.1).negative_enabled


@pytest.mark.parametrize(
    "changes, field",
    [
        ({"lr": 0.0}, "lr"),
        ({"top_k": 0}, "top_k"),
        ({"margin": -1.0}, "margin"),
        ({"alpha": -0.5}, "alpha"),
        ({"pooling": "max"}, "pooling"),
        ({"token_dim": 10, "heads": 4}, "heads"),
        ({"template": "a paper"}, "template"),
        ({"neg_prompt_length": 128}, "neg_prompt_length"),
    ],
)
def test_validation_names_field(changes, field):
    with pytest.raises(ConfigError) as err:
        TrainConfig(**changes)
    assert err.value.field == field


def test_from_dict_rejects_unknown_and_mistyped():
    with pytest.raises(ConfigError, match="unknown config key") as err:
        TrainConfig.from_dict({"learning_rate": 0.1})
    assert err.value.field == "learning_rate"
    with pytest.raises(ConfigError, match="top_k expects int"):
        TrainConfig.from_dict({"top_k": "3"})
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"epochs": True})
    assert TrainConfig.from_dict({"lr": 1}).lr == 1.0


def test_from_json_with_overrides(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"alpha": 0.5, "epochs": 3}), encoding="utf-8")
    cfg = TrainConfig.from_json(path, epochs=1, seed=None)
    assert (cfg.alpha, cfg.epochs, cfg.seed) == (0.5, 1, 0)

    path.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError, match="JSON object"):
        TrainConfig.from_json(path)
    with pytest.raises(ConfigError, match="missing"):
        TrainConfig.from_json(tmp_path / "absent.json")


def test_hash_and_diff():
    a = TrainConfig()
    assert a.config_hash() == TrainConfig().config_hash()
    b = a.replace(margin=2.0, seed=3)
    assert a.config_hash() != b.config_hash()
    assert a.diff(b) == ["seed", "margin"]
    assert TrainConfig.from_dict(a.to_dict()) == a


def test_json_schema():
    schema = TrainConfig.json_schema()
    assert schema["additionalProperties"] is False
    assert schema["properties"]["alpha"] == {"type": "number", "default": 0.0}
    assert schema["properties"]["include_positive_in_denominator"]["type"] == "boolean"
    assert set(schema["properties"]) == set(TrainConfig().to_dict())
