import dataclasses
import json
import logging
import os
import typing
from pathlib import Path

from tagprompt.compatible import Self
from tagprompt.errors import ConfigError
from tagprompt.utils import sha256_json

logger = logging.getLogger(__name__)

POOLING = ("eos", "mean")
NEG_ENCODER_INIT = ("copy_at_start", "copy_after_warmup")
NEGATIVE_PROMPT_MODES = ("learnable", "handcrafted")
DTYPES = ("float32", "float64")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """Every hyperparameter of pretraining, prompting and evaluation."""

    # optimization
    lr: float = 2e-5
    epochs: int = 2
    batch_size: int = 64
    seed: int = 0
    dtype: str = "float32"

    # objectives
    top_k: int = 1
    bank_capacity: int = 32768
    margin: float = 1.0
    alpha: float = 0.0
    tau_init: float = 0.07
    include_positive_in_denominator: bool = True
    positive_matching: bool = True

    # negative text encoder
    neg_prompt_length: int = 16
    neg_encoder_init: str = "copy_at_start"
    neg_warmup_steps: int = 0
    negative_prompt_mode: str = "learnable"
    negation_words: str = "not"

    # encoder shapes
    gcn_layers: int = 2
    hidden_dim: int = 64
    embed_dim: int = 64
    token_dim: int = 64
    transformer_layers: int = 2
    heads: int = 4
    max_seq_len: int = 128
    min_freq: int = 2
    pooling: str = "eos"

    # prompting
    template: str = "a paper of [class]"
    prompt_length: int = 4
    prompt_lr: float = 1e-2
    prompt_steps: int = 50
    prompt_init_std: float = 0.02

    # evaluation
    query_per_class: int = 15
    runs: int = 5

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        positive = (
            "lr", "epochs", "batch_size", "top_k", "bank_capacity", "tau_init",
            "hidden_dim", "embed_dim", "token_dim", "heads", "max_seq_len",
            "min_freq", "prompt_lr", "query_per_class", "runs",
        )  # fmt: skip
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name}={getattr(self, name)} must be > 0", name)
        non_negative = (
            "margin", "alpha", "neg_prompt_length", "neg_warmup_steps",
            "gcn_layers", "transformer_layers", "prompt_length", "prompt_steps",
            "prompt_init_std",
        )  # fmt: skip
        for name in non_negative:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}={getattr(self, name)} must be >= 0", name)

        choices = {
            "pooling": POOLING,
            "neg_encoder_init": NEG_ENCODER_INIT,
            "negative_prompt_mode": NEGATIVE_PROMPT_MODES,
            "dtype": DTYPES,
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name}={getattr(self, name)!r} not in {allowed}", name)

        if self.token_dim % self.heads:
            raise ConfigError(
                f"token_dim={self.token_dim} not divisible by heads={self.heads}", "heads"
            )
        if self.template.count("[class]") != 1:
            raise ConfigError("template must contain exactly one [class]", "template")
        if self.neg_prompt_length >= self.max_seq_len:
            raise ConfigError(
                "neg_prompt_length must leave room for text in max_seq_len",
                "neg_prompt_length",
            )

    @classmethod
    def field_types(cls) -> dict[str, type]:
        hints = typing.get_type_hints(cls)
        return {f.name: hints[f.name] for f in dataclasses.fields(cls)}

    @classmethod
    def json_schema(cls) -> dict[str, typing.Any]:
        names = {bool: "boolean", int: "integer", float: "number", str: "string"}
        defaults = cls()
        return {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                name: {"type": names[tp], "default": getattr(defaults, name)}
                for name, tp in cls.field_types().items()
            },
        }

    @classmethod
    def from_dict(cls, values: typing.Mapping[str, typing.Any]) -> Self:
        """Builds a config, rejecting unknown keys and mistyped values."""
        types = cls.field_types()
        clean = {}
        for key, value in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}", key)
            expected = types[key]
            if expected is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if expected is int and isinstance(value, bool):
                raise ConfigError(f"{key} expects int, got bool", key)
            if not isinstance(value, expected):
                raise ConfigError(
                    f"{key} expects {expected.__name__}, got {type(value).__name__}", key
                )
            clean[key] = value
        return cls(**clean)

    @classmethod
    def from_json(cls, path: str | os.PathLike, **overrides: typing.Any) -> Self:
        try:
            values = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"missing config file: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e.msg})") from e
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(values)

    def to_dict(self) -> dict[str, typing.Any]:
        return dataclasses.asdict(self)

    def replace(self, **changes: typing.Any) -> Self:
        return dataclasses.replace(self, **changes)

    def config_hash(self) -> str:
        return sha256_json(self.to_dict())

    def diff(self, other: "TrainConfig") -> list[str]:
        """Names of the fields whose values differ."""
        return [
            f.name
            for f in dataclasses.fields(self)
            if getattr(self, f.name) != getattr(other, f.name)
        ]

    @property
    def negative_enabled(self) -> bool:
        return self.alpha > 0
