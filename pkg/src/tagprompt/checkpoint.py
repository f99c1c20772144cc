"""Checkpoint directory: parameter blob, JSON manifest, text bank dump and loss trace.

    params.pt         torch.save of the model state dict
    manifest.json     config, config hash, vocabulary, shapes, step, digests
    bank.npy          text bank matrix, oldest entry first
    bank_ids.json     node ids of the bank rows
    loss_trace.jsonl  one record per pretraining step
"""

import dataclasses
import hashlib
import json
import logging
import os
import typing
from pathlib import Path

import torch

from tagprompt.bank import BANK_IDS_FILE, TextBank
from tagprompt.config import TrainConfig
from tagprompt.errors import CheckpointError, ConfigError
from tagprompt.model import TextGraphModel, build_model
from tagprompt.pipeline import PretrainResult
from tagprompt.tokenizer import WordTokenizer
from tagprompt.utils import canonical_json, parameter_digest

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
PARAMS_FILE = "params.pt"
MANIFEST_FILE = "manifest.json"
TRACE_FILE = "loss_trace.jsonl"


@dataclasses.dataclass
class Checkpoint:
    model: TextGraphModel
    tokenizer: WordTokenizer
    bank: TextBank
    config: TrainConfig
    step: int
    negative_encoder_trained: bool
    manifest: dict[str, typing.Any]

    @property
    def params_digest(self) -> str:
        return self.manifest["params_digest"]


def _file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_checkpoint(result: PretrainResult, path: str | os.PathLike) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    state = result.model.state_dict()
    params_path = root / PARAMS_FILE
    torch.save(state, params_path)

    manifest = {
        "format_version": FORMAT_VERSION,
        "config": result.config.to_dict(),
        "config_hash": result.config.config_hash(),
        "vocab": result.tokenizer.vocab,
        "max_seq_len": result.tokenizer.max_seq_len,
        "shapes": {name: list(t.shape) for name, t in state.items()},
        "step": result.steps,
        "negative_steps": result.negative_steps,
        "negative_encoder_trained": result.negative_encoder_trained,
        "params_size": params_path.stat().st_size,
        "params_sha256": _file_sha256(params_path),
        "params_digest": parameter_digest(result.model),
    }
    (root / MANIFEST_FILE).write_text(canonical_json(manifest) + "\n", encoding="utf-8")
    result.bank.dump(root)
    with (root / TRACE_FILE).open("w", encoding="utf-8") as f:
        for record in result.trace:
            f.write(json.dumps(record) + "\n")
    logger.info(f"checkpoint written to {root} (step {result.steps})")
    return root


def read_manifest(path: str | os.PathLike) -> dict[str, typing.Any]:
    manifest_path = Path(path) / MANIFEST_FILE
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise CheckpointError(f"no checkpoint manifest at {manifest_path}") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{manifest_path}: corrupted manifest ({e.msg})") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{manifest_path}: unsupported format version {manifest.get('format_version')!r}"
        )
    return manifest


def _manifest_config(manifest: dict[str, typing.Any]) -> TrainConfig:
    try:
        cfg = TrainConfig.from_dict(manifest["config"])
    except (KeyError, ConfigError) as e:
        raise CheckpointError(f"checkpoint config is invalid: {e}") from e
    if cfg.config_hash() != manifest.get("config_hash"):
        raise CheckpointError("checkpoint config hash does not match its config")
    return cfg


def load_checkpoint(
    path: str | os.PathLike, expected_config: TrainConfig | None = None
) -> Checkpoint:
    """Restores a checkpoint bit-exactly.

    Raises CheckpointError on a truncated or altered parameter file, and when
    `expected_config` differs from the stored one, naming the divergent fields.
    """
    root = Path(path)
    manifest = read_manifest(root)
    cfg = _manifest_config(manifest)
    if expected_config is not None:
        fields = cfg.diff(expected_config)
        if fields:
            raise CheckpointError(
                f"checkpoint config differs in field(s): {', '.join(fields)}"
            )

    params_path = root / PARAMS_FILE
    if not params_path.is_file():
        raise CheckpointError(f"missing parameter file {params_path}")
    size = params_path.stat().st_size
    if size != manifest["params_size"]:
        raise CheckpointError(
            f"{params_path}: {size} bytes, manifest says {manifest['params_size']} "
            "(truncated or corrupted)"
        )
    if _file_sha256(params_path) != manifest["params_sha256"]:
        raise CheckpointError(f"{params_path}: checksum mismatch (corrupted)")
    try:
        state = torch.load(params_path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"{params_path}: unreadable parameter file ({e})") from e

    tokenizer = WordTokenizer(manifest["vocab"], manifest["max_seq_len"])
    model = build_model(cfg, tokenizer.vocab_size)
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as e:
        raise CheckpointError(f"parameters do not fit the configured model: {e}") from e
    if parameter_digest(model) != manifest["params_digest"]:
        raise CheckpointError("restored parameters differ from the saved digest")

    bank = TextBank.load(root) if (root / BANK_IDS_FILE).is_file() else TextBank(cfg.bank_capacity)
    logger.info(f"checkpoint loaded from {root} (step {manifest['step']})")
    return Checkpoint(
        model=model,
        tokenizer=tokenizer,
        bank=bank,
        config=cfg,
        step=int(manifest["step"]),
        negative_encoder_trained=int(manifest.get("negative_steps", 0)) > 0,
        manifest=manifest,
    )


def read_trace(path: str | os.PathLike) -> list[dict[str, float]]:
    trace_path = Path(path) / TRACE_FILE
    if not trace_path.is_file():
        return []
    with trace_path.open(encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
