"""Pretraining: graph and text encoders co-trained by contrast and bank retrieval,
the negative text encoder trained independently by negative semantics contrast."""

import dataclasses
import json
import logging
import math
import os
import typing
from collections.abc import Iterator, Sequence
from pathlib import Path

import numpy as np
import torch

from tagprompt.bank import TextBank
from tagprompt.config import TrainConfig
from tagprompt.diff import ParameterDifferenceDetector
from tagprompt.errors import TrainingError
from tagprompt.graph import TextAttributedGraph, normalize_adjacency
from tagprompt.model import TextGraphModel, build_model
from tagprompt.objectives import (
    JointEmbeddingBatch,
    LossBreakdown,
    LossConfig,
    ObjectiveExecutor,
    build_executor,
)
from tagprompt.prompting import negate
from tagprompt.tokenizer import WordTokenizer
from tagprompt.utils import resolve_dtype, snapshot_parameters

logger = logging.getLogger(__name__)


def build_tokenizer(graph: TextAttributedGraph, cfg: TrainConfig) -> WordTokenizer:
    """Vocabulary over the node texts; class names, template and negation words
    are always kept so class descriptions never hit UNK."""
    extra = [*graph.class_names, cfg.template.replace("[class]", ""), cfg.negation_words]
    return WordTokenizer.build(
        graph.texts, min_freq=cfg.min_freq, max_seq_len=cfg.max_seq_len, extra_words=extra
    )


def loss_config(cfg: TrainConfig) -> LossConfig:
    return LossConfig(
        margin=cfg.margin,
        alpha=cfg.alpha,
        top_k=cfg.top_k,
        include_positive_in_denominator=cfg.include_positive_in_denominator,
        positive_matching=cfg.positive_matching,
    )


def iter_batches(n_nodes: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """One epoch of node batches drawn uniformly without replacement.

    A trailing batch of a single node is folded into the one before it, since
    every loss needs at least two rows.
    """
    order = rng.permutation(n_nodes)
    cuts = list(range(batch_size, n_nodes, batch_size))
    if cuts and n_nodes - cuts[-1] < 2:
        cuts.pop()
    yield from np.split(order, cuts)


def estimate_step_cost(cfg: TrainConfig, n_nodes: int) -> dict[str, int]:
    """Operation counts of one pretraining step, term by term.

    The graph encoder runs over all `n_nodes`; the text terms are per batch.
    """
    batch = min(cfg.batch_size, n_nodes)
    s = cfg.max_seq_len
    cost = {
        "gcn": cfg.gcn_layers * n_nodes * cfg.hidden_dim**2,
        "text_projection": cfg.transformer_layers * batch * s * cfg.token_dim**2,
        "attention": cfg.transformer_layers * batch * s**2 * cfg.token_dim,
        "retrieval": batch * cfg.bank_capacity * cfg.embed_dim,
    }
    cost["total"] = sum(cost.values())
    return cost


@dataclasses.dataclass
class PretrainResult:
    model: TextGraphModel
    tokenizer: WordTokenizer
    bank: TextBank
    config: TrainConfig
    trace: list[dict[str, float]]
    steps: int
    negative_steps: int = 0
    """Steps on which the negative text encoder was updated."""

    @property
    def negative_encoder_trained(self) -> bool:
        return self.negative_steps > 0


class PretrainPipeline:
    """Owns the model, both optimizers and the text bank for one pretraining run."""

    _model: TextGraphModel
    _tokenizer: WordTokenizer
    _executor: ObjectiveExecutor

    def __init__(
        self,
        graph: TextAttributedGraph,
        cfg: TrainConfig,
        tokenizer: WordTokenizer | None = None,
        trace_path: str | os.PathLike | None = None,
    ) -> None:
        if graph.num_nodes < 2:
            raise TrainingError("pretraining needs at least 2 nodes", {"nodes": graph.num_nodes})
        self.graph = graph
        self.cfg = cfg
        dtype = resolve_dtype(cfg.dtype)
        self._tokenizer = tokenizer or build_tokenizer(graph, cfg)
        self._model = build_model(cfg, self._tokenizer.vocab_size)
        self._bank = TextBank(cfg.bank_capacity)

        self._adjacency = normalize_adjacency(graph, dtype)
        self._features = self._tokenizer.bag_of_words(graph.texts).to(dtype)
        self._tokens = self._tokenizer.encode_batch(graph.texts)
        self._neg_tokens = self._negative_tokens(graph.texts)

        losses = loss_config(cfg)
        self._executor = build_executor(losses)
        self._warmup_executor = build_executor(dataclasses.replace(losses, alpha=0.0))

        groups = self._model.parameter_groups()
        self._optimizer = torch.optim.Adam(
            groups["graph_encoder"] + groups["text_encoder"] + groups["temperature"],
            lr=cfg.lr,
        )
        self._neg_optimizer = self._new_negative_optimizer()

        self._rng = np.random.default_rng(cfg.seed)
        self._step = 0
        self._negative_steps = 0
        self._trace: list[dict[str, float]] = []
        self._trace_path = Path(trace_path) if trace_path is not None else None
        if self._trace_path is not None:
            self._trace_path.parent.mkdir(parents=True, exist_ok=True)
            self._trace_path.write_text("", encoding="utf-8")
        logger.debug(f"{type(self).__name__} initialized.")

    def _negative_tokens(self, texts: Sequence[str]) -> torch.Tensor:
        if self.cfg.negative_prompt_mode == "handcrafted":
            return self._tokenizer.encode_batch(
                [negate(t, self.cfg.negation_words) for t in texts]
            )
        return self._tokenizer.encode_batch(
            texts, reserve=self._model.negative_text_encoder.prompt_length
        )

    def _new_negative_optimizer(self) -> torch.optim.Optimizer:
        neg = self._model.negative_text_encoder
        return torch.optim.Adam(neg.parameters(), lr=self.cfg.lr)

    @property
    def negative_active(self) -> bool:
        """Whether negative semantics contrast runs at the current step."""
        if not self.cfg.negative_enabled:
            return False
        if self.cfg.neg_encoder_init == "copy_after_warmup":
            return self._step >= self.cfg.neg_warmup_steps
        return True

    def _maybe_copy_after_warmup(self) -> None:
        cfg = self.cfg
        if (
            cfg.negative_enabled
            and cfg.neg_encoder_init == "copy_after_warmup"
            and self._step == cfg.neg_warmup_steps
        ):
            self._model.negative_text_encoder.copy_text_weights(self._model.text_encoder)
            self._neg_optimizer = self._new_negative_optimizer()
            logger.info(f"step {self._step}: negative text encoder copied from the text encoder")

    def _snapshot(self, ids: np.ndarray, breakdown: LossBreakdown) -> dict[str, typing.Any]:
        finite = {
            name: all(bool(torch.isfinite(p).all()) for p in params)
            for name, params in self._model.parameter_groups().items()
        }
        return {
            "step": self._step,
            "losses": breakdown.to_dict(),
            "tau": float(self._model.tau.detach()),
            "batch": ids[:16].tolist(),
            "finite_parameters": finite,
            "bank_size": len(self._bank),
        }

    def train_step(self, ids: np.ndarray) -> LossBreakdown:
        self._maybe_copy_after_warmup()
        model = self._model
        negative = self.negative_active
        index = torch.as_tensor(ids, dtype=torch.long)

        node_embs = model.encode_nodes(self._adjacency, self._features)[index]
        text_embs = model.encode_texts(self._tokens[index])
        retrieved = self._bank.query_batch(text_embs, self.cfg.top_k, exclude_ids=ids.tolist())
        neg_text_embs = (
            model.encode_negative_texts(self._neg_tokens[index]) if negative else None
        )
        batch = JointEmbeddingBatch(node_embs, text_embs, model.tau, retrieved, neg_text_embs)

        executor = self._executor if negative else self._warmup_executor
        breakdown = executor.execute_all(batch)
        if not bool(torch.isfinite(breakdown.total)):
            snapshot = self._snapshot(ids, breakdown)
            logger.error(f"non-finite loss at step {self._step}: {snapshot['losses']}")
            raise TrainingError(f"non-finite loss at step {self._step}", snapshot)

        self._optimizer.zero_grad()
        self._neg_optimizer.zero_grad()
        breakdown.total.backward()
        self._optimizer.step()
        if negative:
            self._neg_optimizer.step()
            self._negative_steps += 1
        model.clamp_tau()

        self._bank.push_batch(ids.tolist(), text_embs.detach())
        self._step += 1
        self._record(breakdown)
        return breakdown

    def _record(self, breakdown: LossBreakdown) -> None:
        record = {"step": self._step, **breakdown.to_dict(), "tau": float(self._model.tau)}
        self._trace.append(record)
        if self._trace_path is not None:
            with self._trace_path.open("a", encoding="utf-8") as f:
                f.write(json.dumps(record) + "\n")
        logger.debug(f"step {self._step}: {record}")

    def run_epoch(self) -> float:
        totals = [
            breakdown.total.item()
            for breakdown in map(
                self.train_step,
                iter_batches(self.graph.num_nodes, self.cfg.batch_size, self._rng),
            )
        ]
        return float(np.mean(totals))

    def run(self) -> PretrainResult:
        before = snapshot_parameters(self._model)
        for epoch in range(self.cfg.epochs):
            mean = self.run_epoch()
            logger.info(
                f"epoch {epoch + 1}/{self.cfg.epochs}: mean loss {mean:.4f}, "
                f"bank {len(self._bank)}/{self._bank.capacity}"
            )
        changes = ParameterDifferenceDetector(before, snapshot_parameters(self._model))
        frozen_neg = not changes.changed_under("negative_text_encoder.")
        logger.info(
            f"pretraining done after {self._step} steps ({self._negative_steps} negative); "
            f"{len(changes.changed)} tensors changed, negative encoder "
            f"{'unchanged' if frozen_neg else 'updated'}"
        )
        return PretrainResult(
            self._model,
            self._tokenizer,
            self._bank,
            self.cfg,
            list(self._trace),
            self._step,
            self._negative_steps,
        )

    def get_state(self) -> dict[str, typing.Any]:
        return {
            "step": self._step,
            "negative_steps": self._negative_steps,
            "bank_size": len(self._bank),
            "tau": float(self._model.tau),
            "negative_active": self.negative_active,
            "objectives": [o.name for o in self._executor.get_commands()],
        }

    @property
    def model(self) -> TextGraphModel:
        return self._model

    @property
    def tokenizer(self) -> WordTokenizer:
        return self._tokenizer

    @property
    def bank(self) -> TextBank:
        return self._bank

    @property
    def trace(self) -> list[dict[str, float]]:
        return self._trace

    @property
    def step(self) -> int:
        return self._step


def pretrain(
    graph: TextAttributedGraph,
    cfg: TrainConfig,
    trace_path: str | os.PathLike | None = None,
) -> PretrainResult:
    """Runs `cfg.epochs` epochs of pretraining; deterministic per `cfg.seed`."""
    return PretrainPipeline(graph, cfg, trace_path=trace_path).run()


def mean_trace(trace: Sequence[dict[str, float]], key: str = "total") -> float:
    values = [r[key] for r in trace]
    return float(np.mean(values)) if values else math.nan
