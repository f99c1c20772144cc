"""Episodic few-shot and zero-shot evaluation of a pretrained checkpoint."""

import dataclasses
import json
import logging
import os
import time
import typing
from collections.abc import Sequence
from pathlib import Path

import numpy as np
import torch

from tagprompt.abc import EpisodeClassifier
from tagprompt.checkpoint import Checkpoint
from tagprompt.episode import Episode, sample_episode
from tagprompt.errors import CheckpointError, EpisodeError, TagPromptError
from tagprompt.graph import TextAttributedGraph, normalize_adjacency
from tagprompt.prompting import (
    PredictorWrapper,
    PromptState,
    build_few_shot_class_embeddings,
    build_negative_class_embeddings,
    build_zero_shot_class_embeddings,
    class_probabilities,
    prompt_tune,
)
from tagprompt.utils import resolve_dtype

logger = logging.getLogger(__name__)


def accuracy(true_labels: Sequence[int], predicted_labels: Sequence[int]) -> float:
    if len(true_labels) != len(predicted_labels):
        raise TagPromptError(
            f"{len(true_labels)} labels but {len(predicted_labels)} predictions"
        )
    if not true_labels:
        raise TagPromptError("accuracy of an empty prediction set")
    return float(np.mean(np.asarray(true_labels) == np.asarray(predicted_labels)))


def macro_f1(true_labels: Sequence[int], predicted_labels: Sequence[int], num_classes: int) -> float:
    """Unweighted mean of per-class F1 over classes 0..num_classes-1.

    A class absent from both truth and prediction contributes 0.

    >>> macro_f1([0, 0, 1, 1], [0, 0, 0, 0], 2)
    0.3333333333333333
    """
    if len(true_labels) != len(predicted_labels):
        raise TagPromptError(
            f"{len(true_labels)} labels but {len(predicted_labels)} predictions"
        )
    if not true_labels:
        raise TagPromptError("macro F1 of an empty prediction set")
    y = np.asarray(true_labels)
    p = np.asarray(predicted_labels)
    if y.min() < 0 or p.min() < 0 or y.max() >= num_classes or p.max() >= num_classes:
        raise TagPromptError(f"labels must lie in 0..{num_classes - 1}")
    scores = []
    for c in range(num_classes):
        tp = int(np.sum((y == c) & (p == c)))
        denom = int(np.sum(y == c)) + int(np.sum(p == c))
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


@dataclasses.dataclass
class RunResult:
    seed: int
    accuracy: float
    macro_f1: float


@dataclasses.dataclass
class EvalReport:
    """Per-run accuracy and macro-F1 with their mean and population std."""

    runs: list[RunResult]
    config_hash: str
    seconds: float
    mode: str
    way: int
    shot: int
    probability_average: bool = False

    def __post_init__(self) -> None:
        if not self.runs:
            raise TagPromptError("an evaluation report needs at least one run")

    def _values(self, key: str) -> np.ndarray:
        return np.array([getattr(r, key) for r in self.runs], dtype=np.float64)

    @property
    def acc_mean(self) -> float:
        return float(self._values("accuracy").mean())

    @property
    def acc_std(self) -> float:
        return float(self._values("accuracy").std())

    @property
    def f1_mean(self) -> float:
        return float(self._values("macro_f1").mean())

    @property
    def f1_std(self) -> float:
        return float(self._values("macro_f1").std())

    def to_dict(self) -> dict[str, typing.Any]:
        return {
            "mode": self.mode,
            "way": self.way,
            "shot": self.shot,
            "probability_average": self.probability_average,
            "runs": [dataclasses.asdict(r) for r in self.runs],
            "mean": {"accuracy": self.acc_mean, "macro_f1": self.f1_mean},
            "std": {"accuracy": self.acc_std, "macro_f1": self.f1_std},
            "config_hash": self.config_hash,
            "seconds": self.seconds,
        }

    def write(self, path: str | os.PathLike) -> Path:
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        return out


@torch.no_grad()
def embed_graph(checkpoint: Checkpoint, graph: TextAttributedGraph) -> torch.Tensor:
    """Frozen graph encoder embeddings of every node."""
    dtype = resolve_dtype(checkpoint.config.dtype)
    features = checkpoint.tokenizer.bag_of_words(graph.texts).to(dtype)
    return checkpoint.model.encode_nodes(normalize_adjacency(graph, dtype), features)


def episode_class_names(graph: TextAttributedGraph, episode: Episode) -> list[str]:
    return [graph.class_names[c] for c in episode.class_subset]


class ZeroShotClassifier(EpisodeClassifier):
    """Classifies by similarity to template-built class embeddings.

    With the probability-average rule the negative class embeddings are built
    once per episode; otherwise the negative encoder is never run.
    """

    def __init__(
        self,
        checkpoint: Checkpoint,
        graph: TextAttributedGraph,
        node_embs: torch.Tensor,
        predictor: PredictorWrapper,
    ) -> None:
        self.checkpoint = checkpoint
        self.graph = graph
        self.node_embs = node_embs
        self.predictor = predictor
        self._episode: Episode | None = None
        self._class_embs: torch.Tensor | None = None
        self._neg_class_embs: torch.Tensor | None = None

    @torch.no_grad()
    def fit(self, episode: Episode) -> None:
        cfg = self.checkpoint.config
        model = self.checkpoint.model
        names = episode_class_names(self.graph, episode)
        self._episode = episode
        self._class_embs = build_zero_shot_class_embeddings(
            names, cfg.template, model.text_encoder, self.checkpoint.tokenizer
        )
        self._neg_class_embs = None
        if self.predictor.needs_negatives:
            self._neg_class_embs = build_negative_class_embeddings(
                names,
                cfg.template,
                model.negative_text_encoder,
                self.checkpoint.tokenizer,
                handcrafted=cfg.negative_prompt_mode == "handcrafted",
                negation_words=cfg.negation_words,
            )

    @torch.no_grad()
    def predict(self, node_ids: Sequence[int]) -> list[int]:
        if self._episode is None or self._class_embs is None:
            raise EpisodeError("classifier used before fit")
        positions, _ = self.predictor.predict(
            self.node_embs[list(node_ids)],
            self._class_embs,
            self.checkpoint.model.tau,
            self._neg_class_embs,
        )
        return [self._episode.class_subset[i] for i in positions]

    @torch.no_grad()
    def probabilities(
        self, node_ids: Sequence[int]
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        tau = self.checkpoint.model.tau
        embs = self.node_embs[list(node_ids)]
        p = class_probabilities(embs, self._class_embs, tau)
        p_neg = (
            None
            if self._neg_class_embs is None
            else class_probabilities(embs, self._neg_class_embs, tau)
        )
        return p, p_neg


class FewShotPromptClassifier(ZeroShotClassifier):
    """Tunes a continuous prompt on the support set, then classifies by argmax."""

    def __init__(
        self,
        checkpoint: Checkpoint,
        graph: TextAttributedGraph,
        node_embs: torch.Tensor,
        prompt_seed: int = 0,
    ) -> None:
        super().__init__(
            checkpoint, graph, node_embs, PredictorWrapper.create_from(PredictorWrapper.argmax)
        )
        self.prompt_seed = prompt_seed
        self.trace: list[float] = []

    def fit(self, episode: Episode) -> None:
        cfg = self.checkpoint.config
        model = self.checkpoint.model
        names = episode_class_names(self.graph, episode)
        state = PromptState.initialize(
            cfg.template,
            cfg.prompt_length,
            model.text_encoder.token_dim,
            init_std=cfg.prompt_init_std,
            seed=self.prompt_seed,
            dtype=resolve_dtype(cfg.dtype),
        )
        if state.length:
            result = prompt_tune(
                episode,
                state,
                model.text_encoder,
                self.checkpoint.tokenizer,
                self.node_embs,
                names,
                model.tau.detach(),
                steps=cfg.prompt_steps,
                lr=cfg.prompt_lr,
            )
            self.trace = result.trace
        with torch.no_grad():
            self._class_embs = build_few_shot_class_embeddings(
                names, state, model.text_encoder, self.checkpoint.tokenizer
            )
        self._neg_class_embs = None
        self._episode = episode


def run_episodes(
    classifier: EpisodeClassifier,
    graph: TextAttributedGraph,
    way: int,
    shot: int,
    runs: int,
    seed: int,
    query_per_class: int = 15,
    predictions_path: str | os.PathLike | None = None,
) -> list[RunResult]:
    """Samples `runs` episodes from seeds seed, seed+1, ... and scores the classifier."""
    if runs < 1:
        raise EpisodeError(f"runs={runs} must be >= 1")
    dump = None
    if predictions_path is not None:
        Path(predictions_path).parent.mkdir(parents=True, exist_ok=True)
        dump = open(predictions_path, "w", encoding="utf-8")
    results = []
    try:
        for r in range(runs):
            episode = sample_episode(graph, way, shot, seed + r, query_per_class)
            classifier.fit(episode)
            nodes = episode.query_nodes()
            predicted = classifier.predict(nodes)
            truth = [episode.local_label(c) for _, c in episode.query]
            local = [episode.local_label(c) for c in predicted]
            results.append(
                RunResult(seed + r, accuracy(truth, local), macro_f1(truth, local, way))
            )
            logger.info(
                f"run {r + 1}/{runs} (seed {seed + r}): accuracy {results[-1].accuracy:.4f}, "
                f"macro-F1 {results[-1].macro_f1:.4f}"
            )
            if dump is not None:
                _dump_predictions(dump, classifier, episode, nodes, predicted)
    finally:
        if dump is not None:
            dump.close()
    return results


def _dump_predictions(
    dump: typing.TextIO,
    classifier: EpisodeClassifier,
    episode: Episode,
    nodes: list[int],
    predicted: list[int],
) -> None:
    probabilities = getattr(classifier, "probabilities", None)
    p, p_neg = probabilities(nodes) if probabilities else (None, None)
    for i, ((node, label), pred) in enumerate(zip(episode.query, predicted)):
        record: dict[str, typing.Any] = {"node_id": node, "true_label": label, "predicted": pred}
        if p is not None:
            record["p"] = p[i].tolist()
        if p_neg is not None:
            record["p_neg"] = p_neg[i].tolist()
        dump.write(json.dumps(record) + "\n")


def evaluate_fewshot(
    checkpoint: Checkpoint,
    graph: TextAttributedGraph,
    way: int,
    shot: int,
    runs: int = 5,
    seed: int = 0,
    classifier: EpisodeClassifier | None = None,
    predictions_path: str | os.PathLike | None = None,
) -> EvalReport:
    """Prompt tuning on each episode's support set, argmax on its query set."""
    if shot < 1:
        raise EpisodeError(f"few-shot evaluation needs shot >= 1, got {shot}; use zero-shot")
    started = time.perf_counter()
    if classifier is None:
        classifier = FewShotPromptClassifier(
            checkpoint, graph, embed_graph(checkpoint, graph), prompt_seed=seed
        )
    results = run_episodes(
        classifier, graph, way, shot, runs, seed,
        checkpoint.config.query_per_class, predictions_path,
    )  # fmt: skip
    return EvalReport(
        runs=results,
        config_hash=checkpoint.config.config_hash(),
        seconds=time.perf_counter() - started,
        mode="few-shot",
        way=way,
        shot=shot,
    )


def evaluate_zeroshot(
    checkpoint: Checkpoint,
    graph: TextAttributedGraph,
    way: int,
    runs: int = 5,
    seed: int = 0,
    use_probability_average: bool = False,
    classifier: EpisodeClassifier | None = None,
    predictions_path: str | os.PathLike | None = None,
) -> EvalReport:
    """Template class embeddings only; argmax or probability-average decisions."""
    if use_probability_average and not checkpoint.negative_encoder_trained:
        raise CheckpointError(
            "probability-average needs a checkpoint whose negative encoder was trained "
            "(alpha > 0 and at least one step past the warm-up)"
        )
    started = time.perf_counter()
    if classifier is None:
        key = (
            PredictorWrapper.probability_average
            if use_probability_average
            else PredictorWrapper.argmax
        )
        classifier = ZeroShotClassifier(
            checkpoint, graph, embed_graph(checkpoint, graph), PredictorWrapper.create_from(key)
        )
    results = run_episodes(
        classifier, graph, way, 0, runs, seed,
        checkpoint.config.query_per_class, predictions_path,
    )  # fmt: skip
    return EvalReport(
        runs=results,
        config_hash=checkpoint.config.config_hash(),
        seconds=time.perf_counter() - started,
        mode="zero-shot",
        way=way,
        shot=0,
        probability_average=use_probability_average,
    )


if __name__ == "__main__":
    import doctest

    doctest.testmod()
