import dataclasses
import json
from collections.abc import Sequence

import numpy as np
import pytest
import torch

from tagprompt.abc import EpisodeClassifier
from tagprompt.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from tagprompt.config import TrainConfig
from tagprompt.episode import Episode, sample_episode
from tagprompt.errors import CheckpointError, EpisodeError, TagPromptError
from tagprompt.evaluation import (
    EvalReport,
    FewShotPromptClassifier,
    RunResult,
    accuracy,
    embed_graph,
    evaluate_fewshot,
    evaluate_zeroshot,
    macro_f1,
    run_episodes,
)
from tagprompt.graph import TextAttributedGraph
from tagprompt.pipeline import pretrain
from tagprompt.prompting import PredictorWrapper
from tagprompt.synthetic import SyntheticSpec, generate_synthetic


class PerfectClassifier(EpisodeClassifier):
    def __init__(self, graph: TextAttributedGraph) -> None:
        self.graph = graph

    def fit(self, episode: Episode) -> None:
        pass

    def predict(self, node_ids: Sequence[int]) -> list[int]:
        return [self.graph.labels[v] for v in node_ids]


class RandomClassifier(EpisodeClassifier):
    def __init__(self, seed: int = 0) -> None:
        self.rng = np.random.default_rng(seed)
        self.classes: tuple[int, ...] = ()

    def fit(self, episode: Episode) -> None:
        self.classes = episode.class_subset

    def predict(self, node_ids: Sequence[int]) -> list[int]:
        return [int(c) for c in self.rng.choice(self.classes, size=len(node_ids))]


class AntipodalClassifier(EpisodeClassifier):
    """Two classes embedded at u and -u, every node sitting on its class embedding."""

    def __init__(self, graph: TextAttributedGraph) -> None:
        u = torch.nn.functional.normalize(torch.tensor([1.0, 2.0, -1.0, 0.5]), dim=0)
        self.graph = graph
        self.points = {0: u, 1: -u}
        self.predictor = PredictorWrapper.create_from(PredictorWrapper.argmax)
        self.subset: tuple[int, ...] = ()

    def fit(self, episode: Episode) -> None:
        self.subset = episode.class_subset

    def predict(self, node_ids: Sequence[int]) -> list[int]:
        nodes = torch.stack([self.points[self.graph.labels[v]] for v in node_ids])
        classes = torch.stack([self.points[c] for c in self.subset])
        positions, _ = self.predictor.predict(nodes, classes, 0.1)
        return [self.subset[i] for i in positions]


def test_macro_f1_examples():
    assert macro_f1([0, 1, 2], [0, 1, 2], 3) == 1.0
    assert macro_f1([0, 0, 1, 1], [0, 0, 0, 0], 2) == pytest.approx(1 / 3)
    assert macro_f1([0, 1], [1, 0], 2) == 0.0
    # a class absent from truth and prediction scores zero
    assert macro_f1([0, 1], [0, 1], 3) == pytest.approx(2 / 3)


def test_metric_errors():
    with pytest.raises(TagPromptError):
        macro_f1([], [], 2)
    with pytest.raises(TagPromptError):
        accuracy([0, 1], [0])
    with pytest.raises(TagPromptError):
        macro_f1([0, 2], [0, 1], 2)
    assert accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75


def test_report_statistics():
    report = EvalReport(
        runs=[RunResult(0, 0.5, 0.4), RunResult(1, 0.7, 0.6)],
        config_hash="abc",
        seconds=1.0,
        mode="few-shot",
        way=5,
        shot=3,
    )
    assert report.acc_mean == pytest.approx(0.6)
    assert report.acc_std == pytest.approx(0.1)
    single = dataclasses.replace(report, runs=[RunResult(0, 0.5, 0.4)])
    assert single.acc_std == 0.0
    data = report.to_dict()
    assert data["mean"]["macro_f1"] == pytest.approx(0.5)
    assert [r["seed"] for r in data["runs"]] == [0, 1]
    with pytest.raises(TagPromptError):
        EvalReport([], "abc", 0.0, "few-shot", 5, 3)


def test_report_written_as_json(tmp_path):
    report = EvalReport([RunResult(0, 1.0, 1.0)], "abc", 0.5, "zero-shot", 2, 0)
    path = report.write(tmp_path / "out" / "eval.json")
    assert json.loads(path.read_text(encoding="utf-8")) == report.to_dict()


def test_perfect_classifier(small_graph):
    results = run_episodes(PerfectClassifier(small_graph), small_graph, 5, 3, 3, seed=0)
    assert [(r.accuracy, r.macro_f1) for r in results] == [(1.0, 1.0)] * 3
    assert [r.seed for r in results] == [0, 1, 2]


def test_random_classifier_near_chance():
    graph = generate_synthetic(
        SyntheticSpec(classes=5, nodes_per_class=160, vocab_size=50, tokens_per_text=4, seed=1)
    )
    results = run_episodes(RandomClassifier(), graph, 5, 1, 4, seed=0, query_per_class=150)
    mean = np.mean([r.accuracy for r in results])
    sigma = np.sqrt(0.2 * 0.8 / (4 * 5 * 150))
    assert abs(mean - 0.2) < 4 * sigma


def test_antipodal_classes_are_separated():
    graph = generate_synthetic(
        SyntheticSpec(classes=2, nodes_per_class=20, vocab_size=10, tokens_per_text=3)
    )
    results = run_episodes(AntipodalClassifier(graph), graph, 2, 1, 3, seed=0)
    assert all(r.accuracy == 1.0 for r in results)


def test_fewshot_report_has_one_entry_per_run(checkpoint, small_graph):
    report = evaluate_fewshot(
        checkpoint, small_graph, 5, 3, runs=5, classifier=PerfectClassifier(small_graph)
    )
    assert len(report.runs) == 5
    assert report.mode == "few-shot"
    assert report.config_hash == checkpoint.config.config_hash()


def test_fewshot_rejects_zero_shot(checkpoint, small_graph):
    with pytest.raises(EpisodeError, match="zero-shot"):
        evaluate_fewshot(checkpoint, small_graph, 5, 0)


def test_fewshot_never_runs_negative_encoder(checkpoint, small_graph):
    calls = []
    hook = checkpoint.model.negative_text_encoder.register_forward_hook(
        lambda *args: calls.append(1)
    )
    try:
        report = evaluate_fewshot(checkpoint, small_graph, 3, 2, runs=2)
    finally:
        hook.remove()
    assert calls == []
    assert all(0.0 <= r.accuracy <= 1.0 for r in report.runs)


def test_fewshot_is_reproducible(checkpoint, small_graph):
    first = evaluate_fewshot(checkpoint, small_graph, 3, 2, runs=2, seed=4)
    second = evaluate_fewshot(checkpoint, small_graph, 3, 2, runs=2, seed=4)
    assert first.runs == second.runs


def test_prompt_tuning_trace(checkpoint, small_graph):
    classifier = FewShotPromptClassifier(checkpoint, small_graph, embed_graph(checkpoint, small_graph))
    classifier.fit(sample_episode(small_graph, 3, 2, 0, 5))
    assert len(classifier.trace) == checkpoint.config.prompt_steps + 1


def test_zeroshot_probability_average_runs_negative_encoder_once_per_episode(
    checkpoint, small_graph, tmp_path
):
    calls = []
    hook = checkpoint.model.negative_text_encoder.register_forward_hook(
        lambda *args: calls.append(1)
    )
    path = tmp_path / "predictions.jsonl"
    try:
        report = evaluate_zeroshot(
            checkpoint, small_graph, 5, runs=2, use_probability_average=True,
            predictions_path=path,
        )  # fmt: skip
    finally:
        hook.remove()
    assert len(calls) == 2
    assert report.probability_average and report.shot == 0
    records = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    assert len(records) == 2 * 5 * checkpoint.config.query_per_class
    assert set(records[0]) == {"node_id", "true_label", "predicted", "p", "p_neg"}
    assert sum(records[0]["p_neg"]) == pytest.approx(1.0, abs=1e-5)


def test_zeroshot_argmax_skips_negative_encoder(checkpoint, small_graph):
    calls = []
    hook = checkpoint.model.negative_text_encoder.register_forward_hook(
        lambda *args: calls.append(1)
    )
    try:
        report = evaluate_zeroshot(checkpoint, small_graph, 5, runs=2)
    finally:
        hook.remove()
    assert calls == []
    assert not report.probability_average


def test_probability_average_needs_trained_negative_encoder(checkpoint, small_graph):
    untrained = dataclasses.replace(checkpoint, negative_encoder_trained=False)
    with pytest.raises(CheckpointError, match="negative encoder"):
        evaluate_zeroshot(untrained, small_graph, 5, use_probability_average=True)


def as_checkpoint(result) -> Checkpoint:
    return Checkpoint(
        result.model,
        result.tokenizer,
        result.bank,
        result.config,
        result.steps,
        result.negative_encoder_trained,
        {},
    )


@pytest.mark.slow
def test_ablation_direction():
    base = TrainConfig(
        lr=1e-3, epochs=3, hidden_dim=32, embed_dim=32, token_dim=32,
        heads=2, transformer_layers=1, max_seq_len=32, bank_capacity=256,
    )  # fmt: skip
    variants = {
        "cl": (base.replace(positive_matching=False), False),
        "psm": (base, False),
        "nsc": (base.replace(alpha=0.5), True),
    }
    scores: dict[str, list[float]] = {name: [] for name in variants}
    for seed in range(5):
        graph = generate_synthetic(SyntheticSpec(seed=seed))
        for name, (cfg, average) in variants.items():
            ckpt = as_checkpoint(pretrain(graph, cfg.replace(seed=seed)))
            report = evaluate_zeroshot(ckpt, graph, 5, runs=5, use_probability_average=average)
            scores[name].append(report.acc_mean)

    mean = {name: np.mean(v) for name, v in scores.items()}
    slack = np.sqrt(np.mean([np.var(v) for v in scores.values()]))
    assert mean["nsc"] >= mean["psm"] - slack
    assert mean["psm"] >= mean["cl"] - slack
    assert min(mean.values()) >= 0.2 + 0.15


@pytest.mark.slow
def test_prompt_tuning_beats_untuned_template(small_graph, small_cfg):
    wins = 0
    for seed in range(5):
        result = pretrain(small_graph, small_cfg.replace(epochs=3, prompt_steps=50, seed=seed))
        ckpt = as_checkpoint(result)
        untuned = dataclasses.replace(ckpt, config=ckpt.config.replace(prompt_length=0))
        tuned = evaluate_fewshot(ckpt, small_graph, 5, 5, runs=1, seed=seed)
        template = evaluate_fewshot(untuned, small_graph, 5, 5, runs=1, seed=seed)
        wins += tuned.acc_mean > template.acc_mean
    assert wins >= 4


def test_probability_average_refused_when_warmup_outlasts_training(
    small_graph, small_cfg, tmp_path
):
    cfg = small_cfg.replace(neg_encoder_init="copy_after_warmup", neg_warmup_steps=100)
    save_checkpoint(pretrain(small_graph, cfg), tmp_path)
    ckpt = load_checkpoint(tmp_path)
    assert ckpt.manifest["negative_steps"] == 0
    assert not ckpt.negative_encoder_trained
    with pytest.raises(CheckpointError, match="warm-up"):
        evaluate_zeroshot(ckpt, small_graph, 5, use_probability_average=True)
    assert not evaluate_zeroshot(ckpt, small_graph, 5, runs=1).probability_average
