"""Analytic gradients of the pretraining objective against central finite differences."""

import dataclasses
import logging
import typing
from collections.abc import Callable

import numpy as np
import torch

from tagprompt.bank import TextBank
from tagprompt.config import TrainConfig
from tagprompt.errors import GradientCheckError
from tagprompt.graph import normalize_adjacency
from tagprompt.model import TextGraphModel, build_model
from tagprompt.objectives import JointEmbeddingBatch, LossBreakdown, build_executor
from tagprompt.pipeline import build_tokenizer, loss_config
from tagprompt.prompting import negate
from tagprompt.synthetic import SyntheticSpec, generate_synthetic
from tagprompt.utils import seeded

logger = logging.getLogger(__name__)

MAIN_GROUPS = ("graph_encoder", "text_encoder", "temperature")
NEGATIVE_GROUPS = ("negative_text_encoder", "negative_prompt")

GradientHook = Callable[[str, torch.Tensor], torch.Tensor]


def micro_config(cfg: TrainConfig) -> TrainConfig:
    """The objective settings of `cfg` on an 8-node, d=8 instance in float64."""
    return cfg.replace(
        embed_dim=8,
        hidden_dim=8,
        token_dim=8,
        heads=2,
        gcn_layers=min(cfg.gcn_layers, 2),
        transformer_layers=min(cfg.transformer_layers, 1),
        max_seq_len=16,
        neg_prompt_length=min(cfg.neg_prompt_length, 4),
        min_freq=1,
        dtype="float64",
        template="[class]",
        neg_encoder_init="copy_at_start",
        neg_warmup_steps=0,
    )


@dataclasses.dataclass
class GradientCheckReport:
    errors: dict[str, float]
    """Max relative error per parameter group."""
    tolerance: float
    coordinates: int

    @property
    def failures(self) -> list[str]:
        return [name for name, err in self.errors.items() if not err < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict[str, typing.Any]:
        return {
            "errors": self.errors,
            "tolerance": self.tolerance,
            "coordinates": self.coordinates,
            "failures": self.failures,
            "passed": self.passed,
        }


class _MicroInstance:
    """A fixed batch of all 8 nodes with retrievals frozen from a prefilled bank."""

    def __init__(self, cfg: TrainConfig) -> None:
        graph = generate_synthetic(
            SyntheticSpec(
                classes=2, nodes_per_class=4, p_intra=0.5, p_inter=0.1,
                vocab_size=12, tokens_per_text=6, seed=cfg.seed,
            )
        )  # fmt: skip
        self.cfg = cfg
        tokenizer = build_tokenizer(graph, cfg)
        self.model: TextGraphModel = build_model(cfg, tokenizer.vocab_size)
        self.adjacency = normalize_adjacency(graph, torch.float64)
        self.features = tokenizer.bag_of_words(graph.texts).to(torch.float64)
        self.tokens = tokenizer.encode_batch(graph.texts)
        if cfg.negative_prompt_mode == "handcrafted":
            self.neg_tokens = tokenizer.encode_batch(
                [negate(t, cfg.negation_words) for t in graph.texts]
            )
        else:
            self.neg_tokens = tokenizer.encode_batch(
                graph.texts, reserve=self.model.negative_text_encoder.prompt_length
            )

        bank = TextBank(capacity=16)
        with seeded(cfg.seed + 1):
            filler = torch.randn(16, cfg.embed_dim, dtype=torch.float64)
        bank.push_batch(range(100, 116), filler / filler.norm(dim=1, keepdim=True))
        with torch.no_grad():
            queries = self.model.encode_texts(self.tokens)
        self.retrieved = bank.query_batch(queries, cfg.top_k, exclude_ids=range(graph.num_nodes))

        losses = loss_config(cfg)
        self.main = build_executor(dataclasses.replace(losses, alpha=0.0))
        self.full = build_executor(losses)

    def breakdown(self, negative: bool) -> LossBreakdown:
        m = self.model
        batch = JointEmbeddingBatch(
            m.encode_nodes(self.adjacency, self.features),
            m.encode_texts(self.tokens),
            m.tau,
            self.retrieved,
            m.encode_negative_texts(self.neg_tokens) if negative else None,
        )
        return (self.full if negative else self.main).execute_all(batch)

    def routed_loss(self, group: str) -> float:
        """The part of the objective whose gradient reaches `group`."""
        with torch.no_grad():
            if group in MAIN_GROUPS:
                return float(self.breakdown(negative=False).total)
            b = self.breakdown(negative=True)
            return self.cfg.alpha * (b.L_ML + b.L_SO)


def _coordinates(
    grads: list[torch.Tensor], count: int, rng: np.random.Generator
) -> list[tuple[int, int]]:
    """Up to `count` (tensor, flat index) pairs, nonzero analytic entries first."""
    nonzero, zero = [], []
    for t, g in enumerate(grads):
        flat = g.reshape(-1)
        for i in range(flat.numel()):
            (nonzero if abs(float(flat[i])) > 1e-10 else zero).append((t, i))
    picked = []
    for pool in (nonzero, zero):
        take = min(count - len(picked), len(pool))
        if take > 0:
            picked.extend(pool[j] for j in rng.choice(len(pool), size=take, replace=False))
    return picked


def gradient_check(
    cfg: TrainConfig,
    h: float = 1e-5,
    tolerance: float = 1e-4,
    coordinates: int = 24,
    perturb: GradientHook | None = None,
    raise_on_failure: bool = False,
) -> GradientCheckReport:
    """Compares analytic and central-difference gradients per parameter group.

    Node and text embeddings enter the negative terms detached, so the encoder
    and temperature groups are checked against L_CL + L_PSM and the negative
    groups against alpha * (L_ML + L_SO). With alpha = 0 the negative groups are
    left out. `perturb` may rewrite an analytic gradient before comparison.
    """
    cfg = micro_config(cfg)
    instance = _MicroInstance(cfg)
    model = instance.model
    groups = model.parameter_groups()
    names = list(MAIN_GROUPS) + (list(NEGATIVE_GROUPS) if cfg.negative_enabled else [])
    if model.negative_text_encoder.prompt_length == 0 and "negative_prompt" in names:
        names.remove("negative_prompt")

    model.zero_grad()
    instance.breakdown(negative=cfg.negative_enabled).total.backward()

    rng = np.random.default_rng(cfg.seed)
    errors: dict[str, float] = {}
    for name in names:
        params = groups[name]
        analytic = [
            p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
            for p in params
        ]
        if perturb is not None:
            analytic = [perturb(name, g) for g in analytic]

        a, n = [], []
        for t, i in _coordinates(analytic, coordinates, rng):
            flat = params[t].data.view(-1)
            saved = float(flat[i])
            flat[i] = saved + h
            up = instance.routed_loss(name)
            flat[i] = saved - h
            down = instance.routed_loss(name)
            flat[i] = saved
            a.append(float(analytic[t].reshape(-1)[i]))
            n.append((up - down) / (2 * h))

        a_vec, n_vec = np.array(a), np.array(n)
        scale = max(np.linalg.norm(a_vec), np.linalg.norm(n_vec))
        errors[name] = 0.0 if scale < 1e-10 else float(np.linalg.norm(a_vec - n_vec) / scale)
        logger.info(f"gradient check {name}: relative error {errors[name]:.2e}")

    report = GradientCheckReport(errors, tolerance, coordinates)
    if raise_on_failure and not report.passed:
        raise GradientCheckError(f"gradient check failed for {report.failures}")
    return report
