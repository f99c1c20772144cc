"""Discrete and continuous class prompts, class probabilities and the
probability-average decision rule."""

import dataclasses
import logging
from abc import ABC, abstractmethod
from collections.abc import Sequence

import torch
import torch.nn.functional as F

from tagprompt.abc import TokenizerInterface
from tagprompt.compatible import Self, override
from tagprompt.diff import ParameterDifferenceDetector
from tagprompt.encoders import NegativeTextEncoder, TextEncoder
from tagprompt.episode import Episode
from tagprompt.errors import PromptError
from tagprompt.utils import frozen, seeded, snapshot_parameters

logger = logging.getLogger(__name__)

PLACEHOLDER = "[class]"


def instantiate(template: str, class_name: str) -> str:
    """
    >>> instantiate("a paper of [class]", "databases")
    'a paper of databases'
    """
    if template.count(PLACEHOLDER) != 1:
        raise PromptError(f"template {template!r} must contain exactly one {PLACEHOLDER}")
    return template.replace(PLACEHOLDER, class_name)


def negate(text: str, negation_words: str = "not") -> str:
    """Hand-written negation of a text.

    >>> negate("a paper of vision")
    'not a paper of vision'
    """
    return f"{negation_words} {text}".strip()


def class_descriptions(class_names: Sequence[str], template: str) -> list[str]:
    return [instantiate(template, name) for name in class_names]


@dataclasses.dataclass
class PromptState:
    """The discrete template, the few-shot continuous prompt e_1..e_M and a handle
    on the negative prompt owned by the negative text encoder."""

    template: str = "a paper of [class]"
    continuous_prompt: torch.Tensor | None = None
    negative_prompt: torch.Tensor | None = None

    def __post_init__(self) -> None:
        if self.template.count(PLACEHOLDER) != 1:
            raise PromptError(
                f"template {self.template!r} must contain exactly one {PLACEHOLDER}"
            )
        if self.continuous_prompt is not None:
            if self.continuous_prompt.dim() != 2:
                raise PromptError("continuous prompt must be an M x d_tok matrix")
            if not bool(torch.isfinite(self.continuous_prompt).all()):
                raise PromptError("continuous prompt has non-finite entries")

    @classmethod
    def initialize(
        cls,
        template: str,
        length: int,
        token_dim: int,
        init_std: float = 0.02,
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
        negative_prompt: torch.Tensor | None = None,
    ) -> Self:
        """M prompt vectors drawn i.i.d. from normal(0, init_std) under `seed`."""
        if length < 0:
            raise PromptError(f"prompt length {length} must be >= 0")
        with seeded(seed):
            prompt = torch.randn(length, token_dim, dtype=dtype) * init_std
        return cls(template, prompt, negative_prompt)

    @property
    def length(self) -> int:
        return 0 if self.continuous_prompt is None else self.continuous_prompt.shape[0]


def build_zero_shot_class_embeddings(
    class_names: Sequence[str],
    template: str,
    text_encoder: TextEncoder,
    tokenizer: TokenizerInterface,
) -> torch.Tensor:
    """g_c = psi(D_c) for the template instantiated with every class name."""
    if len(class_names) < 2:
        raise PromptError(f"need at least 2 classes, got {len(class_names)}")
    tokens = tokenizer.pad_batch(
        [tokenizer.encode(d) for d in class_descriptions(class_names, template)]
    )
    return text_encoder(tokens)


def _description_tokens(
    descriptions: Sequence[str], tokenizer: TokenizerInterface, reserve: int
) -> torch.Tensor:
    sequences = []
    for d in descriptions:
        ids = tokenizer.encode(d)
        full = len(d.split()) + 1
        if full + reserve > tokenizer.max_seq_len:
            raise PromptError(
                f"{reserve} prompt vectors plus description {d!r} ({full} tokens) "
                f"exceed max_seq_len={tokenizer.max_seq_len}"
            )
        sequences.append(ids)
    return tokenizer.pad_batch(sequences)


def build_few_shot_class_embeddings(
    class_names: Sequence[str],
    prompt_state: PromptState,
    text_encoder: TextEncoder,
    tokenizer: TokenizerInterface,
) -> torch.Tensor:
    """g_c = psi([e_1..e_M, D_c]), differentiable in the prompt vectors.

    With M = 0 this is exactly the zero-shot embedding.
    """
    if len(class_names) < 2:
        raise PromptError(f"need at least 2 classes, got {len(class_names)}")
    tokens = _description_tokens(
        class_descriptions(class_names, prompt_state.template),
        tokenizer,
        prompt_state.length,
    )
    prefix = prompt_state.continuous_prompt if prompt_state.length else None
    return text_encoder(tokens, prefix)


def build_negative_class_embeddings(
    class_names: Sequence[str],
    template: str,
    negative_encoder: NegativeTextEncoder,
    tokenizer: TokenizerInterface,
    handcrafted: bool = False,
    negation_words: str = "not",
) -> torch.Tensor:
    """Negative class embeddings: the learned negative prompt in front of the plain
    description, or the description negated by hand when `handcrafted`."""
    if len(class_names) < 2:
        raise PromptError(f"need at least 2 classes, got {len(class_names)}")
    descriptions = class_descriptions(class_names, template)
    if handcrafted:
        descriptions = [negate(d, negation_words) for d in descriptions]
    tokens = _description_tokens(descriptions, tokenizer, negative_encoder.prompt_length)
    return negative_encoder(tokens)


def class_probabilities(
    node_emb: torch.Tensor, class_embs: torch.Tensor, tau: torch.Tensor | float
) -> torch.Tensor:
    """Softmax over cosine similarities divided by tau.

    Accepts one d-vector or an N x d batch; the result has C entries per node.
    """
    if class_embs.dim() != 2 or class_embs.shape[0] < 2:
        raise PromptError(f"need a C x d class matrix with C >= 2, got {tuple(class_embs.shape)}")
    if node_emb.shape[-1] != class_embs.shape[1]:
        raise PromptError(
            f"node dimension {node_emb.shape[-1]} != class dimension {class_embs.shape[1]}"
        )
    return torch.softmax(node_emb @ class_embs.t() / tau, dim=-1)


def probability_average_scores(p: torch.Tensor, p_neg: torch.Tensor) -> torch.Tensor:
    """(p + 1 - p_neg) / 2, each entry in [0, 1]."""
    if p.shape != p_neg.shape:
        raise PromptError(
            f"positive {tuple(p.shape)} and negative {tuple(p_neg.shape)} probabilities differ"
        )
    return (p + 1.0 - p_neg) / 2.0


def probability_average_predict(
    node_emb: torch.Tensor,
    pos_class_embs: torch.Tensor,
    neg_class_embs: torch.Tensor,
    tau: torch.Tensor | float,
) -> tuple[int, torch.Tensor]:
    """Predicted class and score vector for one node; ties go to the lowest class id."""
    scores = probability_average_scores(
        class_probabilities(node_emb, pos_class_embs, tau),
        class_probabilities(node_emb, neg_class_embs, tau),
    )
    return int(torch.argmax(scores)), scores


class Predictor(ABC):
    """Decision rule from class scores to class positions."""

    needs_negatives: bool = False

    @abstractmethod
    def scores(
        self,
        node_embs: torch.Tensor,
        class_embs: torch.Tensor,
        tau: torch.Tensor | float,
        neg_class_embs: torch.Tensor | None = None,
    ) -> torch.Tensor: ...


class ArgmaxPredictor(Predictor):
    """Predicts the class of highest similarity probability."""

    @override
    def scores(self, node_embs, class_embs, tau, neg_class_embs=None):
        return class_probabilities(node_embs, class_embs, tau)


class ProbabilityAveragePredictor(Predictor):
    """Balances the positive probabilities against the negative ones."""

    needs_negatives = True

    @override
    def scores(self, node_embs, class_embs, tau, neg_class_embs=None):
        if neg_class_embs is None:
            raise PromptError("probability-average needs negative class embeddings")
        return probability_average_scores(
            class_probabilities(node_embs, class_embs, tau),
            class_probabilities(node_embs, neg_class_embs, tau),
        )


class PredictorWrapper:
    """Holds one decision rule and turns its scores into predictions."""

    # rule names
    argmax = "argmax"
    probability_average = "prob-average"

    def __init__(self, predictor: Predictor) -> None:
        self._predictor = predictor

    @property
    def needs_negatives(self) -> bool:
        return self._predictor.needs_negatives

    def predict(
        self,
        node_embs: torch.Tensor,
        class_embs: torch.Tensor,
        tau: torch.Tensor | float,
        neg_class_embs: torch.Tensor | None = None,
    ) -> tuple[list[int], torch.Tensor]:
        scores = self._predictor.scores(node_embs, class_embs, tau, neg_class_embs)
        return torch.argmax(scores, dim=-1).tolist(), scores

    @classmethod
    def create_from(cls, key: str = "argmax") -> Self:
        """Creates the instance from the key"""

        predictor_classes = {
            cls.argmax: ArgmaxPredictor,
            cls.probability_average: ProbabilityAveragePredictor,
        }
        try:
            return cls(predictor_classes[key]())
        except KeyError as e:
            raise PromptError(f"unknown decision rule {key!r}") from e


@dataclasses.dataclass
class PromptTuneResult:
    prompt: torch.Tensor
    trace: list[float]
    """Support cross-entropy before every step, plus the final value."""


def prompt_tune(
    episode: Episode,
    prompt_state: PromptState,
    text_encoder: TextEncoder,
    tokenizer: TokenizerInterface,
    node_embs: torch.Tensor,
    class_names: Sequence[str],
    tau: torch.Tensor | float,
    steps: int = 50,
    lr: float = 1e-2,
) -> PromptTuneResult:
    """Fits e_1..e_M to the episode's support set by full-batch cross-entropy.

    `node_embs` are the frozen graph encoder's embeddings of all nodes and
    `class_names` are the names of the episode's class subset, in its order.
    The text encoder is frozen for the duration; `prompt_state` is updated in place.
    """
    if not episode.support:
        raise PromptError("prompt tuning needs a non-empty support set")
    if len(class_names) != episode.way_count:
        raise PromptError(
            f"{len(class_names)} class names for a {episode.way_count}-way episode"
        )
    if prompt_state.continuous_prompt is None:
        raise PromptError("prompt state has no continuous prompt to tune")

    support = node_embs[episode.support_nodes()].detach()
    labels = torch.tensor([episode.local_label(c) for _, c in episode.support])
    tau = torch.as_tensor(tau).detach()

    prompt = prompt_state.continuous_prompt.detach().clone().requires_grad_(True)
    state = dataclasses.replace(prompt_state, continuous_prompt=prompt)
    before = snapshot_parameters(text_encoder)

    def support_loss() -> torch.Tensor:
        class_embs = build_few_shot_class_embeddings(class_names, state, text_encoder, tokenizer)
        return F.cross_entropy(support @ class_embs.t() / tau, labels)

    trace: list[float] = []
    with frozen(text_encoder):
        if steps > 0 and prompt_state.length > 0:
            optimizer = torch.optim.Adam([prompt], lr=lr)
            for _ in range(steps):
                optimizer.zero_grad()
                loss = support_loss()
                loss.backward()
                optimizer.step()
                trace.append(float(loss.detach()))
        with torch.no_grad():
            trace.append(float(support_loss()))

    changed = ParameterDifferenceDetector(before, snapshot_parameters(text_encoder))
    if changed.changed:
        raise PromptError(f"prompt tuning changed encoder parameters: {changed.changed}")
    prompt_state.continuous_prompt = prompt.detach()
    logger.debug(f"prompt tuning: support loss {trace[0]:.4f} -> {trace[-1]:.4f}")
    return PromptTuneResult(prompt_state.continuous_prompt, trace)


if __name__ == "__main__":
    import doctest

    doctest.testmod()
