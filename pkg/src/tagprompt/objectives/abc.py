import dataclasses
import logging
from abc import ABC, abstractmethod

import torch

from tagprompt.errors import ObjectiveError

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class LossConfig:
    margin: float = 1.0
    alpha: float = 0.0
    top_k: int = 1
    include_positive_in_denominator: bool = True
    positive_matching: bool = True

    def __post_init__(self) -> None:
        if self.margin < 0 or self.alpha < 0 or self.top_k < 1:
            raise ObjectiveError(
                f"margin={self.margin}, alpha={self.alpha} must be >= 0 and top_k >= 1"
            )


@dataclasses.dataclass
class JointEmbeddingBatch:
    """Everything the objectives see for one batch, rows matched by index.

    `retrieved[i]` holds the bank positives of node i (possibly none);
    `neg_text_embs` is absent when negative semantics contrast is off.
    """

    node_embs: torch.Tensor
    text_embs: torch.Tensor
    tau: torch.Tensor
    retrieved: list[torch.Tensor] = dataclasses.field(default_factory=list)
    neg_text_embs: torch.Tensor | None = None


def check_pair(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.dim() != 2 or a.shape != b.shape:
        raise ObjectiveError(
            f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} do not match"
        )


class Objective(ABC):
    """One loss term of the pretraining objective."""

    name: str
    negative: bool = False
    """Negative terms need `neg_text_embs` and are scaled by alpha."""

    @abstractmethod
    def compute(self, batch: JointEmbeddingBatch, cfg: LossConfig) -> torch.Tensor:
        """Returns the scalar loss of the batch."""
