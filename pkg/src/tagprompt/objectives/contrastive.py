import logging

import torch
import torch.nn.functional as F

from tagprompt.compatible import override
from tagprompt.errors import ObjectiveError
from tagprompt.objectives.abc import JointEmbeddingBatch, LossConfig, Objective, check_pair

logger = logging.getLogger(__name__)


def off_diagonal(b: int, device: torch.device | None = None) -> torch.Tensor:
    return ~torch.eye(b, dtype=torch.bool, device=device)


def contrastive_loss(
    node_embs: torch.Tensor,
    text_embs: torch.Tensor,
    tau: torch.Tensor | float,
    include_positive_in_denominator: bool = True,
) -> torch.Tensor:
    """Node-to-text InfoNCE over a batch of matched unit-norm rows.

    With the positive excluded from the denominator (j != i) the value may be
    negative; a batch of one row then has an empty denominator.
    """
    check_pair(node_embs, text_embs, "contrastive_loss")
    b = node_embs.shape[0]
    logits = node_embs @ text_embs.t() / tau
    if include_positive_in_denominator:
        return F.cross_entropy(logits, torch.arange(b, device=logits.device))
    if b < 2:
        raise ObjectiveError("contrastive_loss without the positive needs a batch of >= 2")
    others = logits.masked_fill(~off_diagonal(b, logits.device), float("-inf"))
    return (torch.logsumexp(others, dim=1) - logits.diagonal()).mean()


class ContrastiveObjective(Objective):
    name = "L_CL"

    @override
    def compute(self, batch: JointEmbeddingBatch, cfg: LossConfig) -> torch.Tensor:
        return contrastive_loss(
            batch.node_embs,
            batch.text_embs,
            batch.tau,
            cfg.include_positive_in_denominator,
        )
