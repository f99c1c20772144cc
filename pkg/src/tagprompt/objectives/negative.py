"""Negative semantics contrast: the margin loss and the semantics-opposite loss.

Both train only the negative text encoder and its prompt; callers pass node and
text embeddings detached.
"""

import logging

import torch
import torch.nn.functional as F

from tagprompt.compatible import override
from tagprompt.errors import ObjectiveError
from tagprompt.objectives.abc import JointEmbeddingBatch, LossConfig, Objective, check_pair
from tagprompt.objectives.contrastive import off_diagonal

logger = logging.getLogger(__name__)


def margin_loss(
    node_embs: torch.Tensor, neg_text_embs: torch.Tensor, margin: float = 1.0
) -> torch.Tensor:
    """Mean over ordered pairs (i, j != i) of
    max(0, margin + sim(n_i, neg_i) - sim(n_i, neg_j))."""
    check_pair(node_embs, neg_text_embs, "margin_loss")
    b = node_embs.shape[0]
    if b < 2:
        raise ObjectiveError("margin_loss needs a batch of >= 2")
    sims = node_embs @ neg_text_embs.t()
    terms = F.relu(margin + sims.diagonal()[:, None] - sims)
    return terms[off_diagonal(b, sims.device)].mean()


def semantics_opposite_loss(
    text_embs: torch.Tensor, neg_text_embs: torch.Tensor
) -> torch.Tensor:
    """Negated mean L2 distance between each text and its negative text.

    In [-2, 0] for unit-norm rows.
    """
    check_pair(text_embs, neg_text_embs, "semantics_opposite_loss")
    return -torch.linalg.vector_norm(text_embs - neg_text_embs, dim=1).mean()


def _negatives(batch: JointEmbeddingBatch) -> torch.Tensor:
    if batch.neg_text_embs is None:
        raise ObjectiveError("negative text embeddings missing from the batch")
    return batch.neg_text_embs


class MarginObjective(Objective):
    name = "L_ML"
    negative = True

    @override
    def compute(self, batch: JointEmbeddingBatch, cfg: LossConfig) -> torch.Tensor:
        return margin_loss(batch.node_embs.detach(), _negatives(batch), cfg.margin)


class SemanticsOppositeObjective(Objective):
    name = "L_SO"
    negative = True

    @override
    def compute(self, batch: JointEmbeddingBatch, cfg: LossConfig) -> torch.Tensor:
        return semantics_opposite_loss(batch.text_embs.detach(), _negatives(batch))
