import logging
from collections.abc import Sequence

import torch

from tagprompt.compatible import override
from tagprompt.errors import ObjectiveError
from tagprompt.objectives.abc import JointEmbeddingBatch, LossConfig, Objective, check_pair
from tagprompt.objectives.contrastive import off_diagonal

logger = logging.getLogger(__name__)


def psm_loss(
    node_embs: torch.Tensor,
    retrieved: Sequence[torch.Tensor],
    text_embs: torch.Tensor,
    tau: torch.Tensor | float,
    include_positive_in_denominator: bool = True,
) -> torch.Tensor:
    """Positive semantics matching: each node against its retrieved bank texts.

    For node i with retrieved rows r_1..r_k the numerator sums exp(sim(n_i, r)/tau)
    over the retrieved rows. The denominator always holds the mismatched batch
    texts j != i; with `include_positive_in_denominator` the retrieved rows are
    appended to it as the positive candidates, otherwise it is the j != i set
    alone. The matched text t_i itself is never in it, so a retrieval equal to
    t_i is counted once and the loss matches `contrastive_loss` under either
    setting. Nodes without retrievals are skipped, and when none has any the
    loss is an exact zero that still backpropagates.
    """
    check_pair(node_embs, text_embs, "psm_loss")
    b, d = node_embs.shape
    if len(retrieved) != b:
        raise ObjectiveError(f"psm_loss: {len(retrieved)} retrieval lists for {b} nodes")
    counts = [len(r) for r in retrieved]
    k = max(counts, default=0)
    if k == 0:
        return (node_embs * 0.0).sum()
    if b < 2 and not include_positive_in_denominator:
        raise ObjectiveError("psm_loss without the positive needs a batch of >= 2")

    padded = node_embs.new_zeros(b, k, d)
    valid = torch.zeros(b, k, dtype=torch.bool, device=node_embs.device)
    for i, rows in enumerate(retrieved):
        if len(rows) == 0:
            continue
        if rows.dim() != 2 or rows.shape[1] != d:
            raise ObjectiveError(
                f"psm_loss: retrieved rows of node {i} have shape {tuple(rows.shape)}, "
                f"expected (k, {d})"
            )
        padded[i, : len(rows)] = rows.to(node_embs.dtype).detach()
        valid[i, : len(rows)] = True

    pos = torch.einsum("bd,bkd->bk", node_embs, padded) / tau
    pos = pos.masked_fill(~valid, float("-inf"))
    others = (node_embs @ text_embs.t() / tau).masked_fill(
        ~off_diagonal(b, node_embs.device), float("-inf")
    )
    numerator = torch.logsumexp(pos, dim=1)
    if include_positive_in_denominator:
        denominator = torch.logsumexp(torch.cat([others, pos], dim=1), dim=1)
    else:
        denominator = torch.logsumexp(others, dim=1)

    contributing = valid.any(dim=1)
    return (denominator - numerator)[contributing].mean()


class PositiveMatchingObjective(Objective):
    name = "L_PSM"

    @override
    def compute(self, batch: JointEmbeddingBatch, cfg: LossConfig) -> torch.Tensor:
        retrieved = batch.retrieved or [
            batch.node_embs.new_empty(0, batch.node_embs.shape[1])
        ] * batch.node_embs.shape[0]
        return psm_loss(
            batch.node_embs,
            retrieved,
            batch.text_embs,
            batch.tau,
            cfg.include_positive_in_denominator,
        )
