from tagprompt.objectives.abc import JointEmbeddingBatch, LossConfig, Objective
from tagprompt.objectives.contrastive import ContrastiveObjective, contrastive_loss
from tagprompt.objectives.executor import (
    LossBreakdown,
    ObjectiveExecutor,
    build_executor,
    total_loss,
)
from tagprompt.objectives.matching import PositiveMatchingObjective, psm_loss
from tagprompt.objectives.negative import (
    MarginObjective,
    SemanticsOppositeObjective,
    margin_loss,
    semantics_opposite_loss,
)

__all__ = [
    "ContrastiveObjective",
    "JointEmbeddingBatch",
    "LossBreakdown",
    "LossConfig",
    "MarginObjective",
    "Objective",
    "ObjectiveExecutor",
    "PositiveMatchingObjective",
    "SemanticsOppositeObjective",
    "build_executor",
    "contrastive_loss",
    "margin_loss",
    "psm_loss",
    "semantics_opposite_loss",
    "total_loss",
]
