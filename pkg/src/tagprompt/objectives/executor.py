import dataclasses
import functools
import logging
from abc import ABC, abstractmethod

import torch

from tagprompt.objectives.abc import JointEmbeddingBatch, LossConfig, Objective
from tagprompt.objectives.contrastive import ContrastiveObjective
from tagprompt.objectives.matching import PositiveMatchingObjective
from tagprompt.objectives.negative import MarginObjective, SemanticsOppositeObjective

logger = logging.getLogger(__name__)


@dataclasses.dataclass
class LossBreakdown:
    """Per-term values of one step. Terms that were not computed stay 0."""

    total: torch.Tensor
    L_CL: float = 0.0
    L_PSM: float = 0.0
    L_ML: float = 0.0
    L_SO: float = 0.0

    def to_dict(self) -> dict[str, float]:
        return {
            "total": float(self.total.detach()),
            "L_CL": self.L_CL,
            "L_PSM": self.L_PSM,
            "L_ML": self.L_ML,
            "L_SO": self.L_SO,
        }


class IObjectiveExecutor(ABC):
    """Objective executor interface."""

    @abstractmethod
    def execute_all(self, batch: JointEmbeddingBatch) -> LossBreakdown:
        """Evaluates every objective and sums them into the total."""

    @abstractmethod
    def append_command(self, *command: Objective) -> None:
        """Appends objectives."""

    @abstractmethod
    def remove_command(self, command: Objective) -> None:
        """Removes an objective."""

    @abstractmethod
    def get_commands(self) -> list[Objective]:
        """Returns all objectives."""


class ObjectiveExecutor(IObjectiveExecutor):
    _objectives: list[Objective]

    def __init__(self, cfg: LossConfig) -> None:
        self._objectives = []
        self.cfg = cfg

    @property
    def needs_negatives(self) -> bool:
        return self.cfg.alpha > 0 and any(o.negative for o in self._objectives)

    def execute_all(self, batch: JointEmbeddingBatch) -> LossBreakdown:
        values: dict[str, float] = {}

        def accumulate(total: torch.Tensor, objective: Objective) -> torch.Tensor:
            if objective.negative and not self.needs_negatives:
                return total
            loss = objective.compute(batch, self.cfg)
            values[objective.name] = float(loss.detach())
            weight = self.cfg.alpha if objective.negative else 1.0
            return total + weight * loss

        total = functools.reduce(
            accumulate, self._objectives, batch.node_embs.new_zeros(())
        )
        return LossBreakdown(total=total, **values)

    def append_command(self, *command: Objective) -> None:
        self._objectives.extend(command)

    def remove_command(self, command: Objective) -> None:
        self._objectives.remove(command)

    def get_commands(self) -> list[Objective]:
        return self._objectives


def build_executor(cfg: LossConfig) -> ObjectiveExecutor:
    """The full pretraining objective L_CL + L_PSM + alpha * (L_ML + L_SO).

    L_PSM is left out when `cfg.positive_matching` is off (the contrast-only ablation).
    """
    executor = ObjectiveExecutor(cfg)
    executor.append_command(ContrastiveObjective())
    if cfg.positive_matching:
        executor.append_command(PositiveMatchingObjective())
    if cfg.alpha > 0:
        executor.append_command(MarginObjective(), SemanticsOppositeObjective())
    return executor


def total_loss(batch: JointEmbeddingBatch, cfg: LossConfig) -> LossBreakdown:
    """Evaluates the full objective once. With alpha = 0 the negative terms are
    never computed, so `batch.neg_text_embs` may be absent."""
    return build_executor(cfg).execute_all(batch)
