import logging
from collections.abc import Mapping

import torch

logger = logging.getLogger(__name__)


class ParameterDifferenceDetector:
    """Detects the difference between two parameter snapshots."""

    before_num: int
    after_num: int
    changed: list[str]
    added: list[str]
    removed: list[str]

    def __init__(
        self,
        before: Mapping[str, torch.Tensor],
        after: Mapping[str, torch.Tensor],
    ):
        self.before_num = len(before)
        self.after_num = len(after)
        self.added = sorted(set(after) - set(before))
        self.removed = sorted(set(before) - set(after))
        self.changed = sorted(
            name
            for name in set(before) & set(after)
            if not torch.equal(before[name], after[name])
        )

    @property
    def identical(self) -> bool:
        return not (self.changed or self.added or self.removed)

    def changed_under(self, prefix: str) -> list[str]:
        """Changed names inside one submodule, e.g. `negative_text_encoder.`."""
        return [name for name in self.changed if name.startswith(prefix)]
