import logging
import typing
from abc import ABC, abstractmethod
from collections.abc import Sequence

import torch

from tagprompt.episode import Episode

logger = logging.getLogger(__name__)


class TokenizerInterface(ABC):
    """Interface for the text tokenizer."""

    max_seq_len: int

    @abstractmethod
    def encode(self, text: str, reserve: int = 0) -> list[int]:
        """Token ids of the text, ending with EOS."""

    @abstractmethod
    def pad_batch(self, sequences: Sequence[Sequence[int]]) -> torch.Tensor:
        """Right-pads the sequences into a batch tensor."""

    @property
    @abstractmethod
    def vocab_size(self) -> int: ...


class Retrieval(typing.NamedTuple):
    node_id: int
    embedding: torch.Tensor
    similarity: float


class RetrievalResult(typing.NamedTuple):
    hits: list[Retrieval]
    short: bool
    """True when fewer than the requested number of candidates existed."""


class RetrievalBankInterface(ABC):
    """Interface for the store that serves cross-batch positives."""

    @abstractmethod
    def push_batch(self, ids: Sequence[int], embeddings: torch.Tensor) -> None:
        """Appends detached copies of the embeddings."""

    @abstractmethod
    def query_topk(
        self, query: torch.Tensor, k: int, exclude_id: int | None = None
    ) -> RetrievalResult:
        """Returns up to `k` stored entries most similar to `query`."""

    @abstractmethod
    def __len__(self) -> int: ...


class EpisodeClassifier(ABC):
    """Classifies the query nodes of an episode, optionally fitting on its support."""

    @abstractmethod
    def fit(self, episode: Episode) -> None:
        """Adapts to the episode's classes (and support set, if any)."""

    @abstractmethod
    def predict(self, node_ids: Sequence[int]) -> list[int]:
        """Returns a class id from the episode's class subset per node."""
