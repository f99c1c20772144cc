import json
import logging
import os
import typing
from collections.abc import Sequence
from pathlib import Path

import numpy as np
import torch

from tagprompt.abc import Retrieval, RetrievalBankInterface, RetrievalResult
from tagprompt.compatible import Self
from tagprompt.errors import BankError
from tagprompt.utils import HasPrettyRepr

logger = logging.getLogger(__name__)

DEFAULT_CAPACITY = 32768
BANK_MATRIX_FILE = "bank.npy"
BANK_IDS_FILE = "bank_ids.json"


class TextBank(RetrievalBankInterface, HasPrettyRepr):
    """Bounded FIFO store of detached text embeddings.

    Entries live in a ring buffer; once full, every push evicts the oldest
    entries first. Retrieval is an exact scan ordered by cosine similarity,
    ties going to the most recent insertion.
    """

    capacity: int

    def __init__(self, capacity: int = DEFAULT_CAPACITY) -> None:
        if capacity < 1:
            raise BankError(f"capacity={capacity} must be >= 1")
        self.capacity = capacity
        self._embeddings: torch.Tensor | None = None
        self._ids = torch.zeros(capacity, dtype=torch.long)
        self._order = torch.zeros(capacity, dtype=torch.long)
        self._size = 0
        self._head = 0
        self._pushed = 0

    def __len__(self) -> int:
        return self._size

    @property
    def total_pushed(self) -> int:
        return self._pushed

    @property
    def dim(self) -> int | None:
        return None if self._embeddings is None else self._embeddings.shape[1]

    def push_batch(self, ids: Sequence[int], embeddings: torch.Tensor) -> None:
        if embeddings.dim() != 2 or embeddings.shape[0] != len(ids):
            raise BankError(
                f"expected {len(ids)} x d embeddings, got {tuple(embeddings.shape)}"
            )
        if self.dim is not None and embeddings.shape[1] != self.dim:
            raise BankError(
                f"embedding dimension {embeddings.shape[1]} != bank dimension {self.dim}"
            )
        if self._embeddings is None:
            self._embeddings = torch.zeros(
                self.capacity, embeddings.shape[1], dtype=embeddings.dtype
            )

        rows = embeddings.detach().to(self._embeddings.dtype).cpu().clone()
        id_tensor = torch.as_tensor(list(ids), dtype=torch.long)
        order = torch.arange(self._pushed, self._pushed + len(id_tensor))
        self._pushed += len(id_tensor)
        if len(id_tensor) > self.capacity:
            rows = rows[-self.capacity :]
            id_tensor = id_tensor[-self.capacity :]
            order = order[-self.capacity :]

        slots = (self._head + torch.arange(len(id_tensor))) % self.capacity
        self._embeddings[slots] = rows
        self._ids[slots] = id_tensor
        self._order[slots] = order
        self._head = (self._head + len(id_tensor)) % self.capacity
        self._size = min(self._size + len(id_tensor), self.capacity)

    def entries(self) -> tuple[list[int], torch.Tensor]:
        """Stored ids and embeddings, oldest first."""
        if self._embeddings is None or self._size == 0:
            return [], torch.empty(0, 0)
        order = torch.argsort(self._order[: self._size])
        return (
            self._ids[: self._size][order].tolist(),
            self._embeddings[: self._size][order].clone(),
        )

    def _ranked(self, sims: torch.Tensor) -> torch.Tensor:
        """Column order by descending similarity, most recent first among ties.

        `sims` is (..., size) over the live slots.
        """
        recent = torch.argsort(self._order[: self._size], descending=True)
        ranked = torch.sort(sims[..., recent], dim=-1, descending=True, stable=True)
        return recent[ranked.indices]

    def query_topk(
        self, query: torch.Tensor, k: int, exclude_id: int | None = None
    ) -> RetrievalResult:
        if k < 1:
            raise BankError(f"k={k} must be >= 1")
        if self._embeddings is None or self._size == 0:
            return RetrievalResult([], True)
        if query.shape != (self.dim,):
            raise BankError(f"query shape {tuple(query.shape)} != ({self.dim},)")

        live = self._embeddings[: self._size]
        sims = live @ query.detach().to(live.dtype).cpu()
        hits = []
        for slot in self._ranked(sims).tolist():
            node_id = int(self._ids[slot])
            if exclude_id is not None and node_id == exclude_id:
                continue
            hits.append(Retrieval(node_id, live[slot].clone(), float(sims[slot])))
            if len(hits) == k:
                break
        return RetrievalResult(hits, len(hits) < k)

    def query_batch(
        self,
        queries: torch.Tensor,
        k: int,
        exclude_ids: Sequence[int] | None = None,
    ) -> list[torch.Tensor]:
        """Top-k embeddings per query row as a list of (k_i x d) tensors.

        Same ranking and exclusion rule as `query_topk`; rows never carry
        gradient history.
        """
        if k < 1:
            raise BankError(f"k={k} must be >= 1")
        b = queries.shape[0]
        if self._embeddings is None or self._size == 0:
            empty = torch.empty(0, queries.shape[1], dtype=queries.dtype)
            return [empty for _ in range(b)]
        if queries.shape[1] != self.dim:
            raise BankError(f"query dimension {queries.shape[1]} != bank dimension {self.dim}")

        live = self._embeddings[: self._size]
        sims = queries.detach().to(live.dtype).cpu() @ live.t()
        if exclude_ids is not None:
            excluded = self._ids[: self._size][None, :] == torch.as_tensor(
                list(exclude_ids), dtype=torch.long
            )[:, None]
            sims = sims.masked_fill(excluded, float("-inf"))
        order = self._ranked(sims)[:, :k]
        top = torch.gather(sims, 1, order)

        out = []
        for row in range(b):
            slots = order[row][torch.isfinite(top[row])]
            out.append(live[slots].to(queries.dtype).clone())
        short = sum(len(r) < k for r in out)
        if short:
            logger.debug(f"{short} of {b} retrievals returned fewer than {k} entries")
        return out

    def dump(self, path: str | os.PathLike) -> Path:
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        ids, embeddings = self.entries()
        np.save(root / BANK_MATRIX_FILE, embeddings.numpy())
        (root / BANK_IDS_FILE).write_text(
            json.dumps({"capacity": self.capacity, "pushed": self._pushed, "ids": ids}),
            encoding="utf-8",
        )
        return root

    @classmethod
    def load(cls, path: str | os.PathLike) -> Self:
        root = Path(path)
        try:
            meta = json.loads((root / BANK_IDS_FILE).read_text(encoding="utf-8"))
            matrix = np.load(root / BANK_MATRIX_FILE)
        except (OSError, ValueError) as e:
            raise BankError(f"cannot read bank dump in {root}: {e}") from e
        bank = cls(int(meta["capacity"]))
        if meta["ids"]:
            bank.push_batch(meta["ids"], torch.from_numpy(matrix))
        bank._pushed = int(meta["pushed"])
        return bank

    def stats(self, bins: int = 10, sample: int = 1024, seed: int = 0) -> dict[str, typing.Any]:
        """Fill level plus a histogram of pairwise cosine similarities over at most
        `sample` entries."""
        report: dict[str, typing.Any] = {
            "capacity": self.capacity,
            "size": self._size,
            "fill": self._size / self.capacity,
            "pushed": self._pushed,
        }
        _, embeddings = self.entries()
        if self._size < 2:
            report["histogram"] = {"edges": [], "counts": []}
            return report
        rng = np.random.default_rng(seed)
        pick = rng.choice(self._size, size=min(sample, self._size), replace=False)
        e = embeddings[torch.as_tensor(np.sort(pick))].double().numpy()
        sims = e @ e.T
        upper = sims[np.triu_indices(len(e), k=1)]
        counts, edges = np.histogram(upper, bins=bins, range=(-1.0, 1.0))
        report["histogram"] = {"edges": edges.tolist(), "counts": counts.tolist()}
        return report
