import collections
import logging
from collections.abc import Iterable, Mapping, Sequence

import torch

from tagprompt.abc import TokenizerInterface
from tagprompt.compatible import Self
from tagprompt.errors import TokenizerError
from tagprompt.utils import HasPrettyRepr

logger = logging.getLogger(__name__)

PAD = 0
EOS = 1
UNK = 2
RESERVED = ("<pad>", "<eos>", "<unk>")


class WordTokenizer(TokenizerInterface, HasPrettyRepr):
    """Lowercased whitespace tokenizer over a fixed vocabulary.

    >>> tok = WordTokenizer.build(["Graph nodes", "graph texts"], min_freq=1, max_seq_len=8)
    >>> tok.encode("graph unknown")
    [3, 2, 1]
    >>> tok.encode("")
    [1]
    """

    max_seq_len: int

    def __init__(self, vocab: Mapping[str, int], max_seq_len: int) -> None:
        if max_seq_len < 1:
            raise TokenizerError(f"max_seq_len={max_seq_len} must be >= 1")
        for i, word in enumerate(RESERVED):
            if vocab.get(word) != i:
                raise TokenizerError(f"reserved token {word!r} must have id {i}")
        if sorted(vocab.values()) != list(range(len(vocab))):
            raise TokenizerError("vocabulary ids must be dense in 0..|vocab|-1")
        self._vocab = dict(vocab)
        self.max_seq_len = max_seq_len

    @classmethod
    def build(
        cls,
        corpus: Iterable[str],
        min_freq: int = 2,
        max_seq_len: int = 128,
        extra_words: Iterable[str] = (),
    ) -> Self:
        """Builds the vocabulary from a corpus.

        Words are ordered by descending frequency, ties alphabetically, so the
        same corpus always yields the same ids. `extra_words` are always kept.
        """
        counts: collections.Counter[str] = collections.Counter()
        for text in corpus:
            counts.update(cls._split(cls._preprocess(text)))
        for w in extra_words:
            for part in cls._split(cls._preprocess(w)):
                counts[part] = max(counts[part], min_freq)

        kept = sorted(
            (w for w, n in counts.items() if n >= min_freq and w not in RESERVED),
            key=lambda w: (-counts[w], w),
        )
        vocab = {w: i for i, w in enumerate(RESERVED)}
        vocab.update((w, i) for i, w in enumerate(kept, start=len(RESERVED)))
        logger.info(f"built vocabulary of {len(vocab)} words (min_freq={min_freq})")
        return cls(vocab, max_seq_len)

    @staticmethod
    def _preprocess(text: str) -> str:
        return text.lower()

    @staticmethod
    def _split(text: str) -> list[str]:
        return text.split()

    def encode(self, text: str, reserve: int = 0) -> list[int]:
        """Token ids ending with EOS, at most `max_seq_len - reserve` long.

        `reserve` leaves room for prompt vectors prepended by an encoder.
        """
        budget = self.max_seq_len - reserve
        if budget < 1:
            raise TokenizerError(
                f"no room for text: max_seq_len={self.max_seq_len}, reserve={reserve}"
            )
        words = self._split(self._preprocess(text))
        ids = [self._vocab.get(w, UNK) for w in words[: budget - 1]]
        ids.append(EOS)
        return ids

    def pad_batch(self, sequences: Sequence[Sequence[int]]) -> torch.Tensor:
        width = max((len(s) for s in sequences), default=1)
        batch = torch.full((len(sequences), width), PAD, dtype=torch.long)
        for i, seq in enumerate(sequences):
            batch[i, : len(seq)] = torch.tensor(seq, dtype=torch.long)
        return batch

    def encode_batch(self, texts: Sequence[str], reserve: int = 0) -> torch.Tensor:
        return self.pad_batch([self.encode(t, reserve) for t in texts])

    @property
    def vocab(self) -> dict[str, int]:
        return dict(self._vocab)

    @property
    def vocab_size(self) -> int:
        return len(self._vocab)

    def bag_of_words(self, texts: Sequence[str]) -> torch.Tensor:
        """L2-normalized word counts per text as a sparse len(texts) x |vocab| tensor.

        Reserved ids are not counted; a text with no known word gets an all-zero row.
        """
        rows, cols, vals = [], [], []
        for i, text in enumerate(texts):
            counts = collections.Counter(
                self._vocab.get(w, UNK) for w in self._split(self._preprocess(text))
            )
            counts.pop(UNK, None)
            norm = sum(c * c for c in counts.values()) ** 0.5
            for j, c in sorted(counts.items()):
                rows.append(i)
                cols.append(j)
                vals.append(c / norm)
        index = torch.tensor([rows, cols], dtype=torch.long).reshape(2, -1)
        values = torch.tensor(vals, dtype=torch.float64)
        return torch.sparse_coo_tensor(
            index, values, (len(texts), self.vocab_size)
        ).coalesce()


if __name__ == "__main__":
    import doctest

    doctest.testmod()
