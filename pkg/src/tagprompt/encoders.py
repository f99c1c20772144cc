"""Graph encoder, text encoder and negative text encoder.

All three map into the same d-dimensional space and return unit-norm rows.
"""

import logging
import math

import torch
import torch.nn.functional as F
from torch import nn

from tagprompt.compatible import Self
from tagprompt.errors import EncoderError
from tagprompt.tokenizer import EOS, PAD

logger = logging.getLogger(__name__)

NORM_EPS = 1e-12


def normalize_embedding(v: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """Scales `v` (or every row of `v`) to unit L2 norm.

    Raises instead of producing NaN when a norm is at or below `eps`.
    """
    norms = torch.linalg.vector_norm(v, dim=-1, keepdim=True)
    if bool((norms <= eps).any()):
        raise EncoderError(f"cannot normalize a vector with norm <= {eps}")
    return v / norms


def _linear(h: torch.Tensor, layer: nn.Linear) -> torch.Tensor:
    if h.is_sparse:
        out = torch.sparse.mm(h, layer.weight.t())
        return out if layer.bias is None else out + layer.bias
    return layer(h)


class GraphEncoder(nn.Module):
    """GCN over bag-of-words node features followed by a linear projection to d.

    Every propagation layer computes relu(A_hat H W). With zero layers the output
    is the projection of the raw features and edges play no part.
    """

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, layers: int = 2):
        super().__init__()
        if layers < 0:
            raise EncoderError(f"layers={layers} must be >= 0")
        dims = [in_dim] + [hidden_dim] * layers
        self.layers = nn.ModuleList(
            nn.Linear(a, b, bias=False) for a, b in zip(dims[:-1], dims[1:])
        )
        self.projection = nn.Linear(dims[-1], out_dim)
        self.in_dim = in_dim

    def forward(self, adjacency: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
        n = features.shape[0]
        if features.shape[1] != self.in_dim:
            raise EncoderError(
                f"features have {features.shape[1]} columns, encoder expects {self.in_dim}"
            )
        if tuple(adjacency.shape) != (n, n):
            raise EncoderError(
                f"adjacency {tuple(adjacency.shape)} does not match {n} nodes"
            )
        h = features
        for layer in self.layers:
            h = _linear(h, layer)
            h = torch.sparse.mm(adjacency, h) if adjacency.is_sparse else adjacency @ h
            h = F.relu(h)
        return normalize_embedding(_linear(h, self.projection))


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise EncoderError(f"token dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        q, k, v = (
            z.view(b, t, self.heads, self.head_dim).transpose(1, 2)
            for z in self.qkv(x).chunk(3, dim=-1)
        )
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(pad_mask[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, t, d)
        return self.out(out)


class TransformerBlock(nn.Module):
    """Pre-norm bidirectional transformer block with a GELU feed-forward."""

    def __init__(self, dim: int, heads: int, ff_mult: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(
            nn.Linear(dim, ff_mult * dim), nn.GELU(), nn.Linear(ff_mult * dim, dim)
        )

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x), pad_mask)
        return x + self.ff(self.norm2(x))


class TextEncoder(nn.Module):
    """Transformer text encoder pooled at the EOS position (or by masked mean).

    `prefix` vectors, when given, are placed in front of the token embeddings
    before positions are added; they are never masked.
    """

    def __init__(
        self,
        vocab_size: int,
        token_dim: int,
        out_dim: int,
        max_seq_len: int,
        layers: int = 2,
        heads: int = 4,
        pooling: str = "eos",
    ):
        super().__init__()
        if pooling not in ("eos", "mean"):
            raise EncoderError(f"unknown pooling {pooling!r}")
        self.token_emb = nn.Embedding(vocab_size, token_dim)
        self.pos_emb = nn.Embedding(max_seq_len, token_dim)
        self.blocks = nn.ModuleList(
            TransformerBlock(token_dim, heads) for _ in range(layers)
        )
        self.norm = nn.LayerNorm(token_dim)
        self.projection = nn.Linear(token_dim, out_dim, bias=False)
        self.max_seq_len = max_seq_len
        self.heads = heads
        self.pooling = pooling
        nn.init.normal_(self.token_emb.weight, std=0.02)
        nn.init.normal_(self.pos_emb.weight, std=0.01)

    @property
    def token_dim(self) -> int:
        return self.token_emb.embedding_dim

    def forward(
        self, tokens: torch.Tensor, prefix: torch.Tensor | None = None
    ) -> torch.Tensor:
        b, t = tokens.shape
        m = 0 if prefix is None else prefix.shape[0]
        if m + t > self.max_seq_len:
            raise EncoderError(
                f"sequence of length {t} plus {m} prompt vectors exceeds "
                f"max_seq_len={self.max_seq_len}"
            )
        pad_mask = tokens == PAD
        lengths = (~pad_mask).sum(dim=1)
        if bool((lengths == 0).any()):
            raise EncoderError("empty token sequence in batch (every text ends with EOS)")

        x = self.token_emb(tokens)
        if prefix is not None and m:
            x = torch.cat([prefix.to(x.dtype).unsqueeze(0).expand(b, m, -1), x], dim=1)
            pad_mask = torch.cat(
                [torch.zeros(b, m, dtype=torch.bool, device=tokens.device), pad_mask],
                dim=1,
            )
        x = x + self.pos_emb(torch.arange(m + t, device=tokens.device))
        for block in self.blocks:
            x = block(x, pad_mask)
        x = self.norm(x)

        if self.pooling == "eos":
            pooled = x[torch.arange(b, device=tokens.device), m + lengths - 1]
        else:
            keep = (~pad_mask).unsqueeze(-1).to(x.dtype)
            pooled = (x * keep).sum(dim=1) / keep.sum(dim=1)
        return normalize_embedding(self.projection(pooled))


def fit_to_budget(tokens: torch.Tensor, budget: int) -> torch.Tensor:
    """Cuts each sequence's tail so it is at most `budget` long, keeping EOS last."""
    if budget < 1:
        raise EncoderError(f"no room for text: budget={budget}")
    lengths = (tokens != PAD).sum(dim=1)
    if tokens.shape[1] <= budget:
        return tokens
    out = tokens[:, :budget].clone()
    cut = lengths > budget
    out[cut, budget - 1] = EOS
    return out


class NegativeTextEncoder(TextEncoder):
    """Text encoder with M learnable negative prompt vectors in front of every text.

    With `prompt_length=0` it encodes exactly what it is given, which is how
    hand-written negations are fed.
    """

    def __init__(self, *args, prompt_length: int = 16, prompt_init_std: float = 0.02, **kwargs):
        super().__init__(*args, **kwargs)
        if prompt_length >= self.max_seq_len:
            raise EncoderError(
                f"negative prompt length {prompt_length} leaves no room in "
                f"max_seq_len={self.max_seq_len}"
            )
        self.negative_prompt = nn.Parameter(
            torch.randn(prompt_length, self.token_dim) * prompt_init_std
        )

    @property
    def prompt_length(self) -> int:
        return self.negative_prompt.shape[0]

    @classmethod
    def from_text_encoder(
        cls, encoder: TextEncoder, prompt_length: int = 16, prompt_init_std: float = 0.02
    ) -> Self:
        """A negative encoder whose transformer weights are a copy of `encoder`'s."""
        weight = encoder.token_emb.weight
        neg = cls(
            weight.shape[0],
            weight.shape[1],
            encoder.projection.out_features,
            encoder.max_seq_len,
            layers=len(encoder.blocks),
            heads=encoder.heads,
            pooling=encoder.pooling,
            prompt_length=prompt_length,
            prompt_init_std=prompt_init_std,
        ).to(device=weight.device, dtype=weight.dtype)
        neg.copy_text_weights(encoder)
        return neg

    def copy_text_weights(self, encoder: TextEncoder) -> None:
        """Overwrites the transformer weights with `encoder`'s; the prompt is kept."""
        missing, unexpected = self.load_state_dict(encoder.state_dict(), strict=False)
        if unexpected or set(missing) != {"negative_prompt"}:
            raise EncoderError(
                f"text encoder does not match: missing={missing}, unexpected={unexpected}"
            )

    def forward(self, tokens: torch.Tensor, prefix: torch.Tensor | None = None) -> torch.Tensor:
        if prefix is not None:
            raise EncoderError("the negative encoder supplies its own prompt")
        m = self.prompt_length
        tokens = fit_to_budget(tokens, self.max_seq_len - m)
        return super().forward(tokens, self.negative_prompt if m else None)
