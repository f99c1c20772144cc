import logging
import math

import torch
from torch import nn

from tagprompt.config import TrainConfig
from tagprompt.encoders import GraphEncoder, NegativeTextEncoder, TextEncoder
from tagprompt.utils import resolve_dtype, seeded

logger = logging.getLogger(__name__)

TAU_MIN = 1e-3
TAU_MAX = 100.0


class TextGraphModel(nn.Module):
    """The graph encoder, the text encoder, the negative text encoder and the
    shared learnable temperature (stored as log tau)."""

    def __init__(
        self,
        graph_encoder: GraphEncoder,
        text_encoder: TextEncoder,
        negative_text_encoder: NegativeTextEncoder,
        tau_init: float = 0.07,
    ) -> None:
        super().__init__()
        self.graph_encoder = graph_encoder
        self.text_encoder = text_encoder
        self.negative_text_encoder = negative_text_encoder
        self.log_tau = nn.Parameter(torch.tensor(math.log(tau_init)))

    @property
    def tau(self) -> torch.Tensor:
        return self.log_tau.exp().clamp(TAU_MIN, TAU_MAX)

    @torch.no_grad()
    def clamp_tau(self) -> None:
        self.log_tau.clamp_(math.log(TAU_MIN), math.log(TAU_MAX))

    def encode_nodes(self, adjacency: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
        return self.graph_encoder(adjacency, features)

    def encode_texts(
        self, tokens: torch.Tensor, prefix: torch.Tensor | None = None
    ) -> torch.Tensor:
        return self.text_encoder(tokens, prefix)

    def encode_negative_texts(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.negative_text_encoder(tokens)

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        """Named parameter groups: what the pretraining optimizers and the
        gradient check operate on."""
        neg = self.negative_text_encoder
        return {
            "graph_encoder": list(self.graph_encoder.parameters()),
            "text_encoder": list(self.text_encoder.parameters()),
            "temperature": [self.log_tau],
            "negative_text_encoder": [
                p for name, p in neg.named_parameters() if name != "negative_prompt"
            ],
            "negative_prompt": [neg.negative_prompt],
        }


def build_model(cfg: TrainConfig, vocab_size: int) -> TextGraphModel:
    """Initializes all encoders from `cfg.seed`; the global RNG is left untouched.

    In handcrafted mode the negative encoder gets no learnable prompt vectors.
    """
    prompt_length = cfg.neg_prompt_length if cfg.negative_prompt_mode == "learnable" else 0
    with seeded(cfg.seed):
        graph_encoder = GraphEncoder(
            vocab_size, cfg.hidden_dim, cfg.embed_dim, layers=cfg.gcn_layers
        )
        text_encoder = TextEncoder(
            vocab_size,
            cfg.token_dim,
            cfg.embed_dim,
            cfg.max_seq_len,
            layers=cfg.transformer_layers,
            heads=cfg.heads,
            pooling=cfg.pooling,
        )
        negative = NegativeTextEncoder.from_text_encoder(
            text_encoder, prompt_length=prompt_length
        )
        model = TextGraphModel(graph_encoder, text_encoder, negative, cfg.tau_init)
    return model.to(resolve_dtype(cfg.dtype))
