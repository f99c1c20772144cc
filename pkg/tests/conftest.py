import pytest
import torch

from tagprompt.checkpoint import load_checkpoint, save_checkpoint
from tagprompt.config import TrainConfig
from tagprompt.graph import TextAttributedGraph
from tagprompt.pipeline import pretrain
from tagprompt.synthetic import SyntheticSpec, generate_synthetic


def unit_rows(x: torch.Tensor) -> torch.Tensor:
    return x / x.norm(dim=-1, keepdim=True)


def random_units(b: int, d: int, seed: int = 0) -> torch.Tensor:
    g = torch.Generator().manual_seed(seed)
    return unit_rows(torch.randn(b, d, generator=g, dtype=torch.float64))


@pytest.fixture
def tiny_graph() -> TextAttributedGraph:
    return TextAttributedGraph(
        texts=("graph neural nodes", "vision pixels images", "graph edges nodes"),
        labels=(0, 1, 0),
        class_names=("databases", "vision"),
        edges=((0, 1), (0, 2)),
        node_names=("p1", "p2", "p3"),
    )


@pytest.fixture(scope="session")
def small_spec() -> SyntheticSpec:
    return SyntheticSpec(
        classes=5,
        nodes_per_class=24,
        p_intra=0.2,
        p_inter=0.01,
        vocab_size=60,
        tokens_per_text=10,
        class_token_overlap=0.1,
        seed=0,
    )


@pytest.fixture(scope="session")
def small_graph(small_spec) -> TextAttributedGraph:
    return generate_synthetic(small_spec)


@pytest.fixture(scope="session")
def small_cfg() -> TrainConfig:
    return TrainConfig(
        lr=1e-3,
        epochs=1,
        batch_size=16,
        bank_capacity=64,
        alpha=0.5,
        neg_prompt_length=4,
        hidden_dim=16,
        embed_dim=16,
        token_dim=16,
        heads=2,
        transformer_layers=1,
        max_seq_len=32,
        min_freq=1,
        prompt_steps=5,
        query_per_class=5,
        runs=2,
    )


@pytest.fixture(scope="session")
def checkpoint_dir(small_graph, small_cfg, tmp_path_factory):
    root = tmp_path_factory.mktemp("ckpt")
    save_checkpoint(pretrain(small_graph, small_cfg), root)
    return root


@pytest.fixture
def checkpoint(checkpoint_dir):
    return load_checkpoint(checkpoint_dir)
