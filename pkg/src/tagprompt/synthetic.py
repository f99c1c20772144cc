import dataclasses
import logging

import networkx as nx
import numpy as np

from tagprompt.errors import DatasetError
from tagprompt.graph import TextAttributedGraph

logger = logging.getLogger(__name__)

CLASS_NAME_WORDS = 3


@dataclasses.dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a stochastic-block-model text-attributed graph.

    Class `c` owns a disjoint core slice of the vocabulary. Each token of a node
    text is drawn from the shared (whole-vocabulary) distribution with probability
    `class_token_overlap` and from its class core otherwise.
    """

    classes: int = 5
    nodes_per_class: int = 100
    p_intra: float = 0.1
    p_inter: float = 0.01
    vocab_size: int = 200
    tokens_per_text: int = 24
    class_token_overlap: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("p_intra", "p_inter", "class_token_overlap"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise DatasetError(f"{name}={value} outside [0, 1]")
        if self.classes < 1 or self.nodes_per_class < 1 or self.tokens_per_text < 1:
            raise DatasetError("classes, nodes_per_class and tokens_per_text must be >= 1")
        if self.vocab_size < self.classes:
            raise DatasetError(
                f"vocab_size={self.vocab_size} < classes={self.classes}: "
                "cannot build disjoint class token cores"
            )

    @property
    def num_nodes(self) -> int:
        return self.classes * self.nodes_per_class

    def expected_edges(self) -> float:
        n = self.nodes_per_class
        pairs_in = self.classes * n * (n - 1) / 2
        pairs_out = self.classes * (self.classes - 1) / 2 * n * n
        return pairs_in * self.p_intra + pairs_out * self.p_inter


def word(index: int) -> str:
    return f"w{index}"


def class_cores(spec: SyntheticSpec) -> list[np.ndarray]:
    """Disjoint vocabulary slices, one per class."""
    return np.array_split(np.arange(spec.vocab_size), spec.classes)


def generate_synthetic(spec: SyntheticSpec) -> TextAttributedGraph:
    sizes = [spec.nodes_per_class] * spec.classes
    probs = np.full((spec.classes, spec.classes), spec.p_inter)
    np.fill_diagonal(probs, spec.p_intra)
    sbm = nx.stochastic_block_model(sizes, probs.tolist(), seed=spec.seed)

    rng = np.random.default_rng(spec.seed)
    cores = class_cores(spec)
    labels = [c for c in range(spec.classes) for _ in range(spec.nodes_per_class)]

    texts = []
    for label in labels:
        core = cores[label]
        shared = rng.random(spec.tokens_per_text) < spec.class_token_overlap
        from_core = rng.choice(core, size=spec.tokens_per_text)
        from_shared = rng.integers(0, spec.vocab_size, size=spec.tokens_per_text)
        ids = np.where(shared, from_shared, from_core)
        texts.append(" ".join(word(int(i)) for i in ids))

    class_names = [
        " ".join(word(int(i)) for i in core[:CLASS_NAME_WORDS]) for core in cores
    ]

    graph = TextAttributedGraph.from_edges(
        texts=texts,
        labels=labels,
        class_names=class_names,
        edges=sbm.edges(),
        node_names=[f"n{i}" for i in range(spec.num_nodes)],
    )
    logger.info(
        f"generated synthetic graph: {graph.num_nodes} nodes, {graph.num_edges} edges "
        f"(expected {spec.expected_edges():.1f})"
    )
    return graph
