import dataclasses
import logging
from collections.abc import Iterable, Sequence

import networkx as nx
import torch

from tagprompt.compatible import Self
from tagprompt.errors import DatasetError

logger = logging.getLogger(__name__)

Edge = tuple[int, int]


@dataclasses.dataclass(frozen=True)
class TextAttributedGraph:
    """Nodes with one text and one label each, joined by undirected edges.

    Node ids are the dense positions 0..N-1; `node_names` keeps the original
    ids in file order for reporting. Edges are stored once as (u, v) with u < v.
    """

    texts: tuple[str, ...]
    labels: tuple[int, ...]
    class_names: tuple[str, ...]
    edges: tuple[Edge, ...] = ()
    node_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        n = len(self.texts)
        if n == 0:
            raise DatasetError("empty node set")
        if len(self.labels) != n:
            raise DatasetError(f"{len(self.labels)} labels for {n} texts")
        if not self.node_names:
            object.__setattr__(self, "node_names", tuple(str(i) for i in range(n)))
        elif len(self.node_names) != n:
            raise DatasetError(f"{len(self.node_names)} node names for {n} texts")

        n_classes = len(self.class_names)
        for i, label in enumerate(self.labels):
            if not 0 <= label < n_classes:
                raise DatasetError(
                    f"label {label} of node {self.node_names[i]!r} outside class catalog"
                )

        seen: set[Edge] = set()
        for u, v in self.edges:
            if not (0 <= u < n and 0 <= v < n):
                raise DatasetError(f"edge ({u}, {v}) references unknown node")
            if u == v:
                raise DatasetError(f"self-loop on node {u}")
            if u > v:
                raise DatasetError(f"edge ({u}, {v}) is not canonical (u < v)")
            if (u, v) in seen:
                raise DatasetError(f"duplicate edge ({u}, {v})")
            seen.add((u, v))

    @classmethod
    def from_edges(
        cls,
        texts: Sequence[str],
        labels: Sequence[int],
        class_names: Sequence[str],
        edges: Iterable[Edge],
        node_names: Sequence[str] = (),
    ) -> Self:
        """Builds a graph from a raw edge list, folding (u, v) and (v, u) together
        and dropping self-loops."""
        g = nx.Graph()
        g.add_nodes_from(range(len(texts)))
        loops = 0
        for u, v in edges:
            if u == v:
                loops += 1
                continue
            g.add_edge(int(u), int(v))
        if loops:
            logger.warning(f"dropped {loops} self-loop(s)")
        canonical = sorted((min(u, v), max(u, v)) for u, v in g.edges())
        return cls(
            texts=tuple(texts),
            labels=tuple(int(y) for y in labels),
            class_names=tuple(class_names),
            edges=tuple(canonical),
            node_names=tuple(node_names),
        )

    @property
    def num_nodes(self) -> int:
        return len(self.texts)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        for i, (text, label) in enumerate(zip(self.texts, self.labels)):
            g.add_node(i, text=text, label=label, name=self.node_names[i])
        g.add_edges_from(self.edges)
        return g

    def nodes_by_class(self) -> dict[int, list[int]]:
        groups: dict[int, list[int]] = {c: [] for c in range(self.num_classes)}
        for node, label in enumerate(self.labels):
            groups[label].append(node)
        return groups


def normalize_adjacency(
    graph: TextAttributedGraph, dtype: torch.dtype = torch.float64
) -> torch.Tensor:
    """Symmetric GCN normalization D^-1/2 (A + I) D^-1/2 as a sparse N x N tensor.

    Each edge contributes both directions; self-loops are added here only.
    The value of (u, v) is dinv[u] * dinv[v], so the result is exactly symmetric.
    """
    n = graph.num_nodes
    if graph.edges:
        e = torch.tensor(graph.edges, dtype=torch.long).t()
        rows = torch.cat([e[0], e[1]])
        cols = torch.cat([e[1], e[0]])
    else:
        rows = cols = torch.empty(0, dtype=torch.long)
    loops = torch.arange(n, dtype=torch.long)
    rows = torch.cat([rows, loops])
    cols = torch.cat([cols, loops])

    degree = torch.bincount(rows, minlength=n).to(torch.float64)
    dinv = degree.pow(-0.5)
    values = dinv[rows] * dinv[cols]

    adj = torch.sparse_coo_tensor(torch.stack([rows, cols]), values, (n, n))
    return adj.coalesce().to(dtype)
