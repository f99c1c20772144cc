import dataclasses
import logging

import numpy as np

from tagprompt.errors import EpisodeError
from tagprompt.graph import TextAttributedGraph

logger = logging.getLogger(__name__)

Labeled = tuple[int, int]


@dataclasses.dataclass(frozen=True)
class Episode:
    """A C-way K-shot task: K labeled support nodes per class and a disjoint query set."""

    class_subset: tuple[int, ...]
    support: tuple[Labeled, ...]
    query: tuple[Labeled, ...]

    @property
    def way_count(self) -> int:
        return len(self.class_subset)

    @property
    def shot_count(self) -> int:
        return len(self.support) // self.way_count

    def local_label(self, class_id: int) -> int:
        """Position of `class_id` inside the episode's class subset."""
        return self.class_subset.index(class_id)

    def support_nodes(self) -> list[int]:
        return [node for node, _ in self.support]

    def query_nodes(self) -> list[int]:
        return [node for node, _ in self.query]


def sample_episode(
    graph: TextAttributedGraph,
    way: int,
    shot: int,
    rng_seed: int,
    query_per_class: int = 15,
) -> Episode:
    if way < 2:
        raise EpisodeError(f"way={way}: an episode needs at least 2 classes")
    if shot < 0 or query_per_class < 1:
        raise EpisodeError(f"shot={shot}, query_per_class={query_per_class} out of range")

    need = shot + query_per_class
    groups = graph.nodes_by_class()
    eligible = sorted(c for c, nodes in groups.items() if len(nodes) >= need)
    if len(eligible) < way:
        raise EpisodeError(
            f"{way}-way {shot}-shot with {query_per_class} queries per class needs "
            f"{way} classes of >= {need} nodes; graph has {len(eligible)}"
        )

    rng = np.random.default_rng(rng_seed)
    chosen = rng.choice(eligible, size=way, replace=False)
    support: list[Labeled] = []
    query: list[Labeled] = []
    for c in chosen:
        c = int(c)
        nodes = rng.permutation(groups[c])[:need]
        support.extend((int(v), c) for v in nodes[:shot])
        query.extend((int(v), c) for v in nodes[shot:])

    logger.debug(f"episode seed={rng_seed}: classes {chosen.tolist()}")
    return Episode(
        class_subset=tuple(int(c) for c in chosen),
        support=tuple(support),
        query=tuple(query),
    )
