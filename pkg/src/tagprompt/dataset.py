"""Reading and writing the dataset directory format.

A dataset directory holds three UTF-8 files::

    nodes.jsonl   {"id": "p1", "text": "...", "label": "databases"} per line
    edges.tsv     two tab-separated node ids per line
    classes.json  ["databases", "vision", ...]
"""

import json
import logging
import os
from pathlib import Path

from tagprompt.errors import DatasetError
from tagprompt.graph import TextAttributedGraph

logger = logging.getLogger(__name__)

NODES_FILE = "nodes.jsonl"
EDGES_FILE = "edges.tsv"
CLASSES_FILE = "classes.json"


def _require(path: Path) -> Path:
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    return path


def _read_classes(path: Path) -> list[str]:
    try:
        classes = json.loads(_require(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path}: not valid JSON ({e.msg})") from e
    if not isinstance(classes, list) or not all(isinstance(c, str) for c in classes):
        raise DatasetError(f"{path}: expected a JSON array of strings")
    if len(set(classes)) != len(classes):
        raise DatasetError(f"{path}: duplicate class name")
    return classes


def _read_nodes(
    path: Path, class_index: dict[str, int]
) -> tuple[list[str], list[str], list[int]]:
    names: list[str] = []
    texts: list[str] = []
    labels: list[int] = []
    index: set[str] = set()

    with _require(path).open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"{path}:{lineno}: malformed line ({e.msg})") from e
            if not isinstance(record, dict) or not all(
                isinstance(record.get(k), str) for k in ("id", "text", "label")
            ):
                raise DatasetError(
                    f"{path}:{lineno}: expected string fields 'id', 'text', 'label'"
                )
            node_id = record["id"]
            if node_id in index:
                raise DatasetError(f"{path}:{lineno}: duplicate node id {node_id!r}")
            if record["label"] not in class_index:
                raise DatasetError(
                    f"{path}:{lineno}: label {record['label']!r} outside class catalog"
                )
            index.add(node_id)
            names.append(node_id)
            texts.append(record["text"])
            labels.append(class_index[record["label"]])

    if not names:
        raise DatasetError("empty node set")
    return names, texts, labels


def _read_edges(path: Path, node_index: dict[str, int]) -> list[tuple[int, int]]:
    edges = []
    with _require(path).open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DatasetError(f"{path}:{lineno}: expected two tab-separated ids")
            u, v = (p.strip() for p in parts)
            for name in (u, v):
                if name not in node_index:
                    raise DatasetError(
                        f"{path}:{lineno}: edge references unknown node {name!r}"
                    )
            edges.append((node_index[u], node_index[v]))
    return edges


def load_dataset(path: str | os.PathLike) -> TextAttributedGraph:
    root = Path(path)
    classes = _read_classes(root / CLASSES_FILE)
    class_index = {name: i for i, name in enumerate(classes)}
    names, texts, labels = _read_nodes(root / NODES_FILE, class_index)
    node_index = {name: i for i, name in enumerate(names)}
    edges = _read_edges(root / EDGES_FILE, node_index)

    graph = TextAttributedGraph.from_edges(texts, labels, classes, edges, names)
    logger.info(
        f"loaded {root}: {graph.num_nodes} nodes, {graph.num_edges} edges, "
        f"{graph.num_classes} classes"
    )
    return graph


def save_dataset(graph: TextAttributedGraph, path: str | os.PathLike) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)

    (root / CLASSES_FILE).write_text(
        json.dumps(list(graph.class_names), ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    with (root / NODES_FILE).open("w", encoding="utf-8") as f:
        for name, text, label in zip(graph.node_names, graph.texts, graph.labels):
            record = {"id": name, "text": text, "label": graph.class_names[label]}
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
    with (root / EDGES_FILE).open("w", encoding="utf-8") as f:
        for u, v in graph.edges:
            f.write(f"{graph.node_names[u]}\t{graph.node_names[v]}\n")

    logger.info(f"wrote {graph.num_nodes} nodes to {root}")
    return root
