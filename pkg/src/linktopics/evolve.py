"""Topic evolution across consecutive epochs.

Topics of epoch e are linked to topics of epoch e+1 by a directed edge
whenever their similarity reaches ``tau``.  Events are read off node
degrees: no incoming edge means the topic was born, no outgoing edge
means it died, two or more outgoing edges mean it split, and two or more
incoming edges mean the sources merged into it.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .hdp import Topic

BIRTH, DEATH, SPLIT, MERGE = "birth", "death", "split", "merge"
EVENT_KINDS = (BIRTH, DEATH, SPLIT, MERGE)
GRAPH_SCHEMA = "linktopics.graph/1"
STATS_HEADER = ("epoch", "topics", "births", "deaths", "merges", "splits")


def _check_distribution(p: np.ndarray, name: str) -> None:
    if p.ndim != 1:
        raise ValueError(f"{name} must be a vector")
    if (p < 0).any() or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"{name} is not a probability distribution (sum={p.sum()})")


def weighted_jaccard(p: np.ndarray, q: np.ndarray) -> float:
    """sum_v min(p_v, q_v) / sum_v max(p_v, q_v)."""
    return float(np.minimum(p, q).sum() / np.maximum(p, q).sum())


def top_k_jaccard(p: np.ndarray, q: np.ndarray, k: int) -> float:
    """Set Jaccard of the ``k`` most probable terms of each distribution (ties by lower index)."""
    def top(x):
        return set(np.lexsort((np.arange(len(x)), -x))[:k].tolist())

    a, b = top(p), top(q)
    return len(a & b) / len(a | b)


def topic_similarity(p, q, method: str = "weighted", top_k: int = 20) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"dimension mismatch: {p.shape} vs {q.shape}")
    _check_distribution(p, "p")
    _check_distribution(q, "q")
    if method == "weighted":
        return weighted_jaccard(p, q)
    if method == "topk":
        return top_k_jaccard(p, q, top_k)
    raise ValueError(f"unknown similarity method {method!r}")


@dataclass(frozen=True)
class TopicNode:
    epoch_index: int
    topic_id: int
    phi: np.ndarray = field(repr=False, compare=False)
    mass: int = 0

    @property
    def key(self) -> tuple[int, int]:
        return (self.epoch_index, self.topic_id)

    @property
    def label(self) -> str:
        return f"e{self.epoch_index}:t{self.topic_id}"


@dataclass(frozen=True)
class Edge:
    source: tuple[int, int]
    target: tuple[int, int]
    weight: float


@dataclass
class EvolutionGraph:
    epochs: list[int]
    nodes: list[TopicNode]
    edges: list[Edge]
    tau_prune: float
    method: str = "weighted"

    def out_edges(self) -> dict[tuple[int, int], list[Edge]]:
        out = {n.key: [] for n in self.nodes}
        for e in self.edges:
            out[e.source].append(e)
        return out

    def in_edges(self) -> dict[tuple[int, int], list[Edge]]:
        inc = {n.key: [] for n in self.nodes}
        for e in self.edges:
            inc[e.target].append(e)
        return inc


@dataclass(frozen=True)
class EvolutionEvent:
    kind: str
    epoch_index: int
    subject: tuple[int, int]
    related: tuple[tuple[int, int], ...] = ()

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "epoch": self.epoch_index,
            "subject": _label(self.subject),
            "related": [_label(r) for r in self.related],
        }


def _label(key: tuple[int, int]) -> str:
    return f"e{key[0]}:t{key[1]}"


def build_graph(
    epoch_topics: Sequence[Sequence[Topic | TopicNode]],
    tau: float = 0.5,
    epoch_indices: Sequence[int] | None = None,
    method: str = "weighted",
    top_k: int = 20,
) -> EvolutionGraph:
    """Link topics in consecutive epochs whose similarity is at least ``tau``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if epoch_indices is None:
        epoch_indices = list(range(len(epoch_topics)))
    if len(epoch_indices) != len(epoch_topics):
        raise ValueError("one epoch index per topic list required")
    if list(epoch_indices) != sorted(set(epoch_indices)):
        raise ValueError("epochs must be given in chronological order")
    layers: list[list[TopicNode]] = []
    for e, topics in zip(epoch_indices, epoch_topics):
        layer = []
        for tp in topics:
            if isinstance(tp, TopicNode):
                layer.append(TopicNode(e, tp.topic_id, tp.phi, tp.mass))
            else:
                layer.append(TopicNode(e, tp.topic_id, np.asarray(tp.phi, dtype=float), tp.mass))
        if len({n.topic_id for n in layer}) != len(layer):
            raise ValueError(f"duplicate topic ids in epoch {e}")
        layers.append(layer)
    edges = []
    for prev, nxt in zip(layers, layers[1:]):
        for a in prev:
            for b in nxt:
                w = topic_similarity(a.phi, b.phi, method, top_k)
                if w >= tau:
                    edges.append(Edge(a.key, b.key, w))
    nodes = [n for layer in layers for n in layer]
    return EvolutionGraph(list(epoch_indices), nodes, edges, tau, method)


def classify_events(graph: EvolutionGraph) -> list[EvolutionEvent]:
    """Birth/death/split/merge events; a node may take part in several.

    Nodes of the first epoch are never births and nodes of the last epoch
    never deaths, as nothing is observed beyond the corpus boundaries.
    """
    if not graph.epochs:
        return []
    first, last = graph.epochs[0], graph.epochs[-1]
    out, inc = graph.out_edges(), graph.in_edges()
    events = []
    for n in graph.nodes:
        sources = tuple(sorted(e.source for e in inc[n.key]))
        targets = tuple(sorted(e.target for e in out[n.key]))
        if n.epoch_index != first and not sources:
            events.append(EvolutionEvent(BIRTH, n.epoch_index, n.key))
        if n.epoch_index != last and not targets:
            events.append(EvolutionEvent(DEATH, n.epoch_index, n.key))
        if len(targets) >= 2:
            events.append(EvolutionEvent(SPLIT, n.epoch_index, n.key, targets))
        if len(sources) >= 2:
            events.append(EvolutionEvent(MERGE, n.epoch_index, n.key, sources))
    events.sort(key=lambda ev: (ev.epoch_index, EVENT_KINDS.index(ev.kind), ev.subject))
    return events


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    topics: int
    births: int
    deaths: int
    merges: int
    splits: int

    def row(self) -> tuple[int, ...]:
        return (self.epoch, self.topics, self.births, self.deaths, self.merges, self.splits)


def epoch_stats(graph: EvolutionGraph, events: Sequence[EvolutionEvent]) -> list[EpochStats]:
    topics = {e: 0 for e in graph.epochs}
    for n in graph.nodes:
        topics[n.epoch_index] += 1
    counts = {e: dict.fromkeys(EVENT_KINDS, 0) for e in graph.epochs}
    for ev in events:
        counts[ev.epoch_index][ev.kind] += 1
    return [
        EpochStats(e, topics[e], counts[e][BIRTH], counts[e][DEATH], counts[e][MERGE], counts[e][SPLIT])
        for e in graph.epochs
    ]


def stats_csv(rows: Sequence[EpochStats]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STATS_HEADER)
    for r in rows:
        w.writerow(r.row())
    return buf.getvalue()


def graph_to_dot(graph: EvolutionGraph) -> str:
    lines = ["digraph evolution {", "  rankdir=LR;"]
    for e in graph.epochs:
        members = " ".join(f'"{n.label}";' for n in graph.nodes if n.epoch_index == e)
        lines.append(f"  subgraph cluster_e{e} {{ label=\"epoch {e}\"; {members} }}")
    for n in graph.nodes:
        lines.append(f'  "{n.label}" [label="{n.label}"];')
    for ed in graph.edges:
        lines.append(f'  "{_label(ed.source)}" -> "{_label(ed.target)}" [label="{ed.weight:.3f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_to_json(graph: EvolutionGraph, events: Sequence[EvolutionEvent]) -> dict:
    return {
        "schema": GRAPH_SCHEMA,
        "tau_prune": graph.tau_prune,
        "method": graph.method,
        "epochs": list(graph.epochs),
        "nodes": [
            {"id": n.label, "epoch": n.epoch_index, "topic_id": n.topic_id, "mass": n.mass} for n in graph.nodes
        ],
        "edges": [
            {"source": _label(e.source), "target": _label(e.target), "weight": e.weight} for e in graph.edges
        ],
        "events": [ev.to_json() for ev in events],
    }
