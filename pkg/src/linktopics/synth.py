"""Synthetic corpora with planted topics and planted temporal dynamics.

A plan names its topics (term distributions), lists the active topics
and corpus size of every epoch, and declares the dynamics that explain
changes in the active set:

    introduce  topic appears at ``epoch``
    retire     topic is absent from ``epoch`` on
    split      ``parent`` is replaced by ``children`` from ``epoch``
    merge      ``parents`` are replaced by ``child`` from ``epoch``

Each document draws topic proportions from a symmetric Dirichlet over the
epoch's active topics (low concentration, so documents are dominated by
one topic) and then its words from the planted distributions.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _io
from .corpus import BowDocument, Dictionary, slice_epochs, write_corpus
from .evolve import BIRTH, DEATH, MERGE, SPLIT, weighted_jaccard

PLAN_SCHEMA = "linktopics.synthplan/1"
TRUTH_SCHEMA = "linktopics.groundtruth/1"
DEFAULT_START = datetime(2015, 10, 1, tzinfo=timezone.utc)


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class EpochScript:
    active: tuple[str, ...]
    docs: int
    words: int


@dataclass(frozen=True)
class Dynamic:
    kind: str
    epoch: int
    topic: str | None = None
    parent: str | None = None
    children: tuple[str, ...] = ()
    parents: tuple[str, ...] = ()
    child: str | None = None

    def to_json(self) -> dict:
        out: dict = {"kind": self.kind, "epoch": self.epoch}
        if self.kind in ("introduce", "retire"):
            out["topic"] = self.topic
        elif self.kind == "split":
            out.update(parent=self.parent, children=list(self.children))
        else:
            out.update(parents=list(self.parents), child=self.child)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Dynamic":
        return cls(
            kind=obj["kind"],
            epoch=int(obj["epoch"]),
            topic=obj.get("topic"),
            parent=obj.get("parent"),
            children=tuple(obj.get("children", ())),
            parents=tuple(obj.get("parents", ())),
            child=obj.get("child"),
        )


@dataclass(frozen=True)
class TruthEvent:
    kind: str
    epoch: int
    subject: str
    related: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {"kind": self.kind, "epoch": self.epoch, "subject": self.subject, "related": list(self.related)}


@dataclass
class SynthPlan:
    V: int
    topics: dict[str, np.ndarray]
    epochs: list[EpochScript]
    dynamics: list[Dynamic] = field(default_factory=list)
    seed: int = 0
    doc_concentration: float = 0.1
    start: datetime = DEFAULT_START

    def lifetimes(self) -> dict[str, tuple[int, int]]:
        """First and last active epoch implied by the dynamics alone."""
        last = len(self.epochs) - 1
        start = {t: 0 for t in self.topics}
        end = {t: last for t in self.topics}
        for d in self.dynamics:
            if d.kind == "introduce":
                start[d.topic] = d.epoch
            elif d.kind == "retire":
                end[d.topic] = d.epoch - 1
            elif d.kind == "split":
                end[d.parent] = d.epoch - 1
                for c in d.children:
                    start[c] = d.epoch
            elif d.kind == "merge":
                for p in d.parents:
                    end[p] = d.epoch - 1
                start[d.child] = d.epoch
        return {t: (start[t], end[t]) for t in self.topics}

    def validate(self) -> None:
        if self.V < 1:
            raise PlanError("V must be positive")
        if not self.epochs:
            raise PlanError("plan has no epochs")
        for name, phi in self.topics.items():
            if phi.shape != (self.V,):
                raise PlanError(f"topic {name!r} has {phi.shape[0]} entries, expected {self.V}")
            if (phi < 0).any() or abs(phi.sum() - 1.0) > 1e-9:
                raise PlanError(f"topic {name!r} is not normalized")
        n = len(self.epochs)
        for d in self.dynamics:
            names = [d.topic, d.parent, d.child, *d.children, *d.parents]
            for t in names:
                if t is not None and t not in self.topics:
                    raise PlanError(f"{d.kind} at epoch {d.epoch} names unknown topic {t!r}")
            if d.kind not in ("introduce", "retire", "split", "merge"):
                raise PlanError(f"unknown dynamic {d.kind!r}")
            if d.kind in ("introduce", "retire") and d.topic is None:
                raise PlanError(f"{d.kind} at epoch {d.epoch} needs a topic")
            if d.kind == "split" and (d.parent is None or len(d.children) < 2):
                raise PlanError(f"split at epoch {d.epoch} needs a parent and at least two children")
            if d.kind == "merge" and (d.child is None or len(d.parents) < 2):
                raise PlanError(f"merge at epoch {d.epoch} needs a child and at least two parents")
            if not 1 <= d.epoch <= n - 1:
                raise PlanError(f"{d.kind} at epoch {d.epoch} lies outside epochs 1..{n - 1}")
        life = self.lifetimes()
        for e, script in enumerate(self.epochs):
            if script.docs < 1 or script.words < 1:
                raise PlanError(f"epoch {e} needs at least one document and one word per document")
            if not script.active:
                raise PlanError(f"epoch {e} has no active topics")
            for t in script.active:
                if t not in self.topics:
                    raise PlanError(f"epoch {e} activates unknown topic {t!r}")
                s, end = life[t]
                if e < s:
                    raise PlanError(f"topic {t!r} referenced at epoch {e} before its introduction at epoch {s}")
                if e > end:
                    raise PlanError(f"topic {t!r} referenced at epoch {e} after it ended at epoch {end}")
            for t, (s, end) in life.items():
                if s <= e <= end and t not in script.active and s <= end:
                    raise PlanError(f"topic {t!r} should be active at epoch {e} but the script omits it")

    def ground_truth(self) -> list[TruthEvent]:
        """Planted events, attached to epochs the same way the tracker attaches them."""
        out = []
        for d in self.dynamics:
            if d.kind == "introduce":
                out.append(TruthEvent(BIRTH, d.epoch, d.topic))
            elif d.kind == "retire":
                out.append(TruthEvent(DEATH, d.epoch - 1, d.topic))
            elif d.kind == "split":
                out.append(TruthEvent(SPLIT, d.epoch - 1, d.parent, tuple(sorted(d.children))))
            else:
                out.append(TruthEvent(MERGE, d.epoch, d.child, tuple(sorted(d.parents))))
        out.sort(key=lambda ev: (ev.epoch, ev.kind, ev.subject))
        return out

    def to_json(self) -> dict:
        return {
            "schema": PLAN_SCHEMA,
            "V": self.V,
            "seed": self.seed,
            "doc_concentration": self.doc_concentration,
            "start": self.start.strftime("%Y-%m-%dT%H:%M:%SZ"),
            "topics": {
                name: {str(int(v)): float(phi[v]) for v in np.flatnonzero(phi)}
                for name, phi in sorted(self.topics.items())
            },
            "epochs": [{"active": list(s.active), "docs": s.docs, "words": s.words} for s in self.epochs],
            "dynamics": [d.to_json() for d in self.dynamics],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SynthPlan":
        if obj.get("schema", PLAN_SCHEMA) != PLAN_SCHEMA:
            raise PlanError(f"unexpected plan schema {obj.get('schema')!r}")
        V = int(obj["V"])
        topics = {}
        for name, spec in obj["topics"].items():
            if isinstance(spec, list):
                phi = np.asarray(spec, dtype=float)
            else:
                phi = np.zeros(V)
                for v, w in spec.items():
                    phi[int(v)] = float(w)
            topics[name] = phi
        start = obj.get("start")
        plan = cls(
            V=V,
            topics=topics,
            epochs=[EpochScript(tuple(e["active"]), int(e["docs"]), int(e["words"])) for e in obj["epochs"]],
            dynamics=[Dynamic.from_json(d) for d in obj.get("dynamics", [])],
            seed=int(obj.get("seed", 0)),
            doc_concentration=float(obj.get("doc_concentration", 0.1)),
            start=datetime.fromisoformat(start.replace("Z", "+00:00")) if start else DEFAULT_START,
        )
        plan.validate()
        return plan

    @classmethod
    def load(cls, path: str | Path) -> "SynthPlan":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class SynthDoc:
    doc_id: str
    epoch: int
    counts: dict[int, int]
    theta: dict[str, float]

    @property
    def dominant(self) -> str:
        return max(self.theta, key=lambda t: (self.theta[t], t))


@dataclass
class SynthCorpus:
    plan: SynthPlan
    epochs: list[list[SynthDoc]]
    ground_truth: list[TruthEvent]

    def epoch_word_lists(self, e: int) -> list[list[int]]:
        return [[v for v in sorted(d.counts) for _ in range(d.counts[v])] for d in self.epochs[e]]

    def bow_documents(self) -> list[BowDocument]:
        docs = []
        for e, epoch_docs in enumerate(self.epochs):
            stamp = self.plan.start + timedelta(days=e, hours=12)
            for d in epoch_docs:
                docs.append(BowDocument(d.doc_id, d.counts, (f"tweet-{d.doc_id}",), (stamp,)))
        return docs

    def dictionary(self) -> Dictionary:
        total = sum(n for ep in self.epochs for d in ep for n in d.counts.values())
        return Dictionary(tuple(f"w{v:04d}" for v in range(self.plan.V)), 1.0, total, total)

    def write(self, out_dir: str | Path) -> None:
        """Write dictionary.json, docs.jsonl, epochs.json (one-day epochs) and ground_truth.json."""
        docs = self.bow_documents()
        day = timedelta(days=1)
        epochs = slice_epochs(docs, span=day, step=day)
        write_corpus(out_dir, self.dictionary(), docs, epochs, day, day)
        _io.write_json(
            Path(out_dir) / "ground_truth.json",
            {
                "schema": TRUTH_SCHEMA,
                "events": [ev.to_json() for ev in self.ground_truth],
                "doc_labels": {d.doc_id: d.dominant for ep in self.epochs for d in ep},
            },
        )


def generate(plan: SynthPlan) -> SynthCorpus:
    plan.validate()
    streams = np.random.SeedSequence(plan.seed).spawn(len(plan.epochs))
    epochs = []
    for e, (script, ss) in enumerate(zip(plan.epochs, streams)):
        rng = np.random.default_rng(ss)
        active = list(script.active)
        phis = np.stack([plan.topics[t] for t in active])
        docs = []
        for i in range(script.docs):
            theta = rng.dirichlet(np.full(len(active), plan.doc_concentration))
            per_topic = rng.multinomial(script.words, theta)
            counts = np.zeros(plan.V, dtype=np.int64)
            for z, n in enumerate(per_topic):
                if n:
                    counts += rng.multinomial(n, phis[z])
            docs.append(
                SynthDoc(
                    doc_id=f"e{e:02d}d{i:04d}",
                    epoch=e,
                    counts={int(v): int(counts[v]) for v in np.flatnonzero(counts)},
                    theta={t: float(w) for t, w in zip(active, theta)},
                )
            )
        epochs.append(docs)
    return SynthCorpus(plan, epochs, plan.ground_truth())


def uniform_topic(V: int, terms: Sequence[int]) -> np.ndarray:
    phi = np.zeros(V)
    phi[list(terms)] = 1.0 / len(terms)
    return phi


def near_disjoint_plan(
    n_topics: int = 3,
    V: int = 30,
    docs: int = 200,
    words: int = 50,
    leak: float = 0.03,
    seed: int = 0,
) -> SynthPlan:
    """Single-epoch plan: topic k holds 1 - ``leak`` of its mass on its own block of V/n_topics terms."""
    block = V // n_topics
    topics = {}
    for k in range(n_topics):
        own = np.zeros(V, dtype=bool)
        own[k * block:(k + 1) * block] = True
        phi = np.where(own, (1 - leak) / own.sum(), leak / (~own).sum())
        topics[f"T{k}"] = phi / phi.sum()
    return SynthPlan(V, topics, [EpochScript(tuple(sorted(topics)), docs, words)], [], seed)


def dynamics_plan(docs: int = 150, words: int = 50, seed: int = 0) -> SynthPlan:
    """Six epochs holding exactly one birth, death, two-way split and two-way merge.

    Split children share a core with the parent: parent U(Ca+Cs+Cb),
    children U(Ca+Cs+F1) and U(Cs+Cb+F2), all on 8 terms.  Parent-child
    weighted Jaccard is 0.6 and child-child 1/3, so at tau = 0.5 the
    parent links to both children while the children stay unlinked.  The
    merge mirrors this.
    """
    V = 48
    blk = iter(range(V))

    def take(n):
        return [next(blk) for _ in range(n)]

    S, D, B = take(8), take(8), take(8)
    ca, cs, cb, f1, f2 = take(2), take(4), take(2), take(2), take(2)
    ga, gs, gb, h1, h2 = take(2), take(4), take(2), take(2), take(2)
    topics = {
        "S": uniform_topic(V, S),
        "D": uniform_topic(V, D),
        "B": uniform_topic(V, B),
        "T": uniform_topic(V, ca + cs + cb),
        "T1": uniform_topic(V, ca + cs + f1),
        "T2": uniform_topic(V, cs + cb + f2),
        "P1": uniform_topic(V, ga + gs + h1),
        "P2": uniform_topic(V, gs + gb + h2),
        "M": uniform_topic(V, ga + gs + gb),
    }
    active = [
        ("S", "D", "T", "P1", "P2"),
        ("S", "D", "T", "P1", "P2"),
        ("S", "D", "T1", "T2", "P1", "P2"),
        ("S", "B", "T1", "T2", "P1", "P2"),
        ("S", "B", "T1", "T2", "M"),
        ("S", "B", "T1", "T2", "M"),
    ]
    dynamics = [
        Dynamic("split", 2, parent="T", children=("T1", "T2")),
        Dynamic("retire", 3, topic="D"),
        Dynamic("introduce", 3, topic="B"),
        Dynamic("merge", 4, parents=("P1", "P2"), child="M"),
    ]
    plan = SynthPlan(V, topics, [EpochScript(a, docs, words) for a in active], dynamics, seed)
    plan.validate()
    return plan


def match_topics(planted: dict[str, np.ndarray], recovered: Sequence) -> dict[str, tuple[int, float]]:
    """Greedy one-to-one matching by weighted Jaccard, best pair first.

    ``recovered`` holds objects with ``topic_id`` and ``phi``.  Planted
    topics left without a partner are absent from the result.
    """
    pairs = sorted(
        ((weighted_jaccard(phi, r.phi), name, r.topic_id) for name, phi in planted.items() for r in recovered),
        key=lambda x: (-x[0], x[1], x[2]),
    )
    out: dict[str, tuple[int, float]] = {}
    used: set[int] = set()
    for sim, name, tid in pairs:
        if name not in out and tid not in used:
            out[name] = (tid, sim)
            used.add(tid)
    return out
