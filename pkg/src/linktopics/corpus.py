"""Tokenization, dictionary construction, bag-of-words documents and epoch slicing.

Web pages are the modelling unit.  Each page keeps the ids and timestamps
of every tweet linking to it, which is how it is placed in time and how
tweets later inherit topics.
"""
from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from sklearn.feature_extraction.text import ENGLISH_STOP_WORDS

from . import _io
from .ingest import format_timestamp, parse_timestamp

DICTIONARY_SCHEMA = "linktopics.dictionary/1"
DOCS_SCHEMA = "linktopics.docs/1"
EPOCHS_SCHEMA = "linktopics.epochs/1"

_ALPHA_RE = re.compile(r"[^\W\d_]+", re.UNICODE)
_WORD_RE = re.compile(r"\w+", re.UNICODE)


def load_stopwords(path: str | Path) -> frozenset[str]:
    """One word per line; blank lines and ``#`` comments ignored."""
    words = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            words.add(line)
    return frozenset(words)


@dataclass(frozen=True)
class TokenRules:
    lowercase: bool = True
    min_length: int = 2
    stopwords: frozenset[str] = frozenset(ENGLISH_STOP_WORDS)
    alphabetic_only: bool = True


DEFAULT_RULES = TokenRules()


def tokenize(text: str, rules: TokenRules = DEFAULT_RULES) -> list[str]:
    if rules.lowercase:
        text = text.lower()
    pattern = _ALPHA_RE if rules.alphabetic_only else _WORD_RE
    stop = rules.stopwords
    return [t for t in pattern.findall(text) if len(t) >= rules.min_length and t not in stop]


def count_tokens(texts: Iterable[str], rules: TokenRules = DEFAULT_RULES) -> Counter:
    counts: Counter = Counter()
    for text in texts:
        counts.update(tokenize(text, rules))
    return counts


def coverage_threshold(coverage: float, total: int) -> Fraction:
    # decimal reading of the float, so 0.9 * 10 is exactly 9
    return Fraction(str(coverage)) * total


@dataclass(frozen=True)
class Dictionary:
    terms: tuple[str, ...]
    coverage: float
    total_tokens: int = 0
    covered_tokens: int = 0
    index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.terms)})
        if len(self.index) != len(self.terms):
            raise ValueError("dictionary terms must be unique")

    def __len__(self) -> int:
        return len(self.terms)

    def to_json(self) -> dict:
        return {
            "schema": DICTIONARY_SCHEMA,
            "coverage": self.coverage,
            "total_tokens": self.total_tokens,
            "covered_tokens": self.covered_tokens,
            "terms": list(self.terms),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Dictionary":
        if obj.get("schema") != DICTIONARY_SCHEMA:
            raise ValueError(f"unexpected dictionary schema {obj.get('schema')!r}")
        return cls(tuple(obj["terms"]), obj["coverage"], obj.get("total_tokens", 0), obj.get("covered_tokens", 0))


def rank_terms(token_counts: Mapping[str, int]) -> list[tuple[str, int]]:
    """Descending frequency, ties broken lexicographically."""
    return sorted(token_counts.items(), key=lambda kv: (-kv[1], kv[0]))


def build_dictionary(token_counts: Mapping[str, int], coverage: float = 0.9) -> Dictionary:
    """Shortest frequency-ranked prefix whose cumulative count reaches ``coverage`` of all tokens."""
    if not 0 < coverage <= 1:
        raise ValueError(f"coverage must lie in (0, 1], got {coverage}")
    ranked = [(t, c) for t, c in rank_terms(token_counts) if c > 0]
    if not ranked:
        raise ValueError("cannot build a dictionary from empty counts")
    total = sum(c for _, c in ranked)
    need = coverage_threshold(coverage, total)
    cum = 0
    for n, (_, c) in enumerate(ranked, 1):
        cum += c
        if cum >= need:
            break
    return Dictionary(tuple(t for t, _ in ranked[:n]), coverage, total, cum)


@dataclass(frozen=True)
class WebDocument:
    doc_id: str
    text: str
    linked_tweet_ids: tuple[str, ...]
    timestamps: tuple[datetime, ...]
    url: str = ""

    def __post_init__(self):
        if not self.linked_tweet_ids:
            raise ValueError(f"document {self.doc_id} has no linking tweets")
        if len(set(self.linked_tweet_ids)) != len(self.linked_tweet_ids):
            raise ValueError(f"document {self.doc_id} lists a tweet twice")
        if len(self.timestamps) != len(self.linked_tweet_ids):
            raise ValueError(f"document {self.doc_id}: one timestamp per linking tweet required")


def doc_id_for_url(canonical_url: str) -> str:
    return hashlib.sha256(canonical_url.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class BowDocument:
    doc_id: str
    counts: Mapping[int, int]
    linked_tweet_ids: tuple[str, ...] = ()
    timestamps: tuple[datetime, ...] = ()

    @property
    def N(self) -> int:
        return sum(self.counts.values())

    @property
    def empty(self) -> bool:
        return not self.counts

    def words(self) -> list[int]:
        """Expand counts into a word sequence ordered by term index."""
        out: list[int] = []
        for v in sorted(self.counts):
            out.extend([v] * self.counts[v])
        return out

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "counts": {str(k): self.counts[k] for k in sorted(self.counts)},
            "linked_tweet_ids": list(self.linked_tweet_ids),
            "timestamps": [format_timestamp(t) for t in self.timestamps],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BowDocument":
        return cls(
            doc_id=obj["doc_id"],
            counts={int(k): int(v) for k, v in obj["counts"].items()},
            linked_tweet_ids=tuple(obj.get("linked_tweet_ids", ())),
            timestamps=tuple(parse_timestamp(t) for t in obj.get("timestamps", ())),
        )


def to_bow(doc: WebDocument, dictionary: Dictionary, rules: TokenRules = DEFAULT_RULES) -> BowDocument:
    """Count in-dictionary tokens. A result with no counts is flagged empty (``.empty``)."""
    if len(dictionary) == 0:
        raise ValueError("dictionary is empty")
    index = dictionary.index
    counts = Counter(index[t] for t in tokenize(doc.text, rules) if t in index)
    return BowDocument(doc.doc_id, dict(sorted(counts.items())), doc.linked_tweet_ids, doc.timestamps)


@dataclass(frozen=True)
class EpochSlice:
    epoch_index: int
    start: datetime
    end: datetime
    doc_ids: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch_index,
            "start": format_timestamp(self.start),
            "end": format_timestamp(self.end),
            "doc_ids": list(self.doc_ids),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EpochSlice":
        return cls(obj["epoch"], parse_timestamp(obj["start"]), parse_timestamp(obj["end"]), tuple(obj["doc_ids"]))


def _micros(td: timedelta) -> int:
    return (td.days * 86_400 + td.seconds) * 1_000_000 + td.microseconds


def epoch_anchor(first: datetime) -> datetime:
    first = first.astimezone(timezone.utc)
    return datetime(first.year, first.month, first.day, tzinfo=timezone.utc)


def epochs_containing(t: datetime, anchor: datetime, span: timedelta, step: timedelta) -> range:
    """Indices k >= 0 with anchor + k*step <= t < anchor + k*step + span."""
    d = _micros(t - anchor)
    sp, st = _micros(span), _micros(step)
    lo = max(0, (d - sp) // st + 1)
    hi = d // st
    return range(lo, hi + 1)


def slice_epochs(
    docs: Sequence[WebDocument | BowDocument],
    span: timedelta = timedelta(days=3),
    step: timedelta = timedelta(days=1),
) -> list[EpochSlice]:
    """Overlapping epochs anchored at UTC midnight of the earliest timestamp.

    A document joins every epoch whose interval holds any of its timestamps.
    """
    if span <= timedelta(0) or not timedelta(0) < step <= span:
        raise ValueError("need span > 0 and 0 < step <= span")
    stamps = [t for d in docs for t in d.timestamps]
    if not stamps:
        raise ValueError("no timestamped documents to slice")
    anchor = epoch_anchor(min(stamps))
    last = _micros(max(stamps) - anchor) // _micros(step)
    members: list[list[str]] = [[] for _ in range(last + 1)]
    for d in docs:
        ks = sorted({k for t in d.timestamps for k in epochs_containing(t, anchor, span, step)})
        for k in ks:
            members[k].append(d.doc_id)
    return [
        EpochSlice(k, anchor + k * step, anchor + k * step + span, tuple(ids)) for k, ids in enumerate(members)
    ]


def propagate_topics(
    doc_mixtures: Mapping[str, Mapping[str, float]],
    links: Mapping[str, Sequence[str]],
) -> tuple[dict[str, dict[str, float]], list[str]]:
    """Give each tweet the uniform average of its linked documents' topic mixtures.

    Documents without a mixture are ignored; tweets left with none are
    returned in the second element instead of the mapping.
    """
    out: dict[str, dict[str, float]] = {}
    unmapped: list[str] = []
    for tweet_id, doc_ids in links.items():
        modeled = [doc_mixtures[d] for d in dict.fromkeys(doc_ids) if d in doc_mixtures]
        if not modeled:
            unmapped.append(tweet_id)
            continue
        acc: dict[str, float] = {}
        for mix in modeled:
            for topic, w in mix.items():
                acc[topic] = acc.get(topic, 0.0) + w
        total = sum(acc.values())
        out[tweet_id] = {k: acc[k] / total for k in sorted(acc)}
    return out, unmapped


def write_corpus(
    out_dir: str | Path,
    dictionary: Dictionary,
    docs: Sequence[BowDocument],
    epochs: Sequence[EpochSlice],
    span: timedelta,
    step: timedelta,
) -> None:
    out_dir = Path(out_dir)
    _io.write_json(out_dir / "dictionary.json", dictionary.to_json())
    _io.write_jsonl(out_dir / "docs.jsonl", [{"schema": DOCS_SCHEMA, **d.to_json()} for d in docs])
    _io.write_json(
        out_dir / "epochs.json",
        {
            "schema": EPOCHS_SCHEMA,
            "span_seconds": int(span.total_seconds()),
            "step_seconds": int(step.total_seconds()),
            "epochs": [e.to_json() for e in epochs],
        },
    )


def read_dictionary(path: str | Path) -> Dictionary:
    return Dictionary.from_json(_io.read_json(path))


def read_docs(path: str | Path) -> list[BowDocument]:
    rows = _io.read_jsonl(path)
    for r in rows:
        if r.get("schema") != DOCS_SCHEMA:
            raise ValueError(f"{path}: unexpected docs schema {r.get('schema')!r}")
    return [BowDocument.from_json(r) for r in rows]


def read_epochs(path: str | Path) -> list[EpochSlice]:
    obj = _io.read_json(path)
    if obj.get("schema") != EPOCHS_SCHEMA:
        raise ValueError(f"{path}: unexpected epochs schema {obj.get('schema')!r}")
    return [EpochSlice.from_json(e) for e in obj["epochs"]]
