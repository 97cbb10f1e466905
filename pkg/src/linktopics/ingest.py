"""Tweet ingestion from newline-delimited JSON exports.

Accepts the public tweet JSON shape (``id_str``, ``text``, ``created_at``,
``entities.urls[].expanded_url``) and a flattened shape with top-level
``urls`` / ``hashtags`` lists used by synthetic fixtures.
"""
from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence
from urllib.parse import urlsplit

log = logging.getLogger(__name__)

DEFAULT_STEMS = ("autism", "adhd", "asperger", "aspie")

TWITTER_TIME_FORMAT = "%a %b %d %H:%M:%S %z %Y"

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)
_HASHTAG_RE = re.compile(r"#(\w+)", re.UNICODE)


class IngestError(Exception):
    """Raised for unreadable input, or malformed lines in strict mode."""


@dataclass(frozen=True)
class TweetRecord:
    tweet_id: str
    text: str
    created_at: datetime
    urls: tuple[str, ...] = ()
    hashtags: tuple[str, ...] = ()
    author_id: str = ""

    def to_json(self, include_text: bool = False) -> dict:
        out = {
            "tweet_id": self.tweet_id,
            "created_at": format_timestamp(self.created_at),
            "urls": list(self.urls),
            "hashtags": list(self.hashtags),
            "author_id": self.author_id,
        }
        if include_text:
            out["text"] = self.text
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "TweetRecord":
        return cls(
            tweet_id=str(obj["tweet_id"]),
            text=obj.get("text", ""),
            created_at=parse_timestamp(obj["created_at"]),
            urls=tuple(obj.get("urls", ())),
            hashtags=tuple(obj.get("hashtags", ())),
            author_id=str(obj.get("author_id", "")),
        )


@dataclass
class IngestReport:
    lines_read: int = 0
    parsed: int = 0
    skipped: int = 0
    duplicates: int = 0
    urls_dropped: int = 0
    errors: list[str] = field(default_factory=list)

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.lines_read, self.parsed, self.skipped)

    def summary(self) -> str:
        return (
            f"lines read: {self.lines_read}\n"
            f"parsed:     {self.parsed}\n"
            f"skipped:    {self.skipped} (duplicates: {self.duplicates})\n"
            f"urls dropped as invalid: {self.urls_dropped}\n"
        )

    def to_json(self) -> dict:
        return {
            "lines_read": self.lines_read,
            "parsed": self.parsed,
            "skipped": self.skipped,
            "duplicates": self.duplicates,
            "urls_dropped": self.urls_dropped,
            "errors": self.errors[:100],
        }


def parse_timestamp(value: str) -> datetime:
    """Parse a classic Twitter or ISO-8601 timestamp into an aware UTC datetime (whole seconds)."""
    value = value.strip()
    try:
        dt = datetime.strptime(value, TWITTER_TIME_FORMAT)
    except ValueError:
        iso = value[:-1] + "+00:00" if value.endswith(("Z", "z")) else value
        dt = datetime.fromisoformat(iso)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def is_absolute_url(url: str) -> bool:
    try:
        parts = urlsplit(url)
    except ValueError:
        return False
    return bool(parts.scheme) and bool(parts.netloc) and parts.scheme.isascii()


def _extract_urls(obj: dict) -> list[str]:
    entities = obj.get("entities")
    if isinstance(entities, dict) and isinstance(entities.get("urls"), list):
        urls = []
        for entry in entities["urls"]:
            if isinstance(entry, dict):
                u = entry.get("expanded_url") or entry.get("url")
                if u:
                    urls.append(u)
        return urls
    raw = obj.get("urls", [])
    if not isinstance(raw, list):
        raise ValueError("'urls' is not a list")
    return [u if isinstance(u, str) else u.get("expanded_url") or u.get("url", "") for u in raw]


def _extract_hashtags(obj: dict, text: str) -> list[str]:
    entities = obj.get("entities")
    if isinstance(entities, dict) and isinstance(entities.get("hashtags"), list):
        return [h["text"] if isinstance(h, dict) else str(h) for h in entities["hashtags"]]
    if isinstance(obj.get("hashtags"), list):
        return [str(h).lstrip("#") for h in obj["hashtags"]]
    return _HASHTAG_RE.findall(text)


def record_from_json(obj: dict) -> tuple[TweetRecord, int]:
    """Build a TweetRecord from one decoded line; returns the record and the number of invalid URLs dropped."""
    if not isinstance(obj, dict):
        raise ValueError("record is not a JSON object")
    tweet_id = obj.get("id_str") or obj.get("tweet_id") or obj.get("id")
    if tweet_id is None or str(tweet_id) == "":
        raise ValueError("missing tweet id")
    text = obj.get("full_text") or obj.get("text") or ""
    if "created_at" not in obj:
        raise ValueError("missing created_at")
    created = parse_timestamp(str(obj["created_at"]))
    urls = []
    dropped = 0
    for u in _extract_urls(obj):
        if is_absolute_url(u):
            urls.append(u)
        else:
            dropped += 1
    user = obj.get("user")
    author = obj.get("author_id") or (user.get("id_str") if isinstance(user, dict) else None) or ""
    record = TweetRecord(
        tweet_id=str(tweet_id),
        text=text,
        created_at=created,
        urls=tuple(urls),
        hashtags=tuple(_extract_hashtags(obj, text)),
        author_id=str(author),
    )
    return record, dropped


def parse_tweet_stream(path: str | Path, strict: bool = False) -> tuple[list[TweetRecord], IngestReport]:
    """Read one tweet per line. Malformed lines are skipped and counted unless ``strict``."""
    report = IngestReport()
    records: list[TweetRecord] = []
    seen: set[str] = set()
    try:
        fh = open(path, "r", encoding="utf-8", errors="strict")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    with fh:
        try:
            lines = list(fh)
        except UnicodeDecodeError as exc:
            raise IngestError(f"{path} is not valid UTF-8: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        report.lines_read += 1
        try:
            record, dropped = record_from_json(json.loads(line))
        except (ValueError, TypeError, KeyError, AttributeError) as exc:
            if strict:
                raise IngestError(f"{path}:{lineno}: malformed record: {exc}") from exc
            report.skipped += 1
            report.errors.append(f"line {lineno}: {exc}")
            continue
        if record.tweet_id in seen:
            report.skipped += 1
            report.duplicates += 1
            continue
        seen.add(record.tweet_id)
        report.urls_dropped += dropped
        report.parsed += 1
        records.append(record)
    log.info("ingested %s: %d parsed, %d skipped", path, report.parsed, report.skipped)
    return records, report


def keyword_filter(record: TweetRecord, stems: Sequence[str]) -> bool:
    """True iff some token of the lowercased text starts with one of ``stems``.

    Prefix matching accepts suffixed derivatives (``aspies`` for ``aspie``).
    """
    if not stems:
        raise ValueError("stems must be non-empty")
    prefixes = tuple(s.lower() for s in stems)
    return any(tok.startswith(prefixes) for tok in _TOKEN_RE.findall(record.text.lower()))


@dataclass
class UrlStats:
    url_histogram: dict[int, int]
    daily_tweets: dict[date, int]
    daily_urls: dict[date, int]

    def to_json(self) -> dict:
        return {
            "url_histogram": {str(k): v for k, v in sorted(self.url_histogram.items())},
            "daily_tweets": {d.isoformat(): n for d, n in sorted(self.daily_tweets.items())},
            "daily_urls": {d.isoformat(): n for d, n in sorted(self.daily_urls.items())},
        }


def url_stats(records: Iterable[TweetRecord]) -> UrlStats:
    hist: Counter[int] = Counter()
    tweets: Counter[date] = Counter()
    urls: Counter[date] = Counter()
    for r in records:
        day = r.created_at.astimezone(timezone.utc).date()
        hist[len(r.urls)] += 1
        tweets[day] += 1
        urls[day] += len(r.urls)
    return UrlStats(dict(hist), dict(tweets), dict(urls))
