"""URL resolution and page download with content-type gating and an on-disk cache.

The cache is content addressed: bodies live under ``bodies/<sha[:2]>/<sha>``
and ``manifest.jsonl`` holds one JSON object per cached request.  Entries
are keyed by the canonical requested URL with a secondary index on the
canonical final URL, so several shorteners resolving to one page share a
single body and no second download is issued for it.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable
from urllib.parse import urljoin, urlsplit, urlunsplit

import requests
from filelock import FileLock

from .ingest import format_timestamp, parse_timestamp

log = logging.getLogger(__name__)

DEFAULT_ALLOWED_TYPES = ("text/html", "application/xhtml+xml")
REDIRECT_CODES = frozenset({301, 302, 303, 307, 308})
_DEFAULT_PORTS = {"http": 80, "https": 443}


class InvalidURL(ValueError):
    def __init__(self, url: str, why: str = "not an absolute URL"):
        super().__init__(f"{url!r}: {why}")
        self.url = url


class FetchError(Exception):
    def __init__(self, url: str, message: str):
        super().__init__(f"{url}: {message}")
        self.url = url


class NetworkError(FetchError):
    pass


class FetchTimeout(FetchError):
    pass


class RedirectError(FetchError):
    pass


class RedirectLoop(RedirectError):
    pass


class TooManyRedirects(RedirectError):
    pass


class BodyTooLarge(FetchError):
    pass


class OfflineCacheMiss(FetchError):
    pass


def canonicalize_url(url: str) -> str:
    """Lowercase scheme and host, drop the fragment and any default port.

    Path and query are left byte-for-byte as given.
    """
    if not isinstance(url, str):
        raise InvalidURL(repr(url))
    try:
        parts = urlsplit(url.strip())
        port = parts.port
    except ValueError as exc:
        raise InvalidURL(url, str(exc)) from exc
    if not parts.scheme or not parts.netloc or not parts.hostname:
        raise InvalidURL(url)
    scheme = parts.scheme.lower()
    host = parts.hostname.lower()
    if ":" in host:
        host = f"[{host}]"
    netloc = host
    if port is not None and _DEFAULT_PORTS.get(scheme) != port:
        netloc = f"{host}:{port}"
    userinfo, sep, _ = parts.netloc.rpartition("@")
    if sep:
        netloc = f"{userinfo}@{netloc}"
    return urlunsplit((scheme, netloc, parts.path, parts.query, ""))


def media_type(content_type: str | None) -> str:
    if not content_type:
        return ""
    return content_type.split(";", 1)[0].strip().lower()


@dataclass(frozen=True)
class FetchPolicy:
    allowed_types: tuple[str, ...] = DEFAULT_ALLOWED_TYPES
    max_redirects: int = 10
    max_bytes: int = 5_000_000
    timeout_ms: int = 15_000
    min_host_interval_ms: int = 1_000
    max_concurrency: int = 8
    user_agent: str = "linktopics/0.1 (+research crawler)"

    def allows(self, content_type: str) -> bool:
        return media_type(content_type) in {t.lower() for t in self.allowed_types}


@dataclass(frozen=True)
class FetchResult:
    requested_url: str
    final_url: str
    status: int
    content_type: str
    body: bytes
    fetched_at: datetime
    reason: str = ""

    @property
    def accepted(self) -> bool:
        return bool(self.body)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class FetchCache:
    """Replayable fetch cache. Safe for concurrent writers; the first writer of a key wins."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "bodies").mkdir(parents=True, exist_ok=True)
        self.manifest = self.root / "manifest.jsonl"
        self.manifest.touch(exist_ok=True)
        self._flock = FileLock(str(self.root / ".manifest.lock"))
        self._lock = threading.Lock()
        self._entries: dict[str, dict] = {}
        self._by_final: dict[str, dict] = {}
        self._offset = 0
        with self._lock:
            self._refresh()

    def _refresh(self) -> None:
        with open(self.manifest, "rb") as fh:
            fh.seek(self._offset)
            chunk = fh.read()
        # only consume complete lines; a concurrent writer may be mid-append
        end = chunk.rfind(b"\n") + 1
        for line in chunk[:end].splitlines():
            if line.strip():
                self._index(json.loads(line))
        self._offset += end

    def _index(self, entry: dict) -> None:
        self._entries.setdefault(entry["requested_url"], entry)
        if entry.get("body_file"):
            self._by_final.setdefault(entry["final_url"], entry)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, url: str) -> bool:
        return url in self._entries

    def keys(self) -> list[str]:
        return list(self._entries)

    def _load(self, entry: dict, requested_url: str | None = None) -> FetchResult:
        body = b""
        if entry.get("body_file"):
            body = (self.root / entry["body_file"]).read_bytes()
        return FetchResult(
            requested_url=requested_url or entry["requested_url"],
            final_url=entry["final_url"],
            status=entry["status"],
            content_type=entry["content_type"],
            body=body,
            fetched_at=parse_timestamp(entry["fetched_at"]),
            reason=entry.get("reason", ""),
        )

    def get(self, requested_url: str) -> FetchResult | None:
        entry = self._entries.get(requested_url)
        return None if entry is None else self._load(entry)

    def get_final(self, final_url: str, requested_url: str | None = None) -> FetchResult | None:
        entry = self._by_final.get(final_url)
        return None if entry is None else self._load(entry, requested_url)

    def put(self, result: FetchResult) -> bool:
        """Persist ``result``; returns False (and writes nothing) if its key is already cached."""
        with self._lock, self._flock:
            self._refresh()
            if result.requested_url in self._entries:
                return False
            body_file = None
            if result.body:
                digest = _sha256(result.body)
                rel = Path("bodies") / digest[:2] / digest
                path = self.root / rel
                if not path.exists():
                    path.parent.mkdir(parents=True, exist_ok=True)
                    tmp = path.with_suffix(f".tmp{os.getpid()}.{threading.get_ident()}")
                    tmp.write_bytes(result.body)
                    os.replace(tmp, path)
                body_file = rel.as_posix()
            entry = {
                "requested_url": result.requested_url,
                "final_url": result.final_url,
                "status": result.status,
                "content_type": result.content_type,
                "body_file": body_file,
                "fetched_at": format_timestamp(result.fetched_at),
                "reason": result.reason,
            }
            line = (json.dumps(entry, sort_keys=True) + "\n").encode("utf-8")
            with open(self.manifest, "ab") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())
            self._offset += len(line)
            self._index(entry)
            return True


class _HostThrottle:
    """Per-host serialization with a minimum spacing between request starts."""

    def __init__(self, min_interval_s: float):
        self.min_interval = min_interval_s
        self._locks: dict[str, threading.Lock] = {}
        self._last: dict[str, float] = {}
        self._guard = threading.Lock()

    def lock_for(self, host: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(host, threading.Lock())

    def wait(self, host: str) -> None:
        last = self._last.get(host)
        if last is not None:
            delay = self.min_interval - (time.monotonic() - last)
            if delay > 0:
                time.sleep(delay)
        self._last[host] = time.monotonic()


class Fetcher:
    def __init__(
        self,
        policy: FetchPolicy | None = None,
        cache: FetchCache | None = None,
        offline: bool = False,
        session_factory=requests.Session,
    ):
        self.policy = policy or FetchPolicy()
        self.cache = cache
        self.offline = offline
        self.network_requests = 0
        self._session_factory = session_factory
        self._local = threading.local()
        self._throttle = _HostThrottle(self.policy.min_host_interval_ms / 1000.0)
        self._count_lock = threading.Lock()

    def _session(self) -> requests.Session:
        s = getattr(self._local, "session", None)
        if s is None:
            s = self._local.session = self._session_factory()
            s.headers["User-Agent"] = self.policy.user_agent
        return s

    def fetch(self, url: str) -> FetchResult:
        requested = canonicalize_url(url)
        if self.cache is not None:
            hit = self.cache.get(requested)
            if hit is not None:
                return hit
            hit = self.cache.get_final(requested, requested_url=requested)
            if hit is not None:
                self.cache.put(hit)
                return hit
        if self.offline:
            raise OfflineCacheMiss(requested, "not in cache and offline mode is on")
        result = self._download(requested)
        if self.cache is not None and not self.cache.put(result):
            # a concurrent writer got there first; serve its copy
            return self.cache.get(requested)
        return result

    def _request(self, url: str) -> requests.Response:
        host = urlsplit(url).netloc
        timeout = self.policy.timeout_ms / 1000.0
        with self._throttle.lock_for(host):
            self._throttle.wait(host)
            with self._count_lock:
                self.network_requests += 1
            try:
                return self._session().get(url, allow_redirects=False, stream=True, timeout=timeout)
            except requests.Timeout as exc:
                raise FetchTimeout(url, f"timed out after {self.policy.timeout_ms} ms") from exc
            except requests.RequestException as exc:
                raise NetworkError(url, str(exc)) from exc

    def _download(self, requested: str) -> FetchResult:
        policy = self.policy
        current = requested
        visited = {current}
        hops = 0
        while True:
            resp = self._request(current)
            location = resp.headers.get("Location")
            if resp.status_code in REDIRECT_CODES and location:
                resp.close()
                nxt = canonicalize_url(urljoin(current, location))
                if nxt in visited:
                    raise RedirectLoop(requested, f"redirect loop at {nxt}")
                hops += 1
                if hops > policy.max_redirects:
                    raise TooManyRedirects(requested, f"more than {policy.max_redirects} redirects")
                visited.add(nxt)
                current = nxt
                if self.cache is not None:
                    hit = self.cache.get_final(current, requested_url=requested)
                    if hit is not None:
                        return hit
                continue
            break

        now = datetime.now(timezone.utc).replace(microsecond=0)
        ctype = media_type(resp.headers.get("Content-Type"))
        status = resp.status_code
        if not 200 <= status < 300:
            resp.close()
            return FetchResult(requested, current, status, ctype, b"", now, reason=f"status {status}")
        if not policy.allows(ctype):
            resp.close()
            return FetchResult(requested, current, status, ctype, b"", now, reason=f"content-type {ctype or 'missing'}")
        try:
            chunks = []
            size = 0
            for chunk in resp.iter_content(chunk_size=65536):
                size += len(chunk)
                if size > policy.max_bytes:
                    raise BodyTooLarge(requested, f"body exceeds {policy.max_bytes} bytes")
                chunks.append(chunk)
        except requests.Timeout as exc:
            raise FetchTimeout(requested, "timed out reading body") from exc
        except requests.RequestException as exc:
            raise NetworkError(requested, str(exc)) from exc
        finally:
            resp.close()
        body = b"".join(chunks)
        reason = "" if body else "empty body"
        return FetchResult(requested, current, status, ctype, body, now, reason=reason)

    def fetch_many(self, urls: Iterable[str], jobs: int = 1) -> dict[str, FetchResult | FetchError | InvalidURL]:
        """Fetch several URLs; failures are returned in place of results rather than raised."""
        urls = list(dict.fromkeys(urls))

        def one(u: str):
            try:
                return self.fetch(u)
            except (FetchError, InvalidURL) as exc:
                log.warning("fetch failed: %s", exc)
                return exc

        workers = max(1, min(jobs, self.policy.max_concurrency))
        if workers == 1:
            return {u: one(u) for u in urls}
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return dict(zip(urls, pool.map(one, urls)))


def fetch_page(
    url: str,
    policy: FetchPolicy | None = None,
    cache: FetchCache | None = None,
    offline: bool = False,
) -> FetchResult:
    return Fetcher(policy, cache, offline=offline).fetch(url)


def without_timestamp(result: FetchResult) -> FetchResult:
    return replace(result, fetched_at=datetime(1970, 1, 1, tzinfo=timezone.utc))
