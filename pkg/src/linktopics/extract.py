"""Main-text extraction from HTML by tag policy.

Subtrees under ``drop_subtree`` tags are discarded, ``unwrap`` tags are
replaced by their children, and when any ``keep`` element survives the
drops only the text of keep elements is returned.  Pages with no keep
element fall back to the whole body.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from xml.etree.ElementTree import Element

import html5lib

log = logging.getLogger(__name__)

DEFAULT_DROP = frozenset(
    {"comment", "meta", "header", "menu", "rss", "sponsor", "script", "style", "nav", "footer", "aside"}
)
DEFAULT_UNWRAP = frozenset({"font", "div", "p", "span", "b", "i", "em", "strong", "a"})
DEFAULT_KEEP = frozenset({"main", "article", "blog"})

# Elements whose boundaries separate words.  Inline tags (b, span, a, ...) do not.
BLOCK_TAGS = frozenset(
    {
        "address", "article", "aside", "blockquote", "blog", "body", "br", "caption", "dd", "details",
        "dialog", "div", "dl", "dt", "fieldset", "figcaption", "figure", "footer", "form", "h1", "h2",
        "h3", "h4", "h5", "h6", "header", "hr", "html", "li", "main", "menu", "nav", "ol", "p", "pre",
        "section", "summary", "table", "tbody", "td", "tfoot", "th", "thead", "tr", "ul",
    }
)

MAX_DEPTH = 512

_WS_RE = re.compile(r"\s+")
_MARKUP_RE = re.compile(r"<(?=[^\W\d_])")


class ExtractionError(ValueError):
    pass


@dataclass(frozen=True)
class TagPolicy:
    drop_subtree: frozenset[str] = DEFAULT_DROP
    unwrap: frozenset[str] = DEFAULT_UNWRAP
    keep: frozenset[str] = DEFAULT_KEEP

    def __post_init__(self):
        for name in ("drop_subtree", "unwrap", "keep"):
            object.__setattr__(self, name, frozenset(t.lower() for t in getattr(self, name)))
        clash = (self.drop_subtree & self.unwrap) | (self.drop_subtree & self.keep) | (self.unwrap & self.keep)
        if clash:
            raise ValueError(f"tag sets must be disjoint; shared: {sorted(clash)}")

    @classmethod
    def from_json(cls, obj: dict) -> "TagPolicy":
        return cls(
            drop_subtree=frozenset(obj.get("drop_subtree", DEFAULT_DROP)),
            unwrap=frozenset(obj.get("unwrap", DEFAULT_UNWRAP)),
            keep=frozenset(obj.get("keep", DEFAULT_KEEP)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "TagPolicy":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_json(self) -> dict:
        return {
            "drop_subtree": sorted(self.drop_subtree),
            "unwrap": sorted(self.unwrap),
            "keep": sorted(self.keep),
        }


DEFAULT_POLICY = TagPolicy()


def normalize_whitespace(text: str) -> str:
    return _WS_RE.sub(" ", text).strip()


def _tag(el: Element) -> str | None:
    # comments and processing instructions carry a callable tag in ElementTree
    return el.tag.lower() if isinstance(el.tag, str) else None


def _collect(root: Element, policy: TagPolicy, max_depth: int, keep_mode: bool) -> list[str]:
    """Walk ``root`` without recursion, emitting text pieces.

    In keep mode only text under keep elements is emitted, and each keep
    subtree is closed with a separator.
    """
    out: list[str] = []
    # stack items: ("open", element, depth, inside_keep) or ("text", str, inside_keep)
    stack: list[tuple] = [("open", root, 0, False)]
    while stack:
        item = stack.pop()
        if item[0] == "text":
            _, text, emit = item
            if emit:
                out.append(text)
            continue
        _, el, depth, inside_keep = item
        if depth > max_depth:
            raise ExtractionError(f"nesting deeper than {max_depth} elements")
        tag = _tag(el)
        if tag is None or tag in policy.drop_subtree:
            continue
        is_keep = tag in policy.keep
        here = inside_keep or is_keep
        emit = here or not keep_mode
        sep = " " if (tag in BLOCK_TAGS or is_keep) else ""
        # pushed in reverse so they pop in document order
        stack.append(("text", sep, emit))
        for child in reversed(list(el)):
            if child.tail:
                stack.append(("text", child.tail, emit))
            stack.append(("open", child, depth + 1, here))
        if el.text and isinstance(el.tag, str):
            stack.append(("text", el.text, emit))
        stack.append(("text", sep, emit))
    return out


def _has_surviving_keep(root: Element, policy: TagPolicy) -> bool:
    stack = [root]
    while stack:
        el = stack.pop()
        tag = _tag(el)
        if tag is None or tag in policy.drop_subtree:
            continue
        if tag in policy.keep:
            return True
        stack.extend(el)
    return False


def _parse_body(html: bytes | str) -> Element | None:
    if isinstance(html, bytes):
        html = html.decode("utf-8", errors="replace")
    if not html.strip():
        return None
    doc = html5lib.parse(html, treebuilder="etree", namespaceHTMLElements=False)
    return doc.find("body")


def uses_keep_mode(html: bytes | str, policy: TagPolicy = DEFAULT_POLICY) -> bool:
    """True when some keep element survives dropping, so only keep subtrees are emitted."""
    body = _parse_body(html)
    return body is not None and _has_surviving_keep(body, policy)


def extract_main_text(html: bytes | str, policy: TagPolicy = DEFAULT_POLICY, max_depth: int = MAX_DEPTH) -> str:
    """Return whitespace-normalized main text of an HTML document."""
    body = _parse_body(html)
    if body is None:
        log.debug("empty document")
        return ""
    keep_mode = _has_surviving_keep(body, policy)
    text = normalize_whitespace("".join(_collect(body, policy, max_depth, keep_mode)))
    # entity-decoded text such as "&lt;b" must not read as markup
    return _MARKUP_RE.sub("< ", text)
