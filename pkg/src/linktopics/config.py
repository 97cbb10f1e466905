"""Pipeline configuration: one YAML file holding every free parameter.

Relative paths are resolved against the directory of the config file.
Validation reports all problems at once rather than stopping at the first.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from datetime import timedelta
from pathlib import Path

import yaml

from .extract import DEFAULT_DROP, DEFAULT_KEEP, DEFAULT_UNWRAP
from .fetch import DEFAULT_ALLOWED_TYPES, FetchPolicy
from .hdp import HdpHyperparams
from .ingest import DEFAULT_STEMS

DEFAULTS: dict = {
    "paths": {
        "input": "tweets.jsonl",
        "cache_dir": "cache",
        "work_dir": "work",
    },
    "ingest": {
        "stems": list(DEFAULT_STEMS),
        "strict": False,
        "store_text": False,
    },
    "fetch": {
        "allowed_types": list(DEFAULT_ALLOWED_TYPES),
        "max_redirects": 10,
        "max_bytes": 5_000_000,
        "timeout_ms": 15_000,
        "min_host_interval_ms": 1_000,
        "max_concurrency": 8,
        "user_agent": "linktopics/0.1 (+research crawler)",
    },
    "extract": {
        "policy": None,
        "drop_subtree": sorted(DEFAULT_DROP),
        "unwrap": sorted(DEFAULT_UNWRAP),
        "keep": sorted(DEFAULT_KEEP),
    },
    "tokens": {
        "lowercase": True,
        "min_length": 2,
        "stopwords": None,
        "alphabetic_only": True,
    },
    "corpus": {
        "coverage": 0.9,
        "span_days": 3,
        "step_days": 1,
    },
    "hdp": {
        "gamma": 1.0,
        "alpha0": 1.0,
        "eta": 0.5,
        "sweeps": 500,
        "burn_in": 300,
        "min_mass": 10,
        "seed": 0,
    },
    "track": {
        "tau_prune": 0.5,
        "method": "weighted",
        "top_k": 20,
    },
    "report": {
        "top_terms": 50,
    },
    "synth": {
        "plan": None,
    },
}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in problems))


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return (_is_int(x) or isinstance(x, float)) and math.isfinite(x)


def _merge(base: dict, override: dict, problems: list[str], prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{prefix}{key}"
        if key not in base:
            problems.append(f"unknown key {where!r}")
        elif isinstance(base[key], dict):
            if not isinstance(val, dict):
                problems.append(f"{where!r} must be a mapping")
            else:
                out[key] = _merge(base[key], val, problems, where + ".")
        else:
            out[key] = val
    return out


def _check(cfg: dict, problems: list[str]) -> None:
    def need(cond: bool, msg: str) -> None:
        if not cond:
            problems.append(msg)

    for sec, key in (("paths", "input"), ("paths", "cache_dir"), ("paths", "work_dir")):
        need(isinstance(cfg[sec][key], str) and cfg[sec][key] != "", f"{sec}.{key} must be a non-empty path")

    ing = cfg["ingest"]
    stems = ing["stems"]
    need(
        isinstance(stems, list) and stems and all(isinstance(s, str) and s for s in stems),
        "ingest.stems must be a non-empty list of strings",
    )
    need(isinstance(ing["strict"], bool), "ingest.strict must be true or false")
    need(isinstance(ing["store_text"], bool), "ingest.store_text must be true or false")

    f = cfg["fetch"]
    types = f["allowed_types"]
    need(
        isinstance(types, list) and types and all(isinstance(t, str) for t in types),
        "fetch.allowed_types must be a non-empty list of media types",
    )
    need(_is_int(f["max_redirects"]) and f["max_redirects"] >= 0, "fetch.max_redirects must be an integer >= 0")
    for key in ("max_bytes", "timeout_ms", "max_concurrency"):
        need(_is_int(f[key]) and f[key] > 0, f"fetch.{key} must be a positive integer")
    need(
        _is_int(f["min_host_interval_ms"]) and f["min_host_interval_ms"] >= 0,
        "fetch.min_host_interval_ms must be an integer >= 0",
    )
    need(isinstance(f["user_agent"], str) and f["user_agent"], "fetch.user_agent must be a non-empty string")

    ex = cfg["extract"]
    need(ex["policy"] is None or isinstance(ex["policy"], str), "extract.policy must be a path or null")
    sets = {}
    for key in ("drop_subtree", "unwrap", "keep"):
        ok = isinstance(ex[key], list) and all(isinstance(t, str) for t in ex[key])
        need(ok, f"extract.{key} must be a list of tag names")
        if ok:
            sets[key] = {t.lower() for t in ex[key]}
    if len(sets) == 3:
        clash = (sets["drop_subtree"] & sets["unwrap"]) | (sets["drop_subtree"] & sets["keep"]) | (
            sets["unwrap"] & sets["keep"]
        )
        need(not clash, f"extract tag sets must be disjoint; shared: {sorted(clash)}")

    tk = cfg["tokens"]
    need(isinstance(tk["lowercase"], bool), "tokens.lowercase must be true or false")
    need(isinstance(tk["alphabetic_only"], bool), "tokens.alphabetic_only must be true or false")
    need(_is_int(tk["min_length"]) and tk["min_length"] >= 1, "tokens.min_length must be an integer >= 1")
    need(tk["stopwords"] is None or isinstance(tk["stopwords"], str), "tokens.stopwords must be a path or null")

    c = cfg["corpus"]
    need(_is_num(c["coverage"]) and 0 < c["coverage"] <= 1, "corpus.coverage must lie in (0, 1]")
    span_ok = _is_num(c["span_days"]) and c["span_days"] > 0
    step_ok = _is_num(c["step_days"]) and c["step_days"] > 0
    need(span_ok, "corpus.span_days must be positive")
    need(step_ok, "corpus.step_days must be positive")
    if span_ok and step_ok:
        need(c["step_days"] <= c["span_days"], "corpus.step_days must not exceed corpus.span_days")

    h = cfg["hdp"]
    for key in ("gamma", "alpha0", "eta"):
        need(_is_num(h[key]) and h[key] > 0, f"hdp.{key} must be a positive number")
    need(_is_int(h["sweeps"]) and h["sweeps"] > 0, "hdp.sweeps must be a positive integer")
    need(_is_int(h["burn_in"]) and h["burn_in"] >= 0, "hdp.burn_in must be an integer >= 0")
    if _is_int(h["sweeps"]) and _is_int(h["burn_in"]):
        need(h["burn_in"] < h["sweeps"], "hdp.burn_in must be smaller than hdp.sweeps")
    need(_is_int(h["min_mass"]) and h["min_mass"] >= 0, "hdp.min_mass must be an integer >= 0")
    need(_is_int(h["seed"]) and h["seed"] >= 0, "hdp.seed must be an integer >= 0")

    t = cfg["track"]
    need(_is_num(t["tau_prune"]) and 0 <= t["tau_prune"] <= 1, "track.tau_prune must lie in [0, 1]")
    need(t["method"] in ("weighted", "topk"), "track.method must be 'weighted' or 'topk'")
    need(_is_int(t["top_k"]) and t["top_k"] >= 1, "track.top_k must be a positive integer")

    need(_is_int(cfg["report"]["top_terms"]) and cfg["report"]["top_terms"] >= 1, "report.top_terms must be >= 1")
    need(cfg["synth"]["plan"] is None or isinstance(cfg["synth"]["plan"], str), "synth.plan must be a path or null")


@dataclass
class PipelineConfig:
    data: dict
    base_dir: Path

    @classmethod
    def from_dict(cls, obj: dict | None, base_dir: str | Path = ".") -> "PipelineConfig":
        problems: list[str] = []
        if obj is None:
            obj = {}
        if not isinstance(obj, dict):
            raise ConfigError(["top level must be a mapping"])
        data = _merge(DEFAULTS, obj, problems)
        _check(data, problems)
        if problems:
            raise ConfigError(problems)
        return cls(data, Path(base_dir))

    @classmethod
    def load(cls, path: str | Path | None) -> "PipelineConfig":
        if path is None:
            return cls.from_dict({}, Path.cwd())
        path = Path(path)
        try:
            obj = yaml.safe_load(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError([f"cannot read {path}: {exc.strerror}"]) from exc
        except yaml.YAMLError as exc:
            raise ConfigError([f"{path} is not valid YAML: {exc}"]) from exc
        return cls.from_dict(obj, path.resolve().parent)

    def __getitem__(self, section: str) -> dict:
        return self.data[section]

    def path(self, value: str) -> Path:
        p = Path(value).expanduser()
        return p if p.is_absolute() else self.base_dir / p

    @property
    def work_dir(self) -> Path:
        return self.path(self["paths"]["work_dir"])

    @property
    def cache_dir(self) -> Path:
        return self.path(self["paths"]["cache_dir"])

    @property
    def input_path(self) -> Path:
        return self.path(self["paths"]["input"])

    def fetch_policy(self) -> FetchPolicy:
        f = self["fetch"]
        return FetchPolicy(
            allowed_types=tuple(f["allowed_types"]),
            max_redirects=f["max_redirects"],
            max_bytes=f["max_bytes"],
            timeout_ms=f["timeout_ms"],
            min_host_interval_ms=f["min_host_interval_ms"],
            max_concurrency=f["max_concurrency"],
            user_agent=f["user_agent"],
        )

    def hyperparams(self) -> HdpHyperparams:
        h = self["hdp"]
        return HdpHyperparams(gamma=float(h["gamma"]), alpha0=float(h["alpha0"]), eta=float(h["eta"]))

    @property
    def span(self) -> timedelta:
        return timedelta(days=self["corpus"]["span_days"])

    @property
    def step(self) -> timedelta:
        return timedelta(days=self["corpus"]["step_days"])

    def content(self) -> dict:
        """Everything except filesystem locations, which do not affect results."""
        return {k: v for k, v in self.data.items() if k != "paths"}

    def digest(self) -> str:
        blob = json.dumps(self.content(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=False)
