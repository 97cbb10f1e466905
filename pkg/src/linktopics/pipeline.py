"""Pipeline stages over on-disk artifacts under the work directory.

    ingest   tweets.jsonl             -> ingest/tweets.jsonl
    fetch    ingest/tweets.jsonl      -> fetch/pages.jsonl (+ bodies in the cache)
    extract  fetch/pages.jsonl        -> extract/documents.jsonl
    corpus   extract/documents.jsonl  -> corpus/{dictionary.json,docs.jsonl,epochs.json}
    synth    plan                     -> corpus/ (same formats) + corpus/ground_truth.json
    train    corpus/                  -> topics/epoch_XXXX.json
    track    topics/                  -> track/{graph.json,graph.dot,stats.csv}
    report   topics/ + corpus/        -> report/wordclouds/epoch_XXXX.csv, report/tweet_topics.jsonl

Every stage writes a manifest.json next to its outputs recording the
configuration, its digest, and the sha256 of each input and output.
"""
from __future__ import annotations

import csv
import hashlib
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import _io, corpus, evolve, extract, fetch, hdp, ingest, synth
from .config import PipelineConfig

log = logging.getLogger(__name__)

STAGES = ("ingest", "fetch", "extract", "corpus", "train", "track", "report", "synth")
PAGES_SCHEMA = "linktopics.pages/1"
DOCUMENTS_SCHEMA = "linktopics.documents/1"
TWEETS_SCHEMA = "linktopics.tweets/1"
MANIFEST_SCHEMA = "linktopics.manifest/1"
CORPUS_FILES = ("dictionary.json", "docs.jsonl", "epochs.json")


class StageError(RuntimeError):
    """Runtime failure inside a stage."""


class MissingPrerequisite(StageError):
    def __init__(self, path: Path, stage: str):
        self.path = path
        self.stage = stage
        super().__init__(f"missing {path}: run {stage} first")


class InputError(ValueError):
    """Stage input present but unusable (bad schema, empty data)."""


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingPrerequisite(path, stage)
    return path


def _manifest(cfg: PipelineConfig, stage: str, out_dir: Path, inputs: list[Path], outputs: list[Path], **extra):
    work = cfg.work_dir

    def rel(p: Path) -> str:
        try:
            return p.resolve().relative_to(work.resolve()).as_posix()
        except ValueError:
            return p.name

    _io.write_json(
        out_dir / "manifest.json",
        {
            "schema": MANIFEST_SCHEMA,
            "stage": stage,
            "config": cfg.content(),
            "config_sha256": cfg.digest(),
            "inputs": {rel(p): _io.file_sha256(p) for p in sorted(inputs)},
            "outputs": {rel(p): _io.file_sha256(p) for p in sorted(outputs)},
            **extra,
        },
    )


def _check_schema(rows: list[dict], schema: str, path: Path) -> None:
    for r in rows:
        if r.get("schema") != schema:
            raise InputError(f"{path}: unexpected schema {r.get('schema')!r}, expected {schema!r}")


# ---- ingest ---------------------------------------------------------------

def stage_ingest(cfg: PipelineConfig, strict: bool | None = None) -> dict:
    src = cfg.input_path
    if not src.exists():
        raise InputError(f"tweet file {src} does not exist")
    strict = cfg["ingest"]["strict"] if strict is None else strict
    try:
        records, report = ingest.parse_tweet_stream(src, strict=strict)
    except ingest.IngestError as exc:
        raise InputError(str(exc)) from exc
    stems = cfg["ingest"]["stems"]
    kept = [r for r in records if ingest.keyword_filter(r, stems)]
    out = cfg.work_dir / "ingest"
    with_text = cfg["ingest"]["store_text"]
    tweets = out / "tweets.jsonl"
    _io.write_jsonl(tweets, [{"schema": TWEETS_SCHEMA, **r.to_json(include_text=with_text)} for r in kept])
    summary = {**report.to_json(), "matched_keywords": len(kept)}
    _io.write_json(out / "report.json", summary)
    _io.write_json(out / "url_stats.json", ingest.url_stats(kept).to_json())
    outputs = [tweets, out / "report.json", out / "url_stats.json"]
    _manifest(cfg, "ingest", out, [src], outputs)
    log.info("%s; %d matched keywords", report.summary(), len(kept))
    return summary


def _read_tweets(cfg: PipelineConfig) -> tuple[Path, list[ingest.TweetRecord]]:
    path = _require(cfg.work_dir / "ingest" / "tweets.jsonl", "ingest")
    rows = _io.read_jsonl(path)
    _check_schema(rows, TWEETS_SCHEMA, path)
    return path, [ingest.TweetRecord.from_json(r) for r in rows]


# ---- fetch ----------------------------------------------------------------

def stage_fetch(cfg: PipelineConfig, jobs: int = 1, offline: bool = False, policy: fetch.FetchPolicy | None = None):
    src, tweets = _read_tweets(cfg)
    policy = policy or cfg.fetch_policy()
    links: dict[str, list[tuple[str, str]]] = {}
    invalid = 0
    for t in tweets:
        for u in t.urls:
            try:
                canon = fetch.canonicalize_url(u)
            except fetch.InvalidURL:
                invalid += 1
                continue
            pairs = links.setdefault(canon, [])
            if all(tid != t.tweet_id for tid, _ in pairs):
                pairs.append((t.tweet_id, ingest.format_timestamp(t.created_at)))
    cache = fetch.FetchCache(cfg.cache_dir)
    fetcher = fetch.Fetcher(policy, cache, offline=offline)
    results = fetcher.fetch_many(sorted(links), jobs=jobs)
    rows = []
    counts = {"accepted": 0, "rejected": 0, "failed": 0}
    for url in sorted(links):
        res = results[url]
        pairs = sorted(links[url])
        row = {
            "schema": PAGES_SCHEMA,
            "requested_url": url,
            "tweet_ids": [p[0] for p in pairs],
            "timestamps": [p[1] for p in pairs],
        }
        if isinstance(res, fetch.FetchResult):
            row.update(
                final_url=res.final_url,
                status=res.status,
                content_type=res.content_type,
                body_sha256=hashlib.sha256(res.body).hexdigest() if res.body else None,
                reason=res.reason,
                error=None,
            )
            counts["accepted" if res.accepted else "rejected"] += 1
        else:
            row.update(
                final_url=None, status=None, content_type=None, body_sha256=None, reason="",
                error=f"{type(res).__name__}: {res}",
            )
            counts["failed"] += 1
        rows.append(row)
    out = cfg.work_dir / "fetch"
    pages = out / "pages.jsonl"
    _io.write_jsonl(pages, rows)
    summary = {**counts, "urls": len(links), "invalid_urls": invalid, "network_requests": fetcher.network_requests}
    _io.write_json(out / "report.json", {k: v for k, v in summary.items() if k != "network_requests"})
    _manifest(cfg, "fetch", out, [src], [pages, out / "report.json"], policy=_policy_json(policy))
    return summary


def _policy_json(policy: fetch.FetchPolicy) -> dict:
    return {
        "allowed_types": list(policy.allowed_types),
        "max_redirects": policy.max_redirects,
        "max_bytes": policy.max_bytes,
        "timeout_ms": policy.timeout_ms,
    }


# ---- extract --------------------------------------------------------------

def tag_policy(cfg: PipelineConfig, policy_path: str | Path | None = None) -> extract.TagPolicy:
    ex = cfg["extract"]
    path = policy_path if policy_path is not None else ex["policy"]
    if path is not None:
        p = Path(path) if policy_path is not None else cfg.path(path)
        try:
            return extract.TagPolicy.load(p)
        except OSError as exc:
            raise InputError(f"cannot read tag policy {p}: {exc.strerror}") from exc
        except ValueError as exc:
            raise InputError(f"bad tag policy {p}: {exc}") from exc
    return extract.TagPolicy(frozenset(ex["drop_subtree"]), frozenset(ex["unwrap"]), frozenset(ex["keep"]))


def stage_extract(cfg: PipelineConfig, policy_path: str | Path | None = None) -> dict:
    pages_path = _require(cfg.work_dir / "fetch" / "pages.jsonl", "fetch")
    rows = _io.read_jsonl(pages_path)
    _check_schema(rows, PAGES_SCHEMA, pages_path)
    policy = tag_policy(cfg, policy_path)
    cache = fetch.FetchCache(cfg.cache_dir)
    by_final: dict[str, dict] = {}
    failures = []
    for row in rows:
        if not row.get("body_sha256"):
            continue
        hit = cache.get(row["requested_url"])
        if hit is None or not hit.body:
            failures.append({"url": row["requested_url"], "error": "body missing from cache"})
            continue
        doc = by_final.setdefault(hit.final_url, {"links": {}, "body": hit.body})
        for tid, ts in zip(row["tweet_ids"], row["timestamps"]):
            doc["links"].setdefault(tid, ts)
    docs = []
    for final_url in sorted(by_final):
        entry = by_final[final_url]
        try:
            text = extract.extract_main_text(entry["body"], policy)
        except extract.ExtractionError as exc:
            failures.append({"url": final_url, "error": str(exc)})
            continue
        links = sorted(entry["links"].items())
        docs.append({
            "schema": DOCUMENTS_SCHEMA,
            "doc_id": corpus.doc_id_for_url(final_url),
            "url": final_url,
            "text": text,
            "linked_tweet_ids": [t for t, _ in links],
            "timestamps": [s for _, s in links],
        })
    docs.sort(key=lambda d: d["doc_id"])
    out = cfg.work_dir / "extract"
    path = out / "documents.jsonl"
    _io.write_jsonl(path, docs)
    summary = {"documents": len(docs), "failures": failures, "empty_text": sum(1 for d in docs if not d["text"])}
    _io.write_json(out / "report.json", summary)
    _manifest(cfg, "extract", out, [pages_path], [path, out / "report.json"], tag_policy=policy.to_json())
    return summary


# ---- corpus ---------------------------------------------------------------

def token_rules(cfg: PipelineConfig) -> corpus.TokenRules:
    tk = cfg["tokens"]
    rules = corpus.TokenRules(lowercase=tk["lowercase"], min_length=tk["min_length"], alphabetic_only=tk["alphabetic_only"])
    if tk["stopwords"] is not None:
        p = cfg.path(tk["stopwords"])
        try:
            rules = replace(rules, stopwords=corpus.load_stopwords(p))
        except OSError as exc:
            raise InputError(f"cannot read stop-word list {p}: {exc.strerror}") from exc
    return rules


def stage_corpus(cfg: PipelineConfig) -> dict:
    src = _require(cfg.work_dir / "extract" / "documents.jsonl", "extract")
    rows = _io.read_jsonl(src)
    _check_schema(rows, DOCUMENTS_SCHEMA, src)
    web = [
        corpus.WebDocument(
            r["doc_id"], r["text"], tuple(r["linked_tweet_ids"]),
            tuple(ingest.parse_timestamp(t) for t in r["timestamps"]), r.get("url", ""),
        )
        for r in rows
    ]
    rules = token_rules(cfg)
    counts = corpus.count_tokens((d.text for d in web), rules)
    if not counts:
        raise InputError(f"{src}: no tokens survive the token rules")
    dictionary = corpus.build_dictionary(counts, cfg["corpus"]["coverage"])
    bows = [corpus.to_bow(d, dictionary, rules) for d in web]
    kept = [b for b in bows if not b.empty]
    empty = [b.doc_id for b in bows if b.empty]
    epochs = corpus.slice_epochs(kept, cfg.span, cfg.step)
    out = cfg.work_dir / "corpus"
    corpus.write_corpus(out, dictionary, kept, epochs, cfg.span, cfg.step)
    summary = {
        "documents": len(bows),
        "modeled": len(kept),
        "flagged_empty": empty,
        "terms": len(dictionary),
        "epochs": len(epochs),
    }
    _io.write_json(out / "report.json", summary)
    _manifest(cfg, "corpus", out, [src], [out / f for f in CORPUS_FILES] + [out / "report.json"])
    return summary


# ---- synth ----------------------------------------------------------------

def bundled_plan_path() -> Path:
    return Path(str(resources.files("linktopics") / "data" / "demo_plan.json"))


def stage_synth(cfg: PipelineConfig, plan_path: str | Path | None = None) -> dict:
    if plan_path is None and cfg["synth"]["plan"] is not None:
        plan_path = cfg.path(cfg["synth"]["plan"])
    plan_path = Path(plan_path) if plan_path is not None else bundled_plan_path()
    try:
        plan = synth.SynthPlan.load(plan_path)
    except OSError as exc:
        raise InputError(f"cannot read plan {plan_path}: {exc.strerror}") from exc
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed plan {plan_path}: {exc!r}") from exc
    generated = synth.generate(plan)
    out = cfg.work_dir / "corpus"
    generated.write(out)
    summary = {
        "epochs": len(plan.epochs),
        "documents": sum(len(e) for e in generated.epochs),
        "events": [ev.to_json() for ev in generated.ground_truth],
    }
    outputs = [out / f for f in CORPUS_FILES] + [out / "ground_truth.json"]
    _manifest(cfg, "synth", out, [plan_path], outputs, plan=plan.to_json())
    return summary


# ---- train ----------------------------------------------------------------

def epoch_seed(seed: int, epoch_index: int) -> int:
    return int(np.random.SeedSequence([seed, epoch_index]).generate_state(1, dtype=np.uint64)[0] >> 1)


def _read_corpus(cfg: PipelineConfig):
    cdir = cfg.work_dir / "corpus"
    for name in CORPUS_FILES:
        _require(cdir / name, "corpus")
    try:
        dictionary = corpus.read_dictionary(cdir / "dictionary.json")
        docs = corpus.read_docs(cdir / "docs.jsonl")
        epochs = corpus.read_epochs(cdir / "epochs.json")
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    return dictionary, docs, epochs


def _train_epoch(args) -> dict:
    epoch_index, words, doc_ids, V, hyper, seed, sweeps, burn_in, min_mass = args
    if not words:
        return {
            "schema": hdp.CHECKPOINT_SCHEMA,
            "epoch": epoch_index,
            "hyperparameters": {"gamma": hyper.gamma, "alpha0": hyper.alpha0, "eta": hyper.eta},
            "seed": seed, "sweeps": sweeps, "burn_in": burn_in, "min_mass": min_mass, "V": V,
            "n_docs": 0, "n_words": 0, "final_log_joint": None,
            "dishes": [], "topics": [], "doc_topics": {},
        }
    docs = [corpus.BowDocument(d, dict(c)) for d, c in zip(doc_ids, words)]
    result = hdp.run_chain(docs, hyper, seed, sweeps=sweeps, burn_in=burn_in, V=V)
    problems = hdp.audit(result.state)
    if problems:
        raise StageError(f"epoch {epoch_index}: sampler state failed audit: {problems[:3]}")
    return hdp.checkpoint(result, hyper, min_mass, epoch_index)


def stage_train(cfg: PipelineConfig, jobs: int = 1) -> dict:
    dictionary, docs, epochs = _read_corpus(cfg)
    by_id = {d.doc_id: d for d in docs}
    h = cfg["hdp"]
    hyper = cfg.hyperparams()
    tasks = []
    for ep in epochs:
        members = [by_id[i] for i in ep.doc_ids if i in by_id]
        tasks.append((
            ep.epoch_index, [m.counts for m in members], [m.doc_id for m in members], len(dictionary),
            hyper, epoch_seed(h["seed"], ep.epoch_index), h["sweeps"], h["burn_in"], h["min_mass"],
        ))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            checkpoints = list(pool.map(_train_epoch, tasks))
    else:
        checkpoints = [_train_epoch(t) for t in tasks]
    out = cfg.work_dir / "topics"
    out.mkdir(parents=True, exist_ok=True)
    for stale in out.glob("epoch_*.json"):
        stale.unlink()
    outputs = []
    for ck in checkpoints:
        path = out / f"epoch_{ck['epoch']:04d}.json"
        _io.write_json(path, ck)
        outputs.append(path)
    cdir = cfg.work_dir / "corpus"
    _manifest(cfg, "train", out, [cdir / f for f in CORPUS_FILES], outputs)
    return {"epochs": len(checkpoints), "topics": [len(c["topics"]) for c in checkpoints]}


def _read_checkpoints(cfg: PipelineConfig) -> list[tuple[Path, dict]]:
    tdir = cfg.work_dir / "topics"
    paths = sorted(tdir.glob("epoch_*.json")) if tdir.exists() else []
    if not paths:
        raise MissingPrerequisite(tdir / "epoch_0000.json", "train")
    out = []
    for p in paths:
        obj = _io.read_json(p)
        if obj.get("schema") != hdp.CHECKPOINT_SCHEMA:
            raise InputError(f"{p}: unexpected schema {obj.get('schema')!r}")
        out.append((p, obj))
    return out


# ---- track ----------------------------------------------------------------

def stage_track(cfg: PipelineConfig) -> dict:
    cks = _read_checkpoints(cfg)
    t = cfg["track"]
    layers = [hdp.topics_from_checkpoint(obj) for _, obj in cks]
    graph = evolve.build_graph(layers, t["tau_prune"], [obj["epoch"] for _, obj in cks], t["method"], t["top_k"])
    events = evolve.classify_events(graph)
    out = cfg.work_dir / "track"
    _io.write_json(out / "graph.json", evolve.graph_to_json(graph, events))
    _io.atomic_write_text(out / "graph.dot", evolve.graph_to_dot(graph))
    _io.atomic_write_text(out / "stats.csv", evolve.stats_csv(evolve.epoch_stats(graph, events)))
    outputs = [out / "graph.json", out / "graph.dot", out / "stats.csv"]
    _manifest(cfg, "track", out, [p for p, _ in cks], outputs)
    counts = {k: sum(1 for e in events if e.kind == k) for k in evolve.EVENT_KINDS}
    return {"nodes": len(graph.nodes), "edges": len(graph.edges), **counts}


# ---- report ---------------------------------------------------------------

def wordcloud_csv(topics: list[hdp.Topic], terms: tuple[str, ...], top_n: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("topic_id", "term", "weight"))
    for tp in topics:
        for v, p in tp.top_terms(top_n):
            w.writerow((tp.topic_id, terms[v], repr(float(p))))
    return buf.getvalue()


def stage_report(cfg: PipelineConfig) -> dict:
    cks = _read_checkpoints(cfg)
    dictionary, docs, epochs = _read_corpus(cfg)
    if len(dictionary) != cks[0][1]["V"]:
        raise InputError("topic checkpoints were trained on a different dictionary; rerun train")
    by_id = {d.doc_id: d for d in docs}
    slices = {e.epoch_index: e for e in epochs}
    top_n = cfg["report"]["top_terms"]
    out = cfg.work_dir / "report"
    clouds = out / "wordclouds"
    clouds.mkdir(parents=True, exist_ok=True)
    for stale in clouds.glob("epoch_*.csv"):
        stale.unlink()
    outputs = []
    tweet_rows = []
    unmapped_total = 0
    for _, ck in cks:
        e = ck["epoch"]
        path = clouds / f"epoch_{e:04d}.csv"
        _io.atomic_write_text(path, wordcloud_csv(hdp.topics_from_checkpoint(ck), dictionary.terms, top_n))
        outputs.append(path)
        mixtures = {}
        for doc_id, row in ck["doc_topics"].items():
            total = sum(row.values())
            if total:
                mixtures[doc_id] = {k: c / total for k, c in row.items()}
        sl = slices.get(e)
        links: dict[str, list[str]] = {}
        if sl is not None:
            for doc_id in sl.doc_ids:
                doc = by_id.get(doc_id)
                if doc is None:
                    continue
                for tid, ts in zip(doc.linked_tweet_ids, doc.timestamps):
                    if sl.start <= ts < sl.end:
                        links.setdefault(tid, []).append(doc_id)
        mapped, unmapped = corpus.propagate_topics(mixtures, links)
        unmapped_total += len(unmapped)
        for tid in sorted(mapped):
            tweet_rows.append({"epoch": e, "tweet_id": tid, "topics": mapped[tid]})
    tpath = out / "tweet_topics.jsonl"
    _io.write_jsonl(tpath, tweet_rows)
    outputs.append(tpath)
    inputs = [p for p, _ in cks] + [cfg.work_dir / "corpus" / f for f in CORPUS_FILES]
    _manifest(cfg, "report", out, inputs, outputs)
    return {"wordclouds": len(cks), "tweet_topic_rows": len(tweet_rows), "unmapped_tweets": unmapped_total}
