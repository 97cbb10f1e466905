from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, settings, strategies as st

from linktopics.corpus import (
    BowDocument,
    Dictionary,
    TokenRules,
    WebDocument,
    build_dictionary,
    count_tokens,
    doc_id_for_url,
    epochs_containing,
    load_stopwords,
    propagate_topics,
    read_dictionary,
    read_docs,
    read_epochs,
    slice_epochs,
    to_bow,
    tokenize,
    write_corpus,
)
from oracles import dictionary_prefix_oracle

DAY = timedelta(days=1)
T0 = datetime(2015, 10, 1, tzinfo=timezone.utc)


def web(doc_id, text="", days=(0.5,)):
    stamps = tuple(T0 + timedelta(days=d) for d in days)
    return WebDocument(doc_id, text, tuple(f"t{doc_id}{i}" for i in range(len(stamps))), stamps)


@pytest.mark.parametrize(
    "text,expected",
    [("The Cat cat!", ["cat", "cat"]), ("", []), ("a I", []), ("ADHD 2015 x9 café", ["adhd", "café"])],
)
def test_tokenize(text, expected):
    assert tokenize(text) == expected


def test_tokenize_options(tmp_path):
    stop = tmp_path / "stop.txt"
    stop.write_text("# comment\ncat\n\n", encoding="utf-8")
    rules = TokenRules(lowercase=False, min_length=1, stopwords=load_stopwords(stop), alphabetic_only=False)
    assert tokenize("The cat b2 a", rules) == ["The", "b2", "a"]


def test_dictionary_example():
    d = build_dictionary({"a": 6, "b": 3, "c": 1}, 0.9)
    assert d.terms == ("a", "b") and d.covered_tokens == 9 and d.total_tokens == 10
    assert d.index == {"a": 0, "b": 1}


def test_dictionary_full_coverage():
    assert build_dictionary({"a": 6, "b": 3, "c": 1}, 1.0).terms == ("a", "b", "c")


def test_dictionary_tie_break_is_lexicographic():
    assert build_dictionary({"zeta": 2, "alpha": 2, "mid": 2, "one": 1}, 0.5).terms == ("alpha", "mid")


@pytest.mark.parametrize("bad", [0.0, -0.1, 1.01, float("nan")])
def test_dictionary_bad_coverage(bad):
    with pytest.raises(ValueError):
        build_dictionary({"a": 1}, bad)


def test_dictionary_empty_counts():
    with pytest.raises(ValueError):
        build_dictionary({}, 0.9)


def test_dictionary_rejects_duplicates():
    with pytest.raises(ValueError):
        Dictionary(("a", "a"), 1.0)


terms = st.text(alphabet="abcdefgh", min_size=1, max_size=4)
tables = st.dictionaries(terms, st.integers(1, 50), min_size=1, max_size=25)
coverages = st.sampled_from(["0.1", "0.5", "0.75", "0.8", "0.9", "0.95", "0.99", "1"])


@given(tables, coverages)
def test_dictionary_matches_exact_oracle(counts, cov):
    assert list(build_dictionary(counts, float(cov)).terms) == dictionary_prefix_oracle(counts, cov)


def test_to_bow_counts():
    d = Dictionary(("cat",), 1.0)
    b = to_bow(web("x", "cat cat dog"), d)
    assert b.counts == {0: 2} and b.N == 2 and not b.empty


def test_to_bow_flags_empty():
    assert to_bow(web("x", "dog bird"), Dictionary(("cat",), 1.0)).empty


def test_to_bow_empty_dictionary():
    with pytest.raises(ValueError):
        to_bow(web("x", "cat"), Dictionary((), 1.0))


@given(st.lists(st.text(alphabet="abc cab ba ", max_size=40), min_size=1, max_size=8))
def test_bow_totals_equal_in_dictionary_tokens(texts):
    counts = count_tokens(texts)
    if not counts:
        return
    d = build_dictionary(counts, 0.8)
    docs = [to_bow(web(str(i), t), d) for i, t in enumerate(texts)]
    assert sum(b.N for b in docs) == sum(counts[t] for t in d.terms)
    assert all(c >= 1 and 0 <= v < len(d) for b in docs for v, c in b.counts.items())


def test_web_document_invariants():
    with pytest.raises(ValueError):
        WebDocument("d", "", (), ())
    with pytest.raises(ValueError):
        WebDocument("d", "", ("a", "a"), (T0, T0))
    with pytest.raises(ValueError):
        WebDocument("d", "", ("a",), (T0, T0))


def test_doc_id_is_stable():
    assert doc_id_for_url("http://a.org/x") == doc_id_for_url("http://a.org/x") != doc_id_for_url("http://a.org/y")


def members(epochs):
    return {e.epoch_index: set(e.doc_ids) for e in epochs}


def test_single_doc_joins_three_epochs():
    epochs = slice_epochs([web("anchor", days=(0.0,)), web("x", days=(2.5,))])
    m = members(epochs)
    assert [k for k, ids in m.items() if "x" in ids] == [0, 1, 2]
    assert epochs[0].start == T0 and epochs[1].start == T0 + DAY and epochs[0].end == T0 + 3 * DAY


def test_span_equal_step_partitions():
    docs = [web(str(i), days=(i * 0.7,)) for i in range(12)]
    epochs = slice_epochs(docs, span=DAY, step=DAY)
    seen = [d for e in epochs for d in e.doc_ids]
    assert sorted(seen) == sorted(d.doc_id for d in docs)


def test_gap_gives_empty_epochs():
    epochs = slice_epochs([web("a", days=(0.5,)), web("b", days=(10.5,))])
    assert [e.epoch_index for e in epochs] == list(range(11))
    m = members(epochs)
    assert m[0] == {"a"} and all(not m[k] for k in range(1, 8)) and all(m[k] == {"b"} for k in (8, 9, 10))


def test_epochs_advance_by_step():
    epochs = slice_epochs([web("a", days=(0.2, 6.9))], span=timedelta(hours=60), step=timedelta(hours=18))
    for a, b in zip(epochs, epochs[1:]):
        assert b.start - a.start == timedelta(hours=18)
        assert a.end - a.start == timedelta(hours=60)


def test_slice_preconditions():
    with pytest.raises(ValueError):
        slice_epochs([web("a")], span=DAY, step=2 * DAY)
    with pytest.raises(ValueError):
        slice_epochs([web("a")], span=DAY, step=timedelta(0))
    with pytest.raises(ValueError):
        slice_epochs([])


offsets = st.integers(0, 20 * 86_400_000_000)


@settings(max_examples=200)
@given(st.lists(offsets, min_size=1, max_size=15))
def test_membership_iff_timestamp_in_interval(micros):
    docs = [web(str(i), days=(m / 86_400_000_000,)) for i, m in enumerate(micros)]
    for e in slice_epochs(docs):
        for d in docs:
            inside = any(e.start <= t < e.end for t in d.timestamps)
            assert (d.doc_id in e.doc_ids) == inside


@given(offsets)
def test_interior_timestamps_in_exactly_three_epochs(m):
    t = T0 + timedelta(microseconds=m)
    n = len(epochs_containing(t, T0, 3 * DAY, DAY))
    assert n == (3 if t >= T0 + 2 * DAY else m // 86_400_000_000 + 1)


def test_propagate_examples():
    mixes = {"d1": {"T1": 1.0}, "d2": {"T2": 1.0}}
    out, unmapped = propagate_topics(mixes, {"a": ["d1"], "b": ["d1", "d2"], "c": ["d1"], "z": ["gone"]})
    assert out["a"] == {"T1": 1.0}
    assert out["b"] == {"T1": 0.5, "T2": 0.5}
    assert out["a"] == out["c"]
    assert unmapped == ["z"]


mixtures = st.dictionaries(st.sampled_from("ABCDE"), st.floats(0.01, 1.0), min_size=1).map(
    lambda m: {k: v / sum(m.values()) for k, v in m.items()}
)


@given(st.dictionaries(st.sampled_from(["d1", "d2", "d3", "d4"]), mixtures, min_size=1),
       st.dictionaries(st.text("xyz", min_size=1, max_size=3), st.lists(st.sampled_from(["d1", "d2", "d3", "d4"]), min_size=1)))
def test_propagated_rows_are_normalized(mix, links):
    out, unmapped = propagate_topics(mix, links)
    assert set(out) | set(unmapped) == set(links)
    for row in out.values():
        assert abs(sum(row.values()) - 1.0) <= 1e-9


def test_corpus_files_round_trip(tmp_path):
    texts = ["autism support group", "adhd support", "support autism autism"]
    docs = [web(str(i), t, days=(i,)) for i, t in enumerate(texts)]
    d = build_dictionary(count_tokens(texts), 0.9)
    bows = [to_bow(w, d) for w in docs]
    epochs = slice_epochs(bows)
    write_corpus(tmp_path, d, bows, epochs, 3 * DAY, DAY)
    assert read_dictionary(tmp_path / "dictionary.json") == d
    assert read_docs(tmp_path / "docs.jsonl") == bows
    assert read_epochs(tmp_path / "epochs.json") == epochs
    first = (tmp_path / "docs.jsonl").read_bytes()
    write_corpus(tmp_path, d, bows, epochs, 3 * DAY, DAY)
    assert (tmp_path / "docs.jsonl").read_bytes() == first


def test_docs_schema_checked(tmp_path):
    (tmp_path / "docs.jsonl").write_text('{"doc_id": "a", "counts": {}}\n')
    with pytest.raises(ValueError, match="schema"):
        read_docs(tmp_path / "docs.jsonl")


def test_bow_words_expand_counts():
    assert BowDocument("d", {3: 2, 1: 1}).words() == [1, 3, 3]
