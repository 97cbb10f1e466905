import json

import numpy as np
import pytest
from scipy.stats import chisquare

from linktopics import synth
from linktopics.corpus import read_dictionary, read_docs, read_epochs
from linktopics.evolve import weighted_jaccard
from linktopics.synth import Dynamic, EpochScript, PlanError, SynthPlan


def one_topic_plan(docs=10, words=20, seed=0):
    phi = synth.uniform_topic(12, [2, 5, 7])
    return SynthPlan(12, {"A": phi}, [EpochScript(("A",), docs, words)], [], seed)


def test_one_topic_words_come_from_its_support():
    corpus = synth.generate(one_topic_plan())
    docs = corpus.epochs[0]
    assert len(docs) == 10
    for d in docs:
        assert sum(d.counts.values()) == 20
        assert set(d.counts) <= {2, 5, 7}
        assert d.theta == {"A": pytest.approx(1.0)}


def test_same_seed_same_corpus():
    plan = synth.dynamics_plan(docs=20, words=15, seed=3)
    a, b = synth.generate(plan), synth.generate(plan)
    assert a.epochs == b.epochs and a.ground_truth == b.ground_truth
    c = synth.generate(synth.dynamics_plan(docs=20, words=15, seed=4))
    assert c.epochs != a.epochs


def test_empirical_frequencies_match_planted():
    phi = np.array([0.4, 0.3, 0.2, 0.1])
    plan = SynthPlan(4, {"A": phi}, [EpochScript(("A",), 200, 100)], [], seed=9)
    corpus = synth.generate(plan)
    totals = np.zeros(4)
    for d in corpus.epochs[0]:
        for v, c in d.counts.items():
            totals[v] += c
    assert chisquare(totals, totals.sum() * phi).pvalue > 1e-3


def split_plan():
    V = 16
    t = synth.uniform_topic(V, range(0, 8))
    t1 = synth.uniform_topic(V, [0, 1, 2, 3, 4, 5, 8, 9])
    t2 = synth.uniform_topic(V, [2, 3, 4, 5, 6, 7, 10, 11])
    s = synth.uniform_topic(V, range(12, 16))
    epochs = [EpochScript(("S", "T"), 5, 10)] * 3 + [EpochScript(("S", "T1", "T2"), 5, 10)] * 2
    return SynthPlan(V, {"S": s, "T": t, "T1": t1, "T2": t2}, epochs,
                     [Dynamic("split", 3, parent="T", children=("T1", "T2"))], seed=1)


def test_split_ground_truth():
    plan = split_plan()
    truth = synth.generate(plan).ground_truth
    assert [(e.kind, e.epoch, e.subject, e.related) for e in truth] == [("split", 2, "T", ("T1", "T2"))]


def test_overlapping_children_straddle_threshold():
    plan = split_plan()
    T, T1, T2 = (plan.topics[k] for k in ("T", "T1", "T2"))
    assert weighted_jaccard(T, T1) == pytest.approx(0.6) == weighted_jaccard(T, T2)
    assert weighted_jaccard(T1, T2) == pytest.approx(1 / 3)
    d = synth.dynamics_plan()
    assert weighted_jaccard(d.topics["M"], d.topics["P1"]) == pytest.approx(0.6)
    assert weighted_jaccard(d.topics["P1"], d.topics["P2"]) == pytest.approx(1 / 3)


def test_ground_truth_is_the_dynamics():
    plan = synth.dynamics_plan()
    truth = [(e.kind, e.epoch, e.subject, e.related) for e in plan.ground_truth()]
    assert truth == [
        ("split", 1, "T", ("T1", "T2")),
        ("death", 2, "D", ()),
        ("birth", 3, "B", ()),
        ("merge", 4, "M", ("P1", "P2")),
    ]
    assert len(truth) == len(plan.dynamics)


def test_topic_referenced_before_introduction():
    plan = synth.dynamics_plan(docs=5, words=5)
    plan.epochs[1] = EpochScript(("S", "D", "T", "P1", "P2", "B"), 5, 5)
    with pytest.raises(PlanError, match="before its introduction"):
        synth.generate(plan)


@pytest.mark.parametrize(
    "mutate,message",
    [
        (lambda p: p.epochs.__setitem__(4, EpochScript(("S", "B", "T1", "T2", "M", "D"), 5, 5)), "after it ended"),
        (lambda p: p.epochs.__setitem__(0, EpochScript(("S", "D", "T", "P1"), 5, 5)), "omits"),
        (lambda p: p.topics.__setitem__("S", np.full(p.V, 0.5)), "normalized"),
        (lambda p: p.dynamics.append(Dynamic("introduce", 2, topic="ghost")), "unknown topic"),
        (lambda p: p.dynamics.append(Dynamic("split", 9, parent="S", children=("T1", "T2"))), "outside"),
        (lambda p: p.epochs.clear(), "no epochs"),
    ],
)
def test_invalid_plans(mutate, message):
    plan = synth.dynamics_plan(docs=5, words=5)
    mutate(plan)
    with pytest.raises(PlanError, match=message):
        plan.validate()


def test_plan_json_round_trip(tmp_path):
    plan = synth.dynamics_plan(docs=7, words=9, seed=5)
    path = tmp_path / "plan.json"
    path.write_text(json.dumps(plan.to_json()))
    loaded = SynthPlan.load(path)
    assert loaded.to_json() == plan.to_json()
    assert synth.generate(loaded).epochs == synth.generate(plan).epochs


def test_dense_topic_lists_accepted():
    obj = one_topic_plan().to_json()
    obj["topics"]["A"] = synth.uniform_topic(12, [2, 5, 7]).tolist()
    assert SynthPlan.from_json(obj).topics["A"][5] == pytest.approx(1 / 3)


def test_written_corpus_uses_corpus_formats(tmp_path):
    plan = synth.dynamics_plan(docs=6, words=8, seed=2)
    corpus = synth.generate(plan)
    corpus.write(tmp_path)
    dictionary = read_dictionary(tmp_path / "dictionary.json")
    docs = read_docs(tmp_path / "docs.jsonl")
    epochs = read_epochs(tmp_path / "epochs.json")
    assert len(dictionary) == plan.V
    assert len(docs) == 36 and len(epochs) == 6
    for e, sl in enumerate(epochs):
        assert list(sl.doc_ids) == [d.doc_id for d in corpus.epochs[e]]
    truth = json.loads((tmp_path / "ground_truth.json").read_text())
    assert len(truth["events"]) == 4 and len(truth["doc_labels"]) == 36


def test_match_topics_is_one_to_one():
    class R:
        def __init__(self, tid, phi):
            self.topic_id, self.phi = tid, np.asarray(phi, float)

    planted = {"a": np.array([1.0, 0, 0]), "b": np.array([0, 1.0, 0])}
    recovered = [R(7, [0.9, 0.1, 0]), R(8, [0.8, 0.2, 0])]
    m = synth.match_topics(planted, recovered)
    assert m["a"][0] == 7 and m["b"][0] == 8
    assert m["b"][1] == pytest.approx(0.2 / 1.8)


def test_near_disjoint_plan_shape():
    plan = synth.near_disjoint_plan()
    assert plan.V == 30 and len(plan.topics) == 3
    for phi in plan.topics.values():
        assert phi.sum() == pytest.approx(1.0) and np.sort(phi)[-10:].sum() == pytest.approx(0.97)
