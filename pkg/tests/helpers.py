"""Shared test utilities that drive the library (unlike oracles.py)."""
from collections import Counter

from linktopics import hdp
from oracles import restricted_growth


def state_key(state: hdp.CrfState):
    """(table partition per document, dish partition over all words), label-free."""
    tables = tuple(restricted_growth(state.word_tables(j).tolist()) for j in range(state.n_docs))
    dishes = restricted_growth([k for j in range(state.n_docs) for k in state.word_dishes(j).tolist()])
    return tables, dishes


def sample_keys(docs, V, hyper, seed, samples, burn_in=1000, thin=5, key=state_key):
    state = hdp.init_state(docs, hyper, seed, V=V)
    for _ in range(burn_in):
        hdp.gibbs_sweep(state, hyper)
    counts: Counter = Counter()
    for _ in range(samples):
        for _ in range(thin):
            hdp.gibbs_sweep(state, hyper)
        counts[key(state)] += 1
    return counts


def total_variation(counts: Counter, exact: dict) -> float:
    n = sum(counts.values())
    keys = set(counts) | set(exact)
    return 0.5 * sum(abs(counts.get(k, 0) / n - exact.get(k, 0.0)) for k in keys)


def marginal(exact: dict, f) -> dict:
    out: dict = {}
    for k, p in exact.items():
        out[f(k)] = out.get(f(k), 0.0) + p
    return out
