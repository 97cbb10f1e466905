"""Brute-force reference computations that share no code with the library paths they check."""
from __future__ import annotations

import itertools
from fractions import Fraction
from math import exp, lgamma, log


def restricted_growth(labels) -> tuple[int, ...]:
    """Relabel a sequence by order of first appearance: (7, 3, 7) -> (0, 1, 0)."""
    seen: dict = {}
    return tuple(seen.setdefault(x, len(seen)) for x in labels)


def set_partitions(n: int):
    """All set partitions of range(n) as restricted-growth strings."""
    if n == 0:
        yield ()
        return

    def rec(prefix, k):
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for b in range(k + 1):
            yield from rec(prefix + [b], max(k, b + 1))

    yield from rec([0], 1)


def _log_rising(a: float, n: int) -> float:
    return lgamma(a + n) - lgamma(a)


def _log_eppf(sizes, conc: float) -> float:
    """Log probability of a specific set partition with block ``sizes`` under a CRP(conc)."""
    n = sum(sizes)
    return len(sizes) * log(conc) + sum(lgamma(s) for s in sizes) - _log_rising(conc, n)


def _log_dirmult(counts, V: int, eta: float) -> float:
    n = sum(counts.values())
    return lgamma(V * eta) - lgamma(V * eta + n) + sum(lgamma(eta + c) - lgamma(eta) for c in counts.values())


def crf_posterior(docs: list[list[int]], V: int, alpha0: float, gamma: float, eta: float) -> dict:
    """Exact posterior over (table partition, dish partition) configurations.

    Keys are ``(table_rgs_per_doc, dish_rgs_over_all_words)`` so that
    configurations differing only by labels coincide.
    """
    per_doc = [list(set_partitions(len(d))) for d in docs]
    logp: dict = {}
    for tables in itertools.product(*per_doc):
        lp_tables = sum(_log_eppf(_block_sizes(rgs), alpha0) for rgs in tables)
        # flatten tables to a global list of (doc, block)
        table_list = [(j, b) for j, rgs in enumerate(tables) for b in range(max(rgs) + 1)]
        for dish_rgs in set_partitions(len(table_list)):
            dish_of_table = dict(zip(table_list, dish_rgs))
            m = [0] * (max(dish_rgs) + 1)
            for k in dish_rgs:
                m[k] += 1
            lp = lp_tables + _log_eppf(m, gamma)
            counts = [dict() for _ in m]
            word_dishes = []
            for j, (rgs, words) in enumerate(zip(tables, docs)):
                for b, v in zip(rgs, words):
                    k = dish_of_table[(j, b)]
                    counts[k][v] = counts[k].get(v, 0) + 1
                    word_dishes.append(k)
            lp += sum(_log_dirmult(c, V, eta) for c in counts)
            key = (tuple(tables), restricted_growth(word_dishes))
            logp[key] = lp
    mx = max(logp.values())
    z = sum(exp(v - mx) for v in logp.values())
    return {k: exp(v - mx) / z for k, v in logp.items()}


def _block_sizes(rgs) -> list[int]:
    sizes = [0] * (max(rgs) + 1)
    for b in rgs:
        sizes[b] += 1
    return sizes


def dictionary_prefix_oracle(counts: dict[str, int], coverage: str) -> list[str]:
    """Smallest prefix by brute force over every prefix length, exact rational arithmetic."""
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    total = sum(counts.values())
    need = Fraction(coverage) * total
    for n in range(1, len(ranked) + 1):
        if sum(c for _, c in ranked[:n]) >= need:
            return [t for t, _ in ranked[:n]]
    raise AssertionError("unreachable for coverage <= 1")
