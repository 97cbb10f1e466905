"""HDP topic model fitted by Chinese restaurant franchise Gibbs sampling.

Words (customers) sit at tables within their document (restaurant); each
table serves one dish (topic) from a menu shared by all documents.  The
topic-word distributions are integrated out against a symmetric
Dirichlet(eta) base measure, so the sampler only tracks counts:

    n_jt  words at table t of document j
    m_k   tables serving dish k
    n_kv  occurrences of term v among words eating dish k

One sweep resamples every word's table, then every table's dish.  All
conditional weights are formed in log space.

State layout: table slots for document j occupy ``[doc_start[j],
doc_start[j+1])`` (a document never needs more tables than words); dish
slots live in growable arrays.  Slots are recycled, identifiers are not.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np
from scipy.special import gammaln

from .corpus import BowDocument

CHECKPOINT_SCHEMA = "linktopics.topics/1"

_OK = 0
_NONFINITE = 1


class SamplerError(FloatingPointError):
    pass


@dataclass(frozen=True)
class HdpHyperparams:
    gamma: float = 1.0
    alpha0: float = 1.0
    eta: float = 0.5

    def __post_init__(self):
        for name in ("gamma", "alpha0", "eta"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a positive finite number, got {v}")


@numba.njit(cache=True)
def _categorical(logw, n, u):
    """Index drawn from unnormalized log weights ``logw[:n]`` using uniform ``u``; -1 if not finite."""
    mx = -np.inf
    for i in range(n):
        if logw[i] > mx:
            mx = logw[i]
    if not np.isfinite(mx):
        return -1
    total = 0.0
    for i in range(n):
        total += math.exp(logw[i] - mx)
    if not np.isfinite(total):
        return -1
    target = u * total
    acc = 0.0
    for i in range(n):
        acc += math.exp(logw[i] - mx)
        if target < acc:
            return i
    # rounding fallback: last positive-weight entry
    for i in range(n - 1, -1, -1):
        if logw[i] > -np.inf:
            return i
    return -1


@numba.njit(cache=True)
def _grow_dishes(dish_m, dish_n, dish_nkv, dish_id):
    cap = dish_m.shape[0]
    new_cap = max(4, 2 * cap)
    V = dish_nkv.shape[1]
    m2 = np.zeros(new_cap, np.int64)
    n2 = np.zeros(new_cap, np.int64)
    nkv2 = np.zeros((new_cap, V), np.int64)
    id2 = np.full(new_cap, -1, np.int64)
    m2[:cap] = dish_m
    n2[:cap] = dish_n
    nkv2[:cap] = dish_nkv
    id2[:cap] = dish_id
    return m2, n2, nkv2, id2


@numba.njit(cache=True)
def _sweep_kernel(
    words, doc_start, table_of, tab_n, tab_dish, tab_id,
    dish_m, dish_n, dish_nkv, dish_id, ctr,
    V, alpha0, gamma, eta, u, seat_only,
):
    """One Gibbs pass. ``ctr`` holds [next_table_id, next_dish_id, total_tables, uniforms_used].

    With ``seat_only`` the words with ``table_of == -1`` are seated
    sequentially from the CRF conditional and the dish step is skipped;
    this is how a state is initialized.
    """
    J = doc_start.shape[0] - 1
    Veta = V * eta
    log_alpha = math.log(alpha0)
    log_gamma = math.log(gamma)
    lf_new_word = -math.log(V)
    cap = dish_m.shape[0]
    logf = np.empty(cap + 1)
    logw = np.empty(cap + 1)
    kslot = np.empty(cap + 1, np.int64)
    maxn = 0
    for j in range(J):
        if doc_start[j + 1] - doc_start[j] > maxn:
            maxn = doc_start[j + 1] - doc_start[j]
    tw = np.empty(maxn + 1)
    tslot = np.empty(maxn + 1, np.int64)
    members = np.empty(maxn, np.int64)
    seen = np.zeros(V, np.int64)
    ui = ctr[3]

    # ---- table assignment for every word ----
    for j in range(J):
        lo = doc_start[j]
        hi = doc_start[j + 1]
        for i in range(lo, hi):
            x = words[i]
            t = table_of[i]
            if t >= 0:
                if seat_only:
                    continue
                k = tab_dish[t]
                tab_n[t] -= 1
                dish_nkv[k, x] -= 1
                dish_n[k] -= 1
                if tab_n[t] == 0:
                    tab_dish[t] = -1
                    dish_m[k] -= 1
                    ctr[2] -= 1
                    if dish_m[k] == 0:
                        dish_id[k] = -1
            cap = dish_m.shape[0]
            if logf.shape[0] < cap + 1:
                logf = np.empty(cap + 1)
                logw = np.empty(cap + 1)
                kslot = np.empty(cap + 1, np.int64)
            # predictive of x under each live dish, and the new-table marginal
            M = ctr[2]
            mx = log_gamma + lf_new_word
            for k in range(cap):
                if dish_m[k] > 0:
                    logf[k] = math.log(dish_nkv[k, x] + eta) - math.log(dish_n[k] + Veta)
                    v = math.log(dish_m[k]) + logf[k]
                    if v > mx:
                        mx = v
            s = math.exp(log_gamma + lf_new_word - mx)
            for k in range(cap):
                if dish_m[k] > 0:
                    s += math.exp(math.log(dish_m[k]) + logf[k] - mx)
            lp_new_table = mx + math.log(s) - math.log(M + gamma)

            nt = 0
            for slot in range(lo, hi):
                if tab_n[slot] > 0:
                    tw[nt] = math.log(tab_n[slot]) + logf[tab_dish[slot]]
                    tslot[nt] = slot
                    nt += 1
            tw[nt] = log_alpha + lp_new_table
            c = _categorical(tw, nt + 1, u[ui])
            ui += 1
            if c < 0:
                ctr[3] = ui
                return dish_m, dish_n, dish_nkv, dish_id, _NONFINITE
            if c < nt:
                t = tslot[c]
                k = tab_dish[t]
            else:
                # new table: choose its dish
                nd = 0
                for kk in range(cap):
                    if dish_m[kk] > 0:
                        logw[nd] = math.log(dish_m[kk]) + logf[kk]
                        kslot[nd] = kk
                        nd += 1
                logw[nd] = log_gamma + lf_new_word
                c = _categorical(logw, nd + 1, u[ui])
                ui += 1
                if c < 0:
                    ctr[3] = ui
                    return dish_m, dish_n, dish_nkv, dish_id, _NONFINITE
                if c < nd:
                    k = kslot[c]
                else:
                    k = -1
                    for kk in range(cap):
                        if dish_m[kk] == 0 and dish_id[kk] < 0:
                            k = kk
                            break
                    if k < 0:
                        k = cap
                        dish_m, dish_n, dish_nkv, dish_id = _grow_dishes(dish_m, dish_n, dish_nkv, dish_id)
                    dish_id[k] = ctr[1]
                    ctr[1] += 1
                t = -1
                for slot in range(lo, hi):
                    if tab_n[slot] == 0 and tab_dish[slot] < 0:
                        t = slot
                        break
                tab_id[t] = ctr[0]
                ctr[0] += 1
                tab_dish[t] = k
                dish_m[k] += 1
                ctr[2] += 1
            table_of[i] = t
            tab_n[t] += 1
            dish_nkv[k, x] += 1
            dish_n[k] += 1

    if seat_only:
        ctr[3] = ui
        return dish_m, dish_n, dish_nkv, dish_id, _OK

    # ---- dish assignment for every table ----
    for j in range(J):
        lo = doc_start[j]
        hi = doc_start[j + 1]
        for t in range(lo, hi):
            njt = tab_n[t]
            if njt == 0:
                continue
            nm = 0
            for i in range(lo, hi):
                if table_of[i] == t:
                    members[nm] = i
                    nm += 1
            k_old = tab_dish[t]
            for r in range(nm):
                dish_nkv[k_old, words[members[r]]] -= 1
            dish_n[k_old] -= njt
            dish_m[k_old] -= 1
            ctr[2] -= 1
            if dish_m[k_old] == 0:
                dish_id[k_old] = -1
            cap = dish_m.shape[0]
            if logw.shape[0] < cap + 1:
                logf = np.empty(cap + 1)
                logw = np.empty(cap + 1)
                kslot = np.empty(cap + 1, np.int64)
            nd = 0
            for kk in range(cap):
                if dish_m[kk] > 0:
                    # sequential predictive of the table's words under dish kk
                    lf = 0.0
                    base = dish_n[kk] + Veta
                    for r in range(nm):
                        x = words[members[r]]
                        lf += math.log(dish_nkv[kk, x] + seen[x] + eta) - math.log(base + r)
                        seen[x] += 1
                    for r in range(nm):
                        seen[words[members[r]]] = 0
                    logw[nd] = math.log(dish_m[kk]) + lf
                    kslot[nd] = kk
                    nd += 1
            lf = 0.0
            for r in range(nm):
                x = words[members[r]]
                lf += math.log(seen[x] + eta) - math.log(Veta + r)
                seen[x] += 1
            for r in range(nm):
                seen[words[members[r]]] = 0
            logw[nd] = log_gamma + lf
            c = _categorical(logw, nd + 1, u[ui])
            ui += 1
            if c < 0:
                ctr[3] = ui
                return dish_m, dish_n, dish_nkv, dish_id, _NONFINITE
            if c < nd:
                k = kslot[c]
            else:
                k = -1
                for kk in range(cap):
                    if dish_m[kk] == 0 and dish_id[kk] < 0:
                        k = kk
                        break
                if k < 0:
                    k = cap
                    dish_m, dish_n, dish_nkv, dish_id = _grow_dishes(dish_m, dish_n, dish_nkv, dish_id)
                dish_id[k] = ctr[1]
                ctr[1] += 1
            tab_dish[t] = k
            for r in range(nm):
                dish_nkv[k, words[members[r]]] += 1
            dish_n[k] += njt
            dish_m[k] += 1
            ctr[2] += 1

    ctr[3] = ui
    return dish_m, dish_n, dish_nkv, dish_id, _OK


@dataclass
class CrfState:
    """Seating arrangement and sufficient statistics of one chain."""

    V: int
    doc_ids: tuple[str, ...]
    words: np.ndarray
    doc_start: np.ndarray
    table_of: np.ndarray
    tab_n: np.ndarray
    tab_dish: np.ndarray
    tab_id: np.ndarray
    dish_m: np.ndarray
    dish_n: np.ndarray
    dish_nkv: np.ndarray
    dish_id: np.ndarray
    ctr: np.ndarray
    seed: int
    rng: np.random.Generator = field(repr=False)
    sweeps_done: int = 0

    @property
    def n_docs(self) -> int:
        return len(self.doc_start) - 1

    @property
    def n_words(self) -> int:
        return len(self.words)

    @property
    def n_tables(self) -> int:
        return int(self.ctr[2])

    def live_dish_slots(self) -> np.ndarray:
        return np.flatnonzero(self.dish_m > 0)

    @property
    def n_dishes(self) -> int:
        return int(np.count_nonzero(self.dish_m > 0))

    def doc_words(self, j: int) -> np.ndarray:
        return self.words[self.doc_start[j]: self.doc_start[j + 1]]

    def word_tables(self, j: int) -> np.ndarray:
        """Table identifier of each word of document ``j``."""
        return self.tab_id[self.table_of[self.doc_start[j]: self.doc_start[j + 1]]]

    def word_dishes(self, j: int) -> np.ndarray:
        """Dish identifier of each word of document ``j``."""
        return self.dish_id[self.tab_dish[self.table_of[self.doc_start[j]: self.doc_start[j + 1]]]]

    def copy(self) -> "CrfState":
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = self.rng.bit_generator.state
        return CrfState(
            self.V, self.doc_ids, self.words, self.doc_start,
            self.table_of.copy(), self.tab_n.copy(), self.tab_dish.copy(), self.tab_id.copy(),
            self.dish_m.copy(), self.dish_n.copy(), self.dish_nkv.copy(), self.dish_id.copy(),
            self.ctr.copy(), self.seed, rng, self.sweeps_done,
        )

    def identical_to(self, other: "CrfState") -> bool:
        arrays = ("words", "doc_start", "table_of", "tab_n", "tab_dish", "tab_id",
                  "dish_m", "dish_n", "dish_nkv", "dish_id", "ctr")
        return (
            self.V == other.V
            and self.doc_ids == other.doc_ids
            and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
            and self.rng.bit_generator.state == other.rng.bit_generator.state
        )


def _run_kernel(state: CrfState, hyper: HdpHyperparams, seat_only: bool) -> None:
    u = state.rng.random(3 * state.n_words + 1)
    state.ctr[3] = 0
    dm, dn, dnkv, did, status = _sweep_kernel(
        state.words, state.doc_start, state.table_of, state.tab_n, state.tab_dish, state.tab_id,
        state.dish_m, state.dish_n, state.dish_nkv, state.dish_id, state.ctr,
        state.V, float(hyper.alpha0), float(hyper.gamma), float(hyper.eta), u, seat_only,
    )
    state.dish_m, state.dish_n, state.dish_nkv, state.dish_id = dm, dn, dnkv, did
    if status != _OK:
        raise SamplerError("non-finite conditional weights during Gibbs sweep")


def init_state(
    slice_docs: Sequence[BowDocument] | Sequence[Sequence[int]],
    hyper: HdpHyperparams,
    seed: int,
    V: int | None = None,
) -> CrfState:
    """Seat every word by sequential draws from the CRF conditionals.

    ``slice_docs`` are BowDocuments or plain sequences of term indices.
    Empty documents are skipped.  ``V`` defaults to one past the largest
    term index present.
    """
    ids: list[str] = []
    seqs: list[list[int]] = []
    for n, d in enumerate(slice_docs):
        if isinstance(d, BowDocument):
            ids.append(d.doc_id)
            seqs.append(d.words())
        else:
            ids.append(str(n))
            seqs.append([int(v) for v in d])
    keep = [i for i, s in enumerate(seqs) if s]
    if not keep:
        raise ValueError("cannot fit an empty sub-corpus")
    ids = [ids[i] for i in keep]
    seqs = [seqs[i] for i in keep]
    words = np.fromiter((v for s in seqs for v in s), dtype=np.int64)
    vmax = int(words.max()) + 1
    if V is None:
        V = vmax
    if words.min() < 0 or vmax > V:
        raise ValueError(f"term index out of range for V={V}")
    doc_start = np.zeros(len(seqs) + 1, dtype=np.int64)
    doc_start[1:] = np.cumsum([len(s) for s in seqs])
    N = len(words)
    cap = 8
    state = CrfState(
        V=int(V),
        doc_ids=tuple(ids),
        words=words,
        doc_start=doc_start,
        table_of=np.full(N, -1, np.int64),
        tab_n=np.zeros(N, np.int64),
        tab_dish=np.full(N, -1, np.int64),
        tab_id=np.full(N, -1, np.int64),
        dish_m=np.zeros(cap, np.int64),
        dish_n=np.zeros(cap, np.int64),
        dish_nkv=np.zeros((cap, V), np.int64),
        dish_id=np.full(cap, -1, np.int64),
        ctr=np.zeros(4, np.int64),
        seed=int(seed),
        rng=np.random.default_rng(seed),
    )
    _run_kernel(state, hyper, seat_only=True)
    return state


def gibbs_sweep(state: CrfState, hyper: HdpHyperparams) -> CrfState:
    """Resample all table then all dish assignments in place; returns ``state``."""
    _run_kernel(state, hyper, seat_only=False)
    state.sweeps_done += 1
    return state


def log_joint(state: CrfState, hyper: HdpHyperparams) -> float:
    """log p(words, tables, dishes) with topic distributions integrated out."""
    a, g, eta, V = hyper.alpha0, hyper.gamma, hyper.eta, state.V
    lp = 0.0
    live_tab = state.tab_n > 0
    doc_of_slot = np.repeat(np.arange(state.n_docs), np.diff(state.doc_start))
    T_j = np.bincount(doc_of_slot[live_tab], minlength=state.n_docs)
    N_j = np.diff(state.doc_start)
    lp += float(np.sum(T_j) * math.log(a) + gammaln(state.tab_n[live_tab]).sum())
    lp += float(np.sum(gammaln(a) - gammaln(a + N_j)))
    live = state.dish_m > 0
    K = int(live.sum())
    M = int(state.dish_m[live].sum())
    lp += K * math.log(g) + float(gammaln(state.dish_m[live]).sum()) + float(gammaln(g) - gammaln(g + M))
    nkv = state.dish_nkv[live]
    lp += float(K * gammaln(V * eta) - gammaln(V * eta + state.dish_n[live]).sum())
    lp += float((gammaln(eta + nkv) - gammaln(eta)).sum())
    if not math.isfinite(lp):
        raise SamplerError("non-finite joint log probability")
    return lp


@dataclass
class ChainResult:
    state: CrfState
    trace: list[float]
    sweeps: int
    burn_in: int


def run_chain(
    slice_docs,
    hyper: HdpHyperparams,
    seed: int,
    sweeps: int = 500,
    burn_in: int = 300,
    V: int | None = None,
) -> ChainResult:
    if not sweeps > burn_in >= 0:
        raise ValueError("need sweeps > burn_in >= 0")
    state = init_state(slice_docs, hyper, seed, V=V)
    trace = []
    for _ in range(sweeps):
        gibbs_sweep(state, hyper)
        trace.append(log_joint(state, hyper))
    return ChainResult(state, trace, sweeps, burn_in)


def audit(state: CrfState) -> list[str]:
    """Recount everything from the raw assignments and report any bookkeeping mismatch."""
    problems: list[str] = []
    N = state.n_words
    if (state.table_of < 0).any():
        problems.append("unseated word")
        return problems
    for j in range(state.n_docs):
        lo, hi = state.doc_start[j], state.doc_start[j + 1]
        t = state.table_of[lo:hi]
        if ((t < lo) | (t >= hi)).any():
            problems.append(f"doc {j}: word seated outside its restaurant")
    n_recount = np.bincount(state.table_of, minlength=N)
    if not np.array_equal(n_recount, state.tab_n):
        problems.append("n_jt disagrees with table assignments")
    for j in range(state.n_docs):
        lo, hi = state.doc_start[j], state.doc_start[j + 1]
        if state.tab_n[lo:hi].sum() != hi - lo:
            problems.append(f"doc {j}: sum of n_jt != N_j")
    live_tab = state.tab_n > 0
    if (state.tab_dish[live_tab] < 0).any():
        problems.append("live table without a dish")
    if (state.tab_dish[~live_tab] >= 0).any():
        problems.append("empty table still holds a dish")
    K = len(state.dish_m)
    m_recount = np.bincount(state.tab_dish[live_tab], minlength=K)
    if not np.array_equal(m_recount, state.dish_m):
        problems.append("m_k disagrees with table dishes")
    if int(state.ctr[2]) != int(live_tab.sum()):
        problems.append("total table counter is stale")
    dish_of_word = state.tab_dish[state.table_of]
    nkv = np.zeros_like(state.dish_nkv)
    np.add.at(nkv, (dish_of_word, state.words), 1)
    if not np.array_equal(nkv, state.dish_nkv):
        problems.append("n_kv disagrees with word dishes")
    if not np.array_equal(state.dish_nkv.sum(axis=1), state.dish_n):
        problems.append("n_k != sum_v n_kv")
    live = state.dish_m > 0
    if (state.dish_n[live] < 1).any():
        problems.append("live dish without words")
    if (state.dish_n[~live] != 0).any() or (state.dish_id[~live] >= 0).any():
        problems.append("dead dish retains counts or identity")
    if int(state.dish_nkv.sum()) != N:
        problems.append("word count not conserved")
    ids = state.dish_id[live]
    if len(set(ids.tolist())) != len(ids):
        problems.append("duplicate dish identifiers")
    tids = state.tab_id[live_tab]
    if len(set(tids.tolist())) != len(tids):
        problems.append("duplicate table identifiers")
    return problems


@dataclass(frozen=True)
class Topic:
    topic_id: int
    phi: np.ndarray
    mass: int

    def top_terms(self, n: int = 50) -> list[tuple[int, float]]:
        order = np.lexsort((np.arange(len(self.phi)), -self.phi))[:n]
        return [(int(v), float(self.phi[v])) for v in order]


def topic_posterior_mean(nkv_row: np.ndarray, eta: float) -> np.ndarray:
    row = nkv_row.astype(float) + eta
    return row / row.sum()


def extract_topics(state: CrfState, hyper: HdpHyperparams, min_mass: int = 10) -> list[Topic]:
    """Posterior-mean term distribution of every live dish holding at least ``min_mass`` words.

    Ordered by descending mass, then dish identifier.
    """
    topics = []
    for k in state.live_dish_slots():
        mass = int(state.dish_n[k])
        if mass >= min_mass:
            topics.append(Topic(int(state.dish_id[k]), topic_posterior_mean(state.dish_nkv[k], hyper.eta), mass))
    topics.sort(key=lambda tp: (-tp.mass, tp.topic_id))
    return topics


def doc_topic_counts(state: CrfState, topic_ids: set[int] | None = None) -> dict[str, dict[int, int]]:
    """Words of each document per dish, restricted to ``topic_ids`` when given."""
    out: dict[str, dict[int, int]] = {}
    for j, doc_id in enumerate(state.doc_ids):
        dishes, counts = np.unique(state.word_dishes(j), return_counts=True)
        row = {int(k): int(c) for k, c in zip(dishes, counts) if topic_ids is None or int(k) in topic_ids}
        out[doc_id] = row
    return out


def checkpoint(
    result: ChainResult,
    hyper: HdpHyperparams,
    min_mass: int,
    epoch_index: int | None = None,
) -> dict:
    """JSON-ready record of a fitted epoch: settings, dish counts, topics and per-document topic counts."""
    state = result.state
    topics = extract_topics(state, hyper, min_mass)
    emitted = {tp.topic_id for tp in topics}
    slots = sorted(state.live_dish_slots(), key=lambda k: (-int(state.dish_n[k]), int(state.dish_id[k])))
    dishes = []
    for k in slots:
        nz = np.flatnonzero(state.dish_nkv[k])
        dishes.append({
            "dish_id": int(state.dish_id[k]),
            "tables": int(state.dish_m[k]),
            "mass": int(state.dish_n[k]),
            "counts": {str(int(v)): int(state.dish_nkv[k, v]) for v in nz},
        })
    return {
        "schema": CHECKPOINT_SCHEMA,
        "epoch": epoch_index,
        "hyperparameters": {"gamma": hyper.gamma, "alpha0": hyper.alpha0, "eta": hyper.eta},
        "seed": state.seed,
        "sweeps": result.sweeps,
        "burn_in": result.burn_in,
        "min_mass": min_mass,
        "V": state.V,
        "n_docs": state.n_docs,
        "n_words": state.n_words,
        "final_log_joint": result.trace[-1] if result.trace else None,
        "dishes": dishes,
        "topics": [
            {"topic_id": tp.topic_id, "mass": tp.mass, "phi": [float(p) for p in tp.phi]} for tp in topics
        ],
        "doc_topics": {
            d: {str(k): c for k, c in sorted(row.items())}
            for d, row in doc_topic_counts(state, emitted).items()
        },
    }


def topics_from_checkpoint(obj: dict) -> list[Topic]:
    if obj.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(f"unexpected checkpoint schema {obj.get('schema')!r}")
    return [Topic(t["topic_id"], np.asarray(t["phi"], dtype=float), t["mass"]) for t in obj["topics"]]
