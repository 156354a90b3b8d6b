"""Per-batch construction of the working string set ``D``.

New strings are drawn cluster by cluster, carried strings come from the
current best solution, and the union is ranked by importance and cut to
``d_max``.  Ties in importance are broken by lexicographic string order so
that every batch is reproducible.
"""

from dataclasses import dataclass, field

import numpy as np

from .determinants import lex_keys
from .recovery import MembershipTable, StringPool, draw_without_replacement


@dataclass(eq=False)
class BatchCandidate:
    """Candidate strings with importance, membership masks and carry flags."""

    strings: np.ndarray
    importance: np.ndarray
    masks: list = field(default_factory=list)
    carried: np.ndarray = None

    def __post_init__(self):
        self.strings = np.asarray(self.strings, dtype=np.uint64)
        self.importance = np.asarray(self.importance, dtype=np.float64)
        if not self.masks:
            self.masks = [0] * len(self.strings)
        if self.carried is None:
            self.carried = np.zeros(len(self.strings), dtype=bool)

    def __len__(self):
        return len(self.strings)

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, dtype=np.uint64), np.zeros(0))

    def memberships(self, K) -> MembershipTable:
        table = MembershipTable(K)
        for s, m in zip(self.strings, self.masks):
            table.set_mask(s, m)
        return table


def _accumulate(entries, s, importance, mask, carried=False):
    s = int(s)
    imp, m, c = entries.get(s, (0.0, 0, False))
    entries[s] = (imp + importance, m | mask, c or carried)


def _from_entries(entries, n_mo) -> BatchCandidate:
    if not entries:
        return BatchCandidate.empty()
    strings = np.array(sorted(entries), dtype=np.uint64)
    order = np.argsort(lex_keys(strings, n_mo), kind="stable")
    strings = strings[order]
    vals = [entries[int(s)] for s in strings]
    return BatchCandidate(
        strings=strings,
        importance=np.array([v[0] for v in vals]),
        masks=[v[1] for v in vals],
        carried=np.array([v[2] for v in vals], dtype=bool),
    )


def subsample_batch(pools, m, rng, n_mo, deficit=None) -> BatchCandidate:
    """Draw ``m_k`` strings without replacement from each cluster pool.

    ``pools[k]`` is a :class:`StringPool` whose weights are the within-cluster
    probabilities.  A pool smaller than ``m_k`` yields all its strings.
    ``I_new(mu) = sum_{k: mu drawn from k} w_k(mu) m_k / sum_l m_l``.

    ``deficit``, if given, is called as ``deficit(k, count, rng)`` when pool
    ``k`` holds fewer than ``m_k`` strings and returns extra strings; these
    get importance 0 and membership bit ``k``.
    """
    m = [int(x) for x in m]
    total_m = sum(m)
    entries = {}
    for k, (pool, mk) in enumerate(zip(pools, m)):
        if mk <= 0:
            continue
        take = min(mk, len(pool))
        if take:
            picks = draw_without_replacement(pool.weights, take, rng)
            for j in picks:
                _accumulate(entries, pool.strings[j], pool.weights[j] * mk / total_m, 1 << k)
        if deficit is not None and take < mk:
            for s in deficit(k, mk - take, rng):
                _accumulate(entries, s, 0.0, 1 << k)
    return _from_entries(entries, n_mo)


def fill_deficit(n_raw, count, n_sigma, rng) -> list:
    """``count`` synthetic strings with ``n_sigma`` electrons placed ∝ ``n_raw``."""
    n_raw = np.asarray(n_raw, dtype=np.float64)
    weights = n_raw if (n_raw > 0).sum() >= n_sigma else np.ones_like(n_raw)
    out = []
    for _ in range(count):
        s = 0
        for p in draw_without_replacement(weights, n_sigma, rng):
            s |= 1 << int(p)
        out.append(s)
    return out


def carry_over(C, D, tau, n_mo, members: MembershipTable = None) -> BatchCandidate:
    """Strings of the best subspace whose row- or column-max ``|C|`` exceeds ``tau``.

    Importance is the alpha marginal ``sum_nu |C[mu, nu]|^2``.
    """
    C = np.abs(np.asarray(C, dtype=np.float64))
    D = np.asarray(D, dtype=np.uint64)
    keep = (C.max(axis=1) > tau) | (C.max(axis=0) > tau)
    marginal = (C**2).sum(axis=1)
    entries = {}
    for i in np.flatnonzero(keep):
        mask = members.mask(D[i]) if members is not None else 0
        _accumulate(entries, D[i], marginal[i], mask, carried=True)
    return _from_entries(entries, n_mo)


def merge_truncate(new: BatchCandidate, carry: BatchCandidate, d_max: int, n_mo: int) -> BatchCandidate:
    """Union with summed importance; keep the top ``d_max`` (ties: lexicographic)."""
    entries = {}
    for cand in (new, carry):
        for s, imp, mask, c in zip(cand.strings, cand.importance, cand.masks, cand.carried):
            _accumulate(entries, s, imp, mask, c)
    merged = _from_entries(entries, n_mo)
    if len(merged) <= d_max:
        return merged
    # merged is already lexicographic, so a stable sort on -importance
    # breaks ties by string order
    order = np.argsort(-merged.importance, kind="stable")[:d_max]
    order = np.sort(order)
    return BatchCandidate(
        strings=merged.strings[order],
        importance=merged.importance[order],
        masks=[merged.masks[i] for i in order],
        carried=merged.carried[order],
    )


def cluster_pools(strings, weights, labels, K, n_mo):
    """Split a weighted string list into per-cluster pools normalized within each cluster."""
    strings = np.asarray(strings, dtype=np.uint64)
    weights = np.asarray(weights, dtype=np.float64)
    labels = np.asarray(labels)
    pools = []
    for k in range(K):
        sel = labels == k
        order = np.argsort(lex_keys(strings[sel], n_mo), kind="stable")
        pools.append(StringPool(strings[sel][order], weights[sel][order]).normalized())
    return pools
