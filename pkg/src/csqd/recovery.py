"""Particle-number recovery guided by cluster-specific reference occupancies.

A wrong-Hamming-weight string is corrected by flipping ``|hw(mu) - N_sigma|``
bits: occupied bits are emptied when there are too many electrons and empty
bits are filled when there are too few.  Candidate positions are drawn
without replacement with probabilities proportional to a modified ReLU of
the flip score ``d_p = |mu_p - n_p|``, so orbitals whose occupation most
disagrees with the reference are the likeliest to flip.
"""

from dataclasses import dataclass

import numpy as np

from .determinants import hamming_weight, lex_keys, occupations, popcount
from .errors import DegenerateStateError, DimensionError, DomainError, ImpossibleCorrectionError, InputError

DELTA0 = 0.01


class MembershipTable:
    """Monotone map ``string -> K-bit membership vector``.

    Bits are only ever set.  Merging is a bitwise OR, hence commutative and
    idempotent.
    """

    def __init__(self, K: int, rows=None):
        self.K = int(K)
        self._bits = dict(rows or {})

    def __len__(self):
        return len(self._bits)

    def __contains__(self, s):
        return int(s) in self._bits

    def __eq__(self, other):
        return isinstance(other, MembershipTable) and self.K == other.K and self._bits == other._bits

    def copy(self):
        return MembershipTable(self.K, self._bits)

    def set(self, s, k):
        if not 0 <= k < self.K:
            raise IndexError(f"cluster {k} out of range for K={self.K}")
        s = int(s)
        self._bits[s] = self._bits.get(s, 0) | (1 << int(k))

    def set_mask(self, s, mask):
        s = int(s)
        self._bits[s] = self._bits.get(s, 0) | int(mask)

    def mask(self, s) -> int:
        return self._bits.get(int(s), 0)

    def vector(self, s) -> np.ndarray:
        m = self.mask(s)
        return np.array([(m >> k) & 1 for k in range(self.K)], dtype=bool)

    def matrix(self, strings) -> np.ndarray:
        """Boolean ``(len(strings), K)`` membership matrix."""
        return np.array([self.vector(s) for s in strings], dtype=bool).reshape(len(strings), self.K)

    def merge(self, other):
        for s, m in other.items():
            self.set_mask(s, m)
        return self

    def items(self):
        return self._bits.items()

    def strings(self):
        return sorted(self._bits)

    @classmethod
    def full(cls, strings, K):
        table = cls(K)
        for s in strings:
            table.set_mask(s, (1 << K) - 1)
        return table


def string_weights(C) -> np.ndarray:
    """``w_mu = sum_nu |C[mu, nu]|^2 + sum_nu |C[nu, mu]|^2`` for every row index."""
    sq = np.abs(np.asarray(C, dtype=np.float64)) ** 2
    return sq.sum(axis=1) + sq.sum(axis=0)


def string_weight(C, D, mu) -> float:
    D = [int(s) for s in D]
    try:
        i = D.index(int(mu))
    except ValueError:
        raise KeyError(f"string {mu} is not in the subspace") from None
    return float(string_weights(C)[i])


def normalize_reference(n, n_sigma):
    """Scale ``n`` to sum to ``n_sigma`` with every occupancy in ``[0, 1]``.

    Entries that would exceed 1 are capped and the excess is redistributed
    proportionally over the others; electrons left over once the support
    of ``n`` is saturated are spread uniformly over the remaining orbitals.
    An all-zero vector becomes uniform.
    """
    n = np.clip(np.asarray(n, dtype=np.float64), 0.0, None)
    if n.sum() <= 0.0:
        return np.full(n.shape, n_sigma / n.shape[-1])
    out = np.zeros_like(n)
    full = np.zeros(n.shape, dtype=bool)
    while True:
        remaining = n_sigma - full.sum()
        if remaining <= 0:
            break
        free = ~full & (n > 0)
        support = n[free].sum()
        if support <= 0.0:
            rest = ~full
            out[rest] = remaining / rest.sum()
            break
        scaled = remaining * n / support
        over = free & (scaled > 1.0)
        if not over.any():
            out[free] = scaled[free]
            break
        full |= over
        out[over] = 1.0
    return out


def update_references(C, D, members: MembershipTable, n_sigma: int, n_mo: int, previous=None) -> np.ndarray:
    """Membership-weighted average occupancies, normalized to ``n_sigma`` electrons.

    Returns a ``(K, n_mo)`` array.  Clusters with no weight on ``D`` keep
    their row of ``previous`` (uniform occupancy if ``previous`` is None).
    """
    D = np.asarray(D, dtype=np.uint64)
    w = string_weights(C)
    if len(w) != len(D):
        raise DimensionError(f"coefficient matrix has {len(w)} rows for {len(D)} strings")
    x = occupations(D, n_mo)
    member = members.matrix(D).astype(np.float64)
    agg = (member * w[:, None]).T @ x
    totals = agg.sum(axis=1)
    if not (totals > 0).any():
        raise DegenerateStateError("no cluster carries weight in the current solution")
    if previous is None:
        previous = np.full((members.K, n_mo), n_sigma / n_mo)
    refs = np.array(previous, dtype=np.float64, copy=True)
    live = totals > 0
    refs[live] = n_sigma * agg[live] / totals[live, None]
    return refs


def flip_scores(mu, n, n_mo=None) -> np.ndarray:
    n = np.asarray(n, dtype=np.float64)
    if n_mo is None:
        n_mo = n.shape[-1]
    if n.shape[-1] != n_mo:
        raise DimensionError(f"reference of length {n.shape[-1]} for {n_mo} orbitals")
    bits = occupations([mu], n_mo)[0]
    return np.abs(bits - n)


def relu_weight(d, f, delta0=DELTA0):
    """Modified ReLU: ``delta0 d / f`` up to ``d = f``, then linear up to 1 at ``d = 1``."""
    d = np.asarray(d, dtype=np.float64)
    if ((d < -1e-12) | (d > 1 + 1e-12)).any():
        raise DomainError(f"flip score outside [0, 1]: {d}")
    if not 0.0 < f < 1.0:
        raise DomainError(f"filling fraction f={f} outside (0, 1)")
    d = np.clip(d, 0.0, 1.0)
    out = np.where(d <= f, delta0 * d / f, delta0 + (1.0 - delta0) * (d - f) / (1.0 - f))
    return out if out.ndim else float(out)


def draw_without_replacement(weights, count, rng) -> np.ndarray:
    """Sequential weighted draws with renormalization after each pick.

    When the remaining weight is zero the draw is uniform over the
    remaining candidates.
    """
    w = np.array(weights, dtype=np.float64)
    if count > len(w):
        raise ImpossibleCorrectionError(f"cannot draw {count} of {len(w)} candidates")
    alive = np.ones(len(w), dtype=bool)
    picks = np.empty(count, dtype=np.int64)
    for i in range(count):
        cand = np.flatnonzero(alive)
        cw = w[cand]
        total = cw.sum()
        p = cw / total if total > 0 else np.full(len(cand), 1.0 / len(cand))
        j = cand[rng.choice(len(cand), p=p)]
        picks[i] = j
        alive[j] = False
    return picks


def recover_string(mu, n, n_sigma, rng, n_mo=None, delta0=DELTA0) -> int:
    """Flip bits of ``mu`` until it carries exactly ``n_sigma`` electrons."""
    n = np.asarray(n, dtype=np.float64)
    n_mo = n.shape[-1] if n_mo is None else n_mo
    mu = int(mu)
    excess = hamming_weight(mu) - n_sigma
    if excess == 0:
        return mu
    if not 0 < n_sigma < n_mo:
        if n_sigma in (0, n_mo):
            return 0 if n_sigma == 0 else (1 << n_mo) - 1
        raise ImpossibleCorrectionError(f"n_sigma={n_sigma} impossible for {n_mo} orbitals")
    want = 1 if excess > 0 else 0
    cand = np.array([p for p in range(n_mo) if (mu >> p) & 1 == want], dtype=np.int64)
    if len(cand) < abs(excess):
        raise ImpossibleCorrectionError(f"{len(cand)} candidate bits for {abs(excess)} flips")
    d = flip_scores(mu, n, n_mo)[cand]
    weights = relu_weight(d, n_sigma / n_mo, delta0)
    for j in draw_without_replacement(np.atleast_1d(weights), abs(excess), rng):
        mu ^= 1 << int(cand[j])
    return mu


@dataclass(eq=False)
class StringPool:
    """Strings with nonnegative weights (lexicographic order when built by this module)."""

    strings: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.strings)

    def normalized(self):
        total = self.weights.sum()
        return StringPool(self.strings, self.weights / total if total > 0 else self.weights.copy())


def aggregate(strings, weights, n_mo) -> StringPool:
    """Merge duplicate strings (summing weights) and sort lexicographically."""
    strings = np.asarray(strings, dtype=np.uint64)
    weights = np.asarray(weights, dtype=np.float64)
    if len(strings) == 0:
        return StringPool(np.zeros(0, dtype=np.uint64), np.zeros(0))
    uniq, inv = np.unique(strings, return_inverse=True)
    summed = np.zeros(len(uniq))
    np.add.at(summed, inv, weights)
    order = np.argsort(lex_keys(uniq, n_mo), kind="stable")
    return StringPool(uniq[order], summed[order])


def refine_pool(correct: StringPool, incorrect: StringPool, ref, n_sigma, n_mo, rng, delta0=DELTA0) -> StringPool:
    """Correct every string of ``incorrect`` and pool it with ``correct``.

    Corrected strings inherit their source's weight; duplicates (among
    corrected strings and with correct ones) are merged; weights are
    renormalized to sum to 1.
    """
    fixed = [recover_string(s, ref, n_sigma, rng, n_mo, delta0) for s in incorrect.strings]
    strings = np.concatenate([np.asarray(correct.strings, dtype=np.uint64), np.array(fixed, dtype=np.uint64)])
    weights = np.concatenate([correct.weights, incorrect.weights])
    pool = aggregate(strings, weights, n_mo).normalized()
    if len(pool) and (popcount(pool.strings) != n_sigma).any():
        raise InputError("correct pool contains strings outside the particle sector")
    return pool


def refine_pools(correct, incorrect, refs, n_sigma, n_mo, rngs, delta0=DELTA0):
    """Refine every cluster's pool with its own reference and RNG stream."""
    return [
        refine_pool(c, i, ref, n_sigma, n_mo, rng, delta0)
        for c, i, ref, rng in zip(correct, incorrect, refs, rngs)
    ]
