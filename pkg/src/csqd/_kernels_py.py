"""Pure numpy/scipy implementation of the sigma-build kernels.

Mirrors the compiled extension's interface exactly; used when the extension
is not built or ``CSQD_KERNELS=python`` is set.
"""

import numpy as np
import scipy.sparse as sp

_ONE = np.uint64(1)


def _log2_bits(x):
    """Index of the single set bit of each element of ``x``."""
    return np.log2(x.astype(np.float64)).astype(np.int64)


def _lowest_bit(x):
    return x & (~x + _ONE)


def _parity_between(s, p, r):
    """(-1)**(number of set bits of ``s`` strictly between ``p`` and ``r``)."""
    lo = np.minimum(p, r).astype(np.uint64)
    hi = np.maximum(p, r).astype(np.uint64)
    below_hi = (_ONE << hi) - _ONE
    upto_lo = (_ONE << (lo + _ONE)) - _ONE
    mask = below_hi & ~upto_lo
    count = np.zeros(len(s), dtype=np.int64)
    masked = s & mask
    for byte in range(8):
        count += _BYTE[((masked >> np.uint64(8 * byte)) & np.uint64(0xFF)).astype(np.intp)]
    return np.where(count % 2, -1.0, 1.0)


_BYTE = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


def _popcount(x):
    count = np.zeros(x.shape, dtype=np.int64)
    for byte in range(8):
        count += _BYTE[((x >> np.uint64(8 * byte)) & np.uint64(0xFF)).astype(np.intp)]
    return count


def single_excitations(strings, n_orb):
    """Excitations ``a+_p a_r`` that map each string onto another string of the set.

    Returns ``(offsets, exc_p, exc_r, target, sign)``; entries for source
    ``i`` occupy ``offsets[i]:offsets[i+1]``.  Number operators (``p == r``)
    are included.
    """
    strings = np.ascontiguousarray(strings, dtype=np.uint64)
    n_d = len(strings)
    order = np.argsort(strings)
    sorted_strings = strings[order]
    src, ps, rs, tgt, sgn = [], [], [], [], []
    idx = np.arange(n_d)
    for r in range(n_orb):
        rbit = _ONE << np.uint64(r)
        occ_r = (strings & rbit) != 0
        for p in range(n_orb):
            pbit = _ONE << np.uint64(p)
            if p == r:
                mask = occ_r
                cand = strings[mask]
                pos = idx[mask]
                src.append(pos), tgt.append(pos)
                sgn.append(np.ones(len(pos)))
            else:
                mask = occ_r & ((strings & pbit) == 0)
                cand = (strings[mask] ^ rbit) | pbit
                loc = np.searchsorted(sorted_strings, cand)
                loc = np.minimum(loc, n_d - 1)
                hit = sorted_strings[loc] == cand if n_d else np.zeros(0, bool)
                pos = idx[mask][hit]
                src.append(pos)
                tgt.append(order[loc[hit]])
                sgn.append(_parity_between(strings[pos], np.full(len(pos), p), np.full(len(pos), r)))
            ps.append(np.full(len(pos), p, dtype=np.int32))
            rs.append(np.full(len(pos), r, dtype=np.int32))
    if src:
        src = np.concatenate(src)
        keys = np.lexsort((np.concatenate(ps), np.concatenate(rs), src))
        src = src[keys]
        exc_p = np.concatenate(ps)[keys]
        exc_r = np.concatenate(rs)[keys]
        target = np.concatenate(tgt).astype(np.int64)[keys]
        sign = np.concatenate(sgn)[keys]
    else:
        src = np.zeros(0, np.int64)
        exc_p = exc_r = np.zeros(0, np.int32)
        target = np.zeros(0, np.int64)
        sign = np.zeros(0)
    offsets = np.zeros(n_d + 1, dtype=np.int64)
    np.add.at(offsets, src + 1, 1)
    offsets = np.cumsum(offsets)
    return offsets, exc_p.astype(np.int32), exc_r.astype(np.int32), target, sign.astype(np.float64)


def same_spin_matrix(strings, n_orb, h, eri):
    """Single-spin-sector Hamiltonian over ``strings`` as COO triplets.

    Includes the one-body term and the same-spin two-body term, i.e. the
    operator acting on one spin block when the other block is empty.
    """
    s = np.ascontiguousarray(strings, dtype=np.uint64)
    n_d = len(s)
    h = np.asarray(h)
    eri = np.asarray(eri)
    occ = ((s[:, None] >> np.arange(n_orb, dtype=np.uint64)[None, :]) & _ONE).astype(np.float64)

    coul = np.einsum("ppqq->pq", eri)
    exch = np.einsum("pqqp->pq", eri)
    diag = occ @ np.diag(h) + 0.5 * np.einsum("ip,pq,iq->i", occ, coul - exch, occ)

    rows, cols, vals = [np.arange(n_d)], [np.arange(n_d)], [diag]
    if n_d > 1:
        ii, jj = np.nonzero(np.triu(np.ones((n_d, n_d), dtype=bool), 1))
        diff = s[ii] ^ s[jj]
        deg = _popcount(diff)

        one = deg == 2
        i1, j1 = ii[one], jj[one]
        if len(i1):
            p = _log2_bits(s[i1] & diff[one])
            r = _log2_bits(s[j1] & diff[one])
            sign = _parity_between(s[j1], p, r)
            two = np.einsum("ik,ik->i", occ[j1], eri[p, r][:, np.arange(n_orb), np.arange(n_orb)])
            two -= np.einsum("ik,ik->i", occ[j1], eri[p[:, None], np.arange(n_orb)[None, :], np.arange(n_orb)[None, :], r[:, None]])
            val = sign * (h[p, r] + two)
            rows += [i1, j1]
            cols += [j1, i1]
            vals += [val, val]

        dbl = deg == 4
        i2, j2 = ii[dbl], jj[dbl]
        if len(i2):
            created = s[i2] & diff[dbl]
            removed = s[j2] & diff[dbl]
            pb1 = _lowest_bit(created)
            rb1 = _lowest_bit(removed)
            p1, p2 = _log2_bits(pb1), _log2_bits(created ^ pb1)
            r1, r2 = _log2_bits(rb1), _log2_bits(removed ^ rb1)
            sign_a = _parity_between(s[j2], p2, r2)
            mid = (s[j2] ^ (_ONE << r2.astype(np.uint64))) | (_ONE << p2.astype(np.uint64))
            sign_b = _parity_between(mid, p1, r1)
            val = sign_a * sign_b * (eri[p1, r1, p2, r2] - eri[p1, r2, p2, r1])
            rows += [i2, j2]
            cols += [j2, i2]
            vals += [val, val]
    return (
        np.concatenate(rows).astype(np.int64),
        np.concatenate(cols).astype(np.int64),
        np.concatenate(vals).astype(np.float64),
    )


class OppositeSpin:
    """sigma[i', j'] = sum V[pr, qs] <i'|E_pr|i> <j'|E_qs|j> C[i, j].

    Evaluated as ``sum_pr (E_pr C) G_pr^T`` with ``G_pr = sum_qs V[pr, qs] E_qs``.
    """

    def __init__(self, excitations, v, n_d, n_orb):
        offsets, exc_p, exc_r, target, sign = excitations
        v = np.asarray(v, dtype=np.float64)
        src = np.repeat(np.arange(n_d), np.diff(offsets))
        pair = exc_p.astype(np.int64) * n_orb + exc_r
        self.n_d = n_d
        self.terms = []
        present = np.unique(pair)
        e_mats = {}
        for pr in present:
            sel = pair == pr
            e_mats[int(pr)] = sp.csr_matrix((sign[sel], (target[sel], src[sel])), shape=(n_d, n_d))
        for pr in present:
            weights = v[pr, present]
            nz = np.nonzero(weights)[0]
            if len(nz) == 0:
                continue
            g = sum(weights[k] * e_mats[int(present[k])] for k in nz)
            self.terms.append((e_mats[int(pr)], sp.csr_matrix(g)))

    def __call__(self, c):
        c = np.asarray(c, dtype=np.float64).reshape(self.n_d, self.n_d)
        out = np.zeros((self.n_d, self.n_d))
        for e, g in self.terms:
            out += (g @ (e @ c).T).T
        return out
