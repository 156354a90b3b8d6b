# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sigma-build kernels.

Same interface and results as ``_kernels_py``.  Output rows are owned by a
single thread and accumulated in a fixed order, so results do not depend on
the OpenMP thread count.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange
from libc.stdint cimport int32_t, int64_t, uint64_t

cnp.import_array()


cdef extern from *:
    """
    static inline int csqd_popcount(unsigned long long x) { return __builtin_popcountll(x); }
    static inline int csqd_ctz(unsigned long long x) { return __builtin_ctzll(x); }
    """
    int csqd_popcount(unsigned long long x) nogil
    int csqd_ctz(unsigned long long x) nogil


cdef inline double _sign_between(uint64_t s, int p, int r) noexcept nogil:
    cdef int lo = p if p < r else r
    cdef int hi = r if p < r else p
    cdef uint64_t mask
    if hi - lo < 2:
        return 1.0
    mask = ((<uint64_t>1 << hi) - 1) & ~((<uint64_t>1 << (lo + 1)) - 1)
    return -1.0 if csqd_popcount(s & mask) & 1 else 1.0


cdef inline int64_t _find(const uint64_t[::1] sorted_s, const int64_t[::1] order, uint64_t key) noexcept nogil:
    cdef int64_t lo = 0, hi = sorted_s.shape[0] - 1, mid
    while lo <= hi:
        mid = (lo + hi) >> 1
        if sorted_s[mid] == key:
            return order[mid]
        if sorted_s[mid] < key:
            lo = mid + 1
        else:
            hi = mid - 1
    return -1


def single_excitations(strings, int n_orb):
    cdef const uint64_t[::1] s = np.ascontiguousarray(strings, dtype=np.uint64)
    cdef int64_t n_d = s.shape[0]
    cdef int64_t[::1] order = np.ascontiguousarray(np.argsort(np.asarray(s), kind="stable"), dtype=np.int64)
    cdef uint64_t[::1] sorted_s = np.ascontiguousarray(np.asarray(s)[np.asarray(order)])
    cdef int64_t[::1] offsets = np.zeros(n_d + 1, dtype=np.int64)
    cdef int64_t i, j, k, total
    cdef int p, r
    cdef uint64_t src, cand

    for i in prange(n_d, nogil=True, schedule="static"):
        k = 0
        for r in range(n_orb):
            if not (s[i] >> r) & 1:
                continue
            for p in range(n_orb):
                if p == r:
                    k = k + 1
                elif not (s[i] >> p) & 1:
                    if _find(sorted_s, order, (s[i] ^ (<uint64_t>1 << r)) | (<uint64_t>1 << p)) >= 0:
                        k = k + 1
        offsets[i + 1] = k
    total = 0
    for i in range(n_d):
        total += offsets[i + 1]
        offsets[i + 1] = total

    exc_p_arr = np.empty(total, dtype=np.int32)
    exc_r_arr = np.empty(total, dtype=np.int32)
    target_arr = np.empty(total, dtype=np.int64)
    sign_arr = np.empty(total, dtype=np.float64)
    cdef int32_t[::1] exc_p = exc_p_arr
    cdef int32_t[::1] exc_r = exc_r_arr
    cdef int64_t[::1] target = target_arr
    cdef double[::1] sign = sign_arr

    for i in prange(n_d, nogil=True, schedule="static"):
        k = offsets[i]
        for r in range(n_orb):
            if not (s[i] >> r) & 1:
                continue
            for p in range(n_orb):
                if p == r:
                    exc_p[k] = p
                    exc_r[k] = r
                    target[k] = i
                    sign[k] = 1.0
                    k = k + 1
                elif not (s[i] >> p) & 1:
                    j = _find(sorted_s, order, (s[i] ^ (<uint64_t>1 << r)) | (<uint64_t>1 << p))
                    if j >= 0:
                        exc_p[k] = p
                        exc_r[k] = r
                        target[k] = j
                        sign[k] = _sign_between(s[i], p, r)
                        k = k + 1
    return np.asarray(offsets), exc_p_arr, exc_r_arr, target_arr, sign_arr


cdef inline double _element(uint64_t si, uint64_t sj, int n_orb,
                            const double[:, ::1] h, const double[:, :, :, ::1] eri) noexcept nogil:
    """<si| H_same_spin |sj> for strings differing by at most two electrons."""
    cdef uint64_t diff = si ^ sj, created, removed, mid
    cdef int deg = csqd_popcount(diff)
    cdef int p, r, k, q, p1, p2, r1, r2
    cdef double val = 0.0
    if deg == 0:
        for p in range(n_orb):
            if (si >> p) & 1:
                val = val + h[p, p]
                for q in range(n_orb):
                    if q != p and (si >> q) & 1:
                        val = val + 0.5 * (eri[p, p, q, q] - eri[p, q, q, p])
        return val
    if deg == 2:
        p = csqd_ctz(si & diff)
        r = csqd_ctz(sj & diff)
        val = h[p, r]
        for k in range(n_orb):
            if (sj >> k) & 1 and k != r:
                val = val + eri[p, r, k, k] - eri[p, k, k, r]
        return _sign_between(sj, p, r) * val
    if deg == 4:
        created = si & diff
        removed = sj & diff
        p1 = csqd_ctz(created)
        p2 = csqd_ctz(created & (created - 1))
        r1 = csqd_ctz(removed)
        r2 = csqd_ctz(removed & (removed - 1))
        mid = (sj ^ (<uint64_t>1 << r2)) | (<uint64_t>1 << p2)
        return (_sign_between(sj, p2, r2) * _sign_between(mid, p1, r1)
                * (eri[p1, r1, p2, r2] - eri[p1, r2, p2, r1]))
    return 0.0


def same_spin_matrix(strings, int n_orb, h, eri):
    cdef const uint64_t[::1] s = np.ascontiguousarray(strings, dtype=np.uint64)
    cdef const double[:, ::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef const double[:, :, :, ::1] ev = np.ascontiguousarray(eri, dtype=np.float64)
    cdef int64_t n_d = s.shape[0]
    cdef int64_t[::1] counts = np.zeros(n_d + 1, dtype=np.int64)
    cdef int64_t i, j, k, total

    for i in prange(n_d, nogil=True, schedule="dynamic"):
        k = 0
        for j in range(n_d):
            if csqd_popcount(s[i] ^ s[j]) <= 4:
                k = k + 1
        counts[i + 1] = k
    total = 0
    for i in range(n_d):
        total += counts[i + 1]
        counts[i + 1] = total

    rows_arr = np.empty(total, dtype=np.int64)
    cols_arr = np.empty(total, dtype=np.int64)
    vals_arr = np.empty(total, dtype=np.float64)
    cdef int64_t[::1] rows = rows_arr
    cdef int64_t[::1] cols = cols_arr
    cdef double[::1] vals = vals_arr
    for i in prange(n_d, nogil=True, schedule="dynamic"):
        k = counts[i]
        for j in range(n_d):
            if csqd_popcount(s[i] ^ s[j]) <= 4:
                rows[k] = i
                cols[k] = j
                vals[k] = _element(s[i], s[j], n_orb, hv, ev)
                k = k + 1
    return rows_arr, cols_arr, vals_arr


class OppositeSpin:
    """sigma[i', j'] = sum V[pr, qs] <i'|E_pr|i> <j'|E_qs|j> C[i, j] (gather form)."""

    def __init__(self, excitations, v, n_d, n_orb):
        offsets, exc_p, exc_r, target, sign = excitations
        self.n_d = int(n_d)
        self.offsets = np.ascontiguousarray(offsets, dtype=np.int64)
        # a+_p a_r maps i -> t with the same phase as a+_r a_p maps t -> i,
        # so the excitation list of the output string enumerates its sources.
        self.pair_t = np.ascontiguousarray(exc_r.astype(np.int64) * n_orb + exc_p, dtype=np.int64)
        self.source = np.ascontiguousarray(target, dtype=np.int64)
        self.sign = np.ascontiguousarray(sign, dtype=np.float64)
        self.v = np.ascontiguousarray(v, dtype=np.float64)

    def __call__(self, c):
        c = np.ascontiguousarray(np.asarray(c, dtype=np.float64).reshape(self.n_d, self.n_d))
        out = np.zeros((self.n_d, self.n_d))
        _gather(c, out, self.offsets, self.pair_t, self.source, self.sign, self.v)
        return out


cdef void _gather(const double[:, ::1] c, double[:, ::1] out, const int64_t[::1] offsets,
                  const int64_t[::1] pair_t, const int64_t[::1] source, const double[::1] sign,
                  const double[:, ::1] v) noexcept nogil:
    cdef int64_t n_d = c.shape[0]
    cdef int64_t i2, j2, e, f, i, pr
    cdef double sa, acc
    for i2 in prange(n_d, schedule="dynamic"):
        for e in range(offsets[i2], offsets[i2 + 1]):
            i = source[e]
            pr = pair_t[e]
            sa = sign[e]
            for j2 in range(n_d):
                acc = 0.0
                for f in range(offsets[j2], offsets[j2 + 1]):
                    acc = acc + v[pr, pair_t[f]] * sign[f] * c[i, source[f]]
                out[i2, j2] += sa * acc
