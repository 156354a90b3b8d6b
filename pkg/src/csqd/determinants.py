"""Single-spin occupation strings and determinants.

A spin string is an integer bitmask over ``n_mo`` spatial orbitals: orbital
``p`` is bit ``p``.  Arrays of strings use ``numpy.uint64``, which caps the
active space at 64 orbitals.  The text form prints orbital 0 leftmost, so
``"110"`` has orbitals 0 and 1 occupied.  A full measurement bitstring of
length ``2 * n_mo`` is the alpha block followed by the beta block.

Strings are ordered lexicographically by their text form wherever a
deterministic tie-break is needed; :func:`lex_keys` gives the integer key
that realises that order.

Determinants are built by applying creation operators in the canonical order
alpha orbitals ascending, then beta orbitals ascending.  Under this order the
phase of a one-body excitation within one spin block depends only on that
block's string (see :func:`excitation_sign`).
"""

from typing import NamedTuple

import numpy as np

from .errors import DimensionError, FormatError

MAX_ORBITALS = 64


class Determinant(NamedTuple):
    alpha: int
    beta: int


def check_n_mo(n_mo):
    if not 1 <= n_mo <= MAX_ORBITALS:
        raise DimensionError(f"n_mo={n_mo} outside [1, {MAX_ORBITALS}]")


def from_text(text: str) -> int:
    """Parse a 0/1 string (orbital 0 leftmost) into a bitmask."""
    if not text or any(ch not in "01" for ch in text):
        raise FormatError(f"not a 0/1 string: {text!r}")
    return int(text[::-1], 2)


def to_text(bits: int, n_mo: int) -> str:
    return format(int(bits), f"0{n_mo}b")[::-1]


def split_bitstring(x: str, n_mo: int) -> Determinant:
    """Split a ``2 * n_mo`` character bitstring into (alpha, beta) strings."""
    if len(x) != 2 * n_mo:
        raise FormatError(f"bitstring length {len(x)} != 2*n_mo={2 * n_mo}")
    return Determinant(from_text(x[:n_mo]), from_text(x[n_mo:]))


def join_bitstring(alpha: int, beta: int, n_mo: int) -> str:
    return to_text(alpha, n_mo) + to_text(beta, n_mo)


def hamming_weight(s: int) -> int:
    return int(s).bit_count()


def popcount(strings) -> np.ndarray:
    """Vectorised Hamming weight of a uint64 array."""
    a = np.asarray(strings, dtype=np.uint64)
    count = np.zeros(a.shape, dtype=np.int64)
    for byte in range(8):
        count += _BYTE_POPCOUNT[((a >> np.uint64(8 * byte)) & np.uint64(0xFF)).astype(np.intp)]
    return count


_BYTE_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


def excitation_degree(a: Determinant, b: Determinant) -> tuple[int, int]:
    """Per-sector excitation level (half the Hamming distance)."""
    da = (int(a[0]) ^ int(b[0])).bit_count()
    db = (int(a[1]) ^ int(b[1])).bit_count()
    return da // 2, db // 2


def excitation_sign(s: int, p: int, r: int) -> int:
    """Phase of ``a+_p a_r`` acting on string ``s`` (``r`` occupied).

    Equals ``(-1)**k`` where ``k`` counts occupied orbitals strictly between
    ``p`` and ``r``.
    """
    lo, hi = (p, r) if p < r else (r, p)
    if hi - lo < 2:
        return 1
    mask = ((1 << hi) - 1) ^ ((1 << (lo + 1)) - 1)
    return -1 if (int(s) & mask).bit_count() % 2 else 1


def lex_key(bits: int, n_mo: int) -> int:
    """Integer key whose natural order is the lexicographic order of the text form."""
    return int(to_text(bits, n_mo), 2)


def lex_keys(strings, n_mo: int) -> np.ndarray:
    a = np.asarray(strings, dtype=np.uint64)
    out = np.zeros(a.shape, dtype=np.uint64)
    one = np.uint64(1)
    for p in range(n_mo):
        out |= ((a >> np.uint64(p)) & one) << np.uint64(n_mo - 1 - p)
    return out


def lex_sorted(strings, n_mo: int) -> np.ndarray:
    a = np.asarray(strings, dtype=np.uint64)
    return a[np.argsort(lex_keys(a, n_mo), kind="stable")]


def occupations(strings, n_mo: int) -> np.ndarray:
    """(m, n_mo) float array of 0/1 occupations."""
    a = np.asarray(strings, dtype=np.uint64).reshape(-1)
    shifts = np.arange(n_mo, dtype=np.uint64)
    return ((a[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.float64)


def from_occupations(occ) -> np.ndarray:
    occ = np.asarray(occ)
    if occ.ndim == 1:
        occ = occ[None, :]
    weights = np.uint64(1) << np.arange(occ.shape[1], dtype=np.uint64)
    return (occ.astype(np.uint64) * weights[None, :]).sum(axis=1, dtype=np.uint64)


def all_strings(n_mo: int, n_sigma: int) -> np.ndarray:
    """Every string with ``n_sigma`` electrons, lexicographically ascending."""
    from itertools import combinations

    check_n_mo(n_mo)
    if not 0 <= n_sigma <= n_mo:
        return np.zeros(0, dtype=np.uint64)
    out = [sum(1 << p for p in occ) for occ in combinations(range(n_mo), n_sigma)]
    return lex_sorted(np.array(out, dtype=np.uint64), n_mo)
