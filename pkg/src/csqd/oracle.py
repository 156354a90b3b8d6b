"""Brute-force reference results for small active spaces.

Everything here is derived from second quantization directly: a determinant
is the ascending tuple of occupied spin-orbital indices (alpha orbital ``p``
is spin orbital ``p``, beta orbital ``p`` is ``n_mo + p``) and operator
strings are applied one creation/annihilation operator at a time with the
Jordan-Wigner parity.  None of the Slater-Condon machinery used by the
subspace solver is reused, so agreement between the two is a real check.
"""

from dataclasses import dataclass
from functools import cached_property
from math import comb

import numpy as np

from .determinants import all_strings, to_text
from .errors import SizeError
from .hamiltonian import ActiveSpaceHamiltonian

DEFAULT_CAP = 4_000_000


@dataclass(frozen=True, eq=False)
class DenseSectorBasis:
    n_mo: int
    n_alpha: int
    n_beta: int

    @cached_property
    def alpha_strings(self) -> np.ndarray:
        return all_strings(self.n_mo, self.n_alpha)

    @cached_property
    def beta_strings(self) -> np.ndarray:
        return all_strings(self.n_mo, self.n_beta)

    @cached_property
    def alpha_index(self) -> dict:
        return {int(s): i for i, s in enumerate(self.alpha_strings)}

    @cached_property
    def beta_index(self) -> dict:
        return {int(s): i for i, s in enumerate(self.beta_strings)}

    @property
    def shape(self):
        return len(self.alpha_strings), len(self.beta_strings)

    @property
    def size(self) -> int:
        return comb(self.n_mo, self.n_alpha) * comb(self.n_mo, self.n_beta)

    def texts(self):
        """Full bitstrings in row-major (alpha, beta) order."""
        return [
            to_text(a, self.n_mo) + to_text(b, self.n_mo)
            for a in self.alpha_strings
            for b in self.beta_strings
        ]


def _annihilate(det, j):
    if j not in det:
        return None, 0
    k = det.index(j)
    return det[:k] + det[k + 1 :], (-1) ** k


def _create(det, j):
    if j in det:
        return None, 0
    k = sum(1 for i in det if i < j)
    return det[:k] + (j,) + det[k:], (-1) ** k


def apply_string(ops, det):
    """Apply ``ops`` (rightmost first) to ``det``; returns (det, sign) or (None, 0).

    ``ops`` is a sequence of ``(dagger, spin_orbital)`` pairs written left to
    right as in the operator product.
    """
    sign = 1
    for dagger, j in reversed(ops):
        det, s = (_create if dagger else _annihilate)(det, j)
        if det is None:
            return None, 0
        sign *= s
    return det, sign


def _spin_orbital_dets(strings_a, strings_b, n_mo):
    dets = []
    for a in strings_a:
        occ_a = tuple(p for p in range(n_mo) if int(a) >> p & 1)
        for b in strings_b:
            occ_b = tuple(n_mo + p for p in range(n_mo) if int(b) >> p & 1)
            dets.append(occ_a + occ_b)
    return dets


def _hamiltonian_matrix(ham, dets):
    n = ham.n_orbitals
    index = {d: i for i, d in enumerate(dets)}
    mat = np.zeros((len(dets), len(dets)))
    h, eri = ham.h, ham.eri
    spin = lambda j: j // n  # noqa: E731
    orb = lambda j: j % n  # noqa: E731
    for col, det in enumerate(dets):
        for r in det:
            for p in range(spin(r) * n, spin(r) * n + n):
                new, sign = apply_string([(1, p), (0, r)], det)
                if new in index:
                    mat[index[new], col] += sign * h[orb(p), orb(r)]
        occupied = set(det)
        for r in det:
            for s in det:
                if s == r:
                    continue
                free = [j for j in range(2 * n) if j not in occupied or j in (r, s)]
                for p in (j for j in free if spin(j) == spin(r)):
                    for q in (j for j in free if spin(j) == spin(s) and j != p):
                        value = eri[orb(p), orb(r), orb(q), orb(s)]
                        if value == 0.0:
                            continue
                        new, sign = apply_string([(1, p), (1, q), (0, s), (0, r)], det)
                        if new in index:
                            mat[index[new], col] += 0.5 * sign * value
    return mat


def _s2_matrix(n_mo, dets):
    """S^2 = S- S+ + Sz (Sz + 1) from explicit spin-ladder operators."""
    index = {d: i for i, d in enumerate(dets)}
    mat = np.zeros((len(dets), len(dets)))
    for col, det in enumerate(dets):
        n_a = sum(1 for j in det if j < n_mo)
        sz = 0.5 * (n_a - (len(det) - n_a))
        mat[col, col] += sz * (sz + 1)
        for p in range(n_mo):
            for q in range(n_mo):
                # S- S+ = sum_{pq} a+_{q b} a_{q a} a+_{p a} a_{p b}
                new, sign = apply_string([(1, n_mo + q), (0, q), (1, p), (0, n_mo + p)], det)
                if new in index:
                    mat[index[new], col] += sign
    return mat


def _check_cap(dim, cap):
    if dim > cap:
        raise SizeError(f"dense dimension {dim} exceeds cap {cap}")


def sector_hamiltonian(ham: ActiveSpaceHamiltonian, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Dense sector Hamiltonian without ``e_core`` in row-major (alpha, beta) order."""
    basis = DenseSectorBasis(ham.n_orbitals, ham.n_alpha, ham.n_beta)
    _check_cap(basis.size, cap)
    dets = _spin_orbital_dets(basis.alpha_strings, basis.beta_strings, ham.n_orbitals)
    return _hamiltonian_matrix(ham, dets)


def sector_s2(ham: ActiveSpaceHamiltonian, cap: int = DEFAULT_CAP) -> np.ndarray:
    basis = DenseSectorBasis(ham.n_orbitals, ham.n_alpha, ham.n_beta)
    _check_cap(basis.size, cap)
    dets = _spin_orbital_dets(basis.alpha_strings, basis.beta_strings, ham.n_orbitals)
    return _s2_matrix(ham.n_orbitals, dets)


def dense_fci(ham: ActiveSpaceHamiltonian, cap: int = DEFAULT_CAP):
    """Exact sector ground state.

    Returns ``(energy, vector)`` where ``energy`` includes ``e_core`` and
    ``vector`` has shape ``DenseSectorBasis.shape`` (alpha index, beta index).
    The overall sign is fixed so the largest-magnitude coefficient is positive.
    """
    basis = DenseSectorBasis(ham.n_orbitals, ham.n_alpha, ham.n_beta)
    mat = sector_hamiltonian(ham, cap)
    evals, evecs = np.linalg.eigh(mat)
    vec = evecs[:, 0]
    if vec[np.argmax(np.abs(vec))] < 0:
        vec = -vec
    return float(evals[0]) + ham.e_core, vec.reshape(basis.shape)


def dense_projected(ham: ActiveSpaceHamiltonian, strings, with_s2=False, cap: int = DEFAULT_CAP):
    """Dense matrix of H restricted to span(D x D), row-major (mu, nu) order.

    ``strings`` is used for both spin sectors.  ``e_core`` is excluded.  With
    ``with_s2`` a pair ``(H_D, S2_D)`` is returned.
    """
    strings = np.asarray(strings, dtype=np.uint64)
    _check_cap(len(strings) ** 2, cap)
    dets = _spin_orbital_dets(strings, strings, ham.n_orbitals)
    mat = _hamiltonian_matrix(ham, dets)
    if with_s2:
        return mat, _s2_matrix(ham.n_orbitals, dets)
    return mat
