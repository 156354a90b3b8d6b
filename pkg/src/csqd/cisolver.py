"""Projected diagonalization on the product basis ``D x D``.

The CI vector is stored as a matrix ``C[mu, nu]`` (alpha string ``mu``,
beta string ``nu``, both drawn from the same ordered string list ``D``);
flattened vectors are row-major.  The Hamiltonian action splits into

* ``H1 C + C H1^T``: one-body plus same-spin two-body terms, with ``H1`` the
  single-spin-sector Hamiltonian over ``D`` (Slater-Condon rules);
* the opposite-spin term ``sum (pr|qs) E^a_pr E^b_qs C``,

and ``S^2 = Sz(Sz+1) + N_beta - sum_pq E^a_pq E^b_qp`` reuses the
opposite-spin kernel with a Kronecker-delta "integral".
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import kernels
from .determinants import check_n_mo, from_text, occupations, popcount, to_text
from .errors import ArtifactIOError, ConvergenceError, DimensionError, InputError, SymmetryError
from .hamiltonian import ActiveSpaceHamiltonian


@dataclass
class DavidsonOptions:
    tol: float = 1e-9
    max_iter: int = 200
    max_subspace: int = 32
    keep_on_restart: int = 4
    check_symmetry: bool = True
    seed: int = 0


@dataclass(eq=False)
class SubspaceSolution:
    strings: np.ndarray
    coeffs: np.ndarray
    energy: float
    s2: float
    n_mo: int
    eigenvalue: float = float("nan")
    residual: float = float("nan")

    @property
    def dim(self) -> int:
        return len(self.strings) ** 2


class SubspaceOperator:
    """Matrix-free H_D and S^2_D on ``span(D x D)``.

    Connection lists and the same-spin matrix are built once; every
    application then touches only strings inside ``D``.
    """

    def __init__(self, ham: ActiveSpaceHamiltonian, strings, backend=None):
        strings = np.ascontiguousarray(strings, dtype=np.uint64)
        n = ham.n_orbitals
        _check_strings(strings, n)
        weights = popcount(strings)
        if len(strings) and (weights != ham.n_alpha).any():
            raise DimensionError(f"strings must all carry {ham.n_alpha} electrons")
        if ham.n_alpha != ham.n_beta:
            raise InputError("shared alpha/beta string lists require n_alpha == n_beta")
        impl = kernels.get_backend(backend) if isinstance(backend, (str, type(None))) else backend
        self.ham = ham
        self.strings = strings
        self.n_d = len(strings)
        self.n_sigma = ham.n_alpha
        exc = impl.single_excitations(strings, n)
        rows, cols, vals = impl.same_spin_matrix(strings, n, ham.h, ham.eri)
        self.h1 = sp.csr_matrix((vals, (rows, cols)), shape=(self.n_d, self.n_d))
        self._opp_h = impl.OppositeSpin(exc, ham.eri.reshape(n * n, n * n), self.n_d, n)
        v_s2 = np.zeros((n * n, n * n))
        for p in range(n):
            for r in range(n):
                v_s2[p * n + r, r * n + p] = 1.0
        self._opp_s2 = impl.OppositeSpin(exc, v_s2, self.n_d, n)

        occ = occupations(strings, n)
        h1_diag = self.h1.diagonal()
        coulomb = np.einsum("ppqq->pq", ham.eri)
        self.diag_h = (h1_diag[:, None] + h1_diag[None, :] + occ @ coulomb @ occ.T).ravel()
        paired = popcount(strings[:, None] & strings[None, :]) if self.n_d else np.zeros((0, 0))
        self.diag_s2 = (self.n_sigma - paired).astype(np.float64).ravel()

    @property
    def dim(self) -> int:
        return self.n_d * self.n_d

    def _as_matrix(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.size != self.dim:
            raise DimensionError(f"vector of length {v.size} for subspace dimension {self.dim}")
        return v.reshape(self.n_d, self.n_d)

    def apply_h(self, v) -> np.ndarray:
        c = self._as_matrix(v)
        out = self.h1 @ c
        out += (self.h1 @ c.T).T
        out += self._opp_h(c)
        return out.ravel()

    def apply_s2(self, v) -> np.ndarray:
        c = self._as_matrix(v)
        return (self.n_sigma * c - self._opp_s2(c)).ravel()

    def penalized(self, lam):
        """Callable for ``H_D + lam * (S^2)^2`` and its approximate diagonal."""
        if lam == 0.0:
            return self.apply_h, self.diag_h

        def apply(v):
            return self.apply_h(v) + lam * self.apply_s2(self.apply_s2(v))

        return apply, self.diag_h + lam * self.diag_s2**2


def _check_strings(strings, n):
    check_n_mo(n)
    if len(strings) and n < 64 and (strings >> np.uint64(n)).any():
        raise DimensionError(f"string has occupations beyond orbital {n - 1}")
    if len(np.unique(strings)) != len(strings):
        raise InputError("string list contains duplicates")


def h_matvec(ham: ActiveSpaceHamiltonian, strings, v, backend=None) -> np.ndarray:
    """``H_D v`` without the constant ``e_core``."""
    return SubspaceOperator(ham, strings, backend).apply_h(v)


def s2_matvec(strings, v, n_mo=None, backend=None) -> np.ndarray:
    """``S^2 v`` on ``span(D x D)``; ``n_mo`` defaults to the highest occupied orbital + 1."""
    strings = np.ascontiguousarray(strings, dtype=np.uint64)
    if n_mo is None:
        n_mo = max(1, max((int(s).bit_length() for s in strings), default=1))
    n_sigma = int(popcount(strings[:1])[0]) if len(strings) else 0
    dummy = ActiveSpaceHamiltonian(
        n_orbitals=n_mo,
        h=np.zeros((n_mo, n_mo)),
        eri=np.zeros((n_mo,) * 4),
        e_core=0.0,
        n_alpha=n_sigma,
        n_beta=n_sigma,
    )
    return SubspaceOperator(dummy, strings, backend).apply_s2(v)


def davidson(apply, dim, opts=None, diag=None):
    """Lowest eigenpair of a symmetric linear operator.

    ``apply`` maps a length-``dim`` vector to its image.  ``diag`` is the
    operator diagonal used for preconditioning (computed column by column
    when omitted).  The search space starts from the unit vector on the
    lowest diagonal element plus one fixed pseudo-random vector, and is
    thick-restarted to ``opts.keep_on_restart`` Ritz vectors whenever it
    reaches ``opts.max_subspace``.  Convergence: residual norm below
    ``opts.tol * max(1, |theta|)``.
    """
    opts = opts or DavidsonOptions()
    if dim < 1:
        raise DimensionError("empty operator")
    if diag is None:
        diag = np.array([apply(np.eye(1, dim, i).ravel())[i] for i in range(dim)])
    diag = np.asarray(diag, dtype=np.float64)
    rng = np.random.default_rng(opts.seed)

    if opts.check_symmetry and dim > 1:
        u, w = rng.standard_normal(dim), rng.standard_normal(dim)
        au, aw = apply(u), apply(w)
        lhs, rhs = u @ aw, au @ w
        scale = np.linalg.norm(u) * np.linalg.norm(aw) + np.linalg.norm(au) * np.linalg.norm(w)
        if abs(lhs - rhs) > 1e-10 * max(scale, 1.0):
            raise SymmetryError(f"operator is not symmetric: <u,Aw>={lhs!r}, <Au,w>={rhs!r}")

    basis = np.zeros((dim, opts.max_subspace + 2))
    images = np.zeros_like(basis)
    basis[np.argmin(diag), 0] = 1.0
    m = 1
    if dim > 1:
        extra = rng.standard_normal(dim)
        extra -= basis[:, 0] * (basis[:, 0] @ extra)
        basis[:, 1] = extra / np.linalg.norm(extra)
        m = 2
    for k in range(m):
        images[:, k] = apply(basis[:, k])

    best = np.inf
    theta = np.nan
    for _ in range(opts.max_iter):
        v, av = basis[:, :m], images[:, :m]
        small = v.T @ av
        small = 0.5 * (small + small.T)
        evals, evecs = np.linalg.eigh(small)
        theta = evals[0]
        x = v @ evecs[:, 0]
        ax = av @ evecs[:, 0]
        resid = ax - theta * x
        rnorm = float(np.linalg.norm(resid))
        best = min(best, rnorm)
        if rnorm < opts.tol * max(1.0, abs(theta)) or m >= dim:
            norm = np.linalg.norm(x)
            return float(theta), x / norm

        if m >= opts.max_subspace:
            keep = min(opts.keep_on_restart, m)
            basis[:, :keep] = v @ evecs[:, :keep]
            images[:, :keep] = av @ evecs[:, :keep]
            m = keep
            v = basis[:, :m]

        denom = diag - theta
        denom[np.abs(denom) < 1e-8] = 1e-8
        t = resid / denom
        t = _orthogonalize(t, v)
        if t is None:
            t = _orthogonalize(resid, v)
        if t is None:
            t = _orthogonalize(rng.standard_normal(dim), v)
        if t is None:
            return float(theta), x / np.linalg.norm(x)
        basis[:, m] = t
        images[:, m] = apply(t)
        m += 1

    raise ConvergenceError(
        f"Davidson did not converge in {opts.max_iter} iterations (best residual {best:.3e})",
        residual=best,
        eigenvalue=float(theta),
    )


def _orthogonalize(t, v):
    norm0 = np.linalg.norm(t)
    if norm0 == 0.0:
        return None
    for _ in range(2):
        t = t - v @ (v.T @ t)
    norm = np.linalg.norm(t)
    if norm < 1e-10 * norm0 or norm < 1e-14:
        return None
    return t / norm


def solve(ham: ActiveSpaceHamiltonian, strings, lam=0.1, opts=None, backend=None) -> SubspaceSolution:
    """Lowest eigenpair of ``H_D + lam (S^2)^2`` on ``span(D x D)``.

    The reported energy is the unpenalized Rayleigh quotient plus ``e_core``.
    """
    strings = np.ascontiguousarray(strings, dtype=np.uint64)
    if len(strings) == 0:
        raise InputError("cannot diagonalize an empty string set")
    op = SubspaceOperator(ham, strings, backend)
    apply, diag = op.penalized(lam)
    eigenvalue, vec = davidson(apply, op.dim, opts, diag=diag)
    hv = op.apply_h(vec)
    energy = float(vec @ hv) + ham.e_core
    s2 = float(vec @ op.apply_s2(vec))
    if vec[np.argmax(np.abs(vec))] < 0:
        vec = -vec
    resid = float(np.linalg.norm(apply(vec) - eigenvalue * vec))
    return SubspaceSolution(
        strings=strings,
        coeffs=vec.reshape(op.n_d, op.n_d),
        energy=energy,
        s2=s2,
        n_mo=ham.n_orbitals,
        eigenvalue=eigenvalue + ham.e_core,
        residual=resid,
    )


_HEADER_FIELDS = ("n_mo", "n_strings", "energy", "s2", "layout")


def write_solution(sol: SubspaceSolution, prefix):
    """Write ``<prefix>.header``, ``<prefix>.strings`` and ``<prefix>.bin``.

    The coefficient file is row-major, little-endian 8-byte floats.
    """
    prefix = Path(prefix)
    try:
        prefix.with_suffix(".header").write_text(
            f"n_mo\t{sol.n_mo}\n"
            f"n_strings\t{len(sol.strings)}\n"
            f"energy\t{sol.energy!r}\n"
            f"s2\t{sol.s2!r}\n"
            "layout\trow-major float64 little-endian, C[alpha, beta]\n"
        )
        prefix.with_suffix(".strings").write_text("".join(to_text(s, sol.n_mo) + "\n" for s in sol.strings))
        prefix.with_suffix(".bin").write_bytes(np.ascontiguousarray(sol.coeffs, dtype="<f8").tobytes())
    except OSError as exc:
        raise ArtifactIOError(f"{prefix}: {exc}") from exc


def read_solution(prefix) -> SubspaceSolution:
    prefix = Path(prefix)
    try:
        header = dict(
            line.split("\t", 1) for line in prefix.with_suffix(".header").read_text().splitlines() if line
        )
        strings = np.array(
            [from_text(t) for t in prefix.with_suffix(".strings").read_text().split()], dtype=np.uint64
        )
        raw = prefix.with_suffix(".bin").read_bytes()
    except OSError as exc:
        raise ArtifactIOError(f"{prefix}: {exc}") from exc
    n_d = int(header["n_strings"])
    if len(raw) != 8 * n_d * n_d or len(strings) != n_d:
        raise ArtifactIOError(f"{prefix}: coefficient file does not match {n_d} strings")
    coeffs = np.frombuffer(raw, dtype="<f8").reshape(n_d, n_d).astype(np.float64)
    return SubspaceSolution(
        strings=strings,
        coeffs=coeffs,
        energy=float(header["energy"]),
        s2=float(header["s2"]),
        n_mo=int(header["n_mo"]),
    )
