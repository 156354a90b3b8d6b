"""Active-space Hamiltonian: FCIDUMP ingestion, emission and validation.

Two-electron integrals are stored dense in chemists' notation,
``eri[p, r, q, s] = (pr|qs)``, so the Hamiltonian reads

    H = sum_{p,r,sigma} h[p,r] a+(p,sigma) a(r,sigma)
      + 1/2 sum_{p,r,q,s,sigma,tau} eri[p,r,q,s]
            a+(p,sigma) a+(q,tau) a(s,tau) a(r,sigma)

Indices are 0-based in memory and 1-based on disk.
"""

import io
import re
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, ParseError, RangeError

SYMMETRY_TOL = 1e-12
DUPLICATE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ActiveSpaceHamiltonian:
    n_orbitals: int
    h: np.ndarray
    eri: np.ndarray
    e_core: float
    n_alpha: int
    n_beta: int

    def __post_init__(self):
        h = np.ascontiguousarray(self.h, dtype=np.float64)
        eri = np.ascontiguousarray(self.eri, dtype=np.float64)
        h.flags.writeable = False
        eri.flags.writeable = False
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "eri", eri)
        object.__setattr__(self, "e_core", float(self.e_core))

    @property
    def n_sigma(self) -> int:
        return self.n_alpha

    @property
    def n_electrons(self) -> int:
        return self.n_alpha + self.n_beta


@dataclass(frozen=True)
class Violation:
    kind: str
    indices: tuple
    magnitude: float
    detail: str = field(default="", compare=False)

    def __str__(self):
        return f"{self.kind} at {self.indices}: {self.magnitude:.3e} {self.detail}".rstrip()


_HEADER_KEY = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*=\s*([^=]*?)(?=,?\s*[A-Za-z_][A-Za-z0-9_]*\s*=|$)")


def _parse_header(text, first_line):
    body = re.sub(r"&FCI|&END|/", " ", text, flags=re.IGNORECASE)
    values = {}
    for key, raw in _HEADER_KEY.findall(body.replace("\n", " ")):
        values[key.upper()] = raw.strip().rstrip(",").strip()
    for key in ("NORB", "NELEC"):
        if key not in values:
            raise ParseError(f"FCIDUMP header lacks {key}", line=first_line)
    try:
        norb = int(values["NORB"])
        nelec = int(values["NELEC"])
        ms2 = int(values.get("MS2", "0"))
    except ValueError as exc:
        raise ParseError(f"bad integer in FCIDUMP header: {exc}", line=first_line) from None
    if norb < 1 or nelec < 0:
        raise ParseError(f"NORB={norb}, NELEC={nelec} not admissible", line=first_line)
    if (nelec + ms2) % 2 or abs(ms2) > nelec:
        raise ParseError(f"NELEC={nelec} and MS2={ms2} are inconsistent", line=first_line)
    return norb, nelec, ms2


def _eri_images(p, r, q, s):
    return {
        (p, r, q, s), (r, p, q, s), (p, r, s, q), (r, p, s, q),
        (q, s, p, r), (s, q, p, r), (q, s, r, p), (s, q, r, p),
    }


def parse_fcidump(source) -> ActiveSpaceHamiltonian:
    """Read an FCIDUMP document from a path, byte/text stream or string content.

    Unlisted symmetry-equivalent integrals are filled from listed ones.
    Records ``value p 0 0 0`` (orbital energies) are ignored.
    """
    if isinstance(source, (str, Path)) and not str(source).lstrip().startswith("&"):
        with open(source, "rb") as fh:
            data = fh.read()
    elif isinstance(source, str):
        data = source
    else:
        data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")
    lines = data.splitlines()

    header, i = [], 0
    while i < len(lines):
        header.append(lines[i])
        stripped = lines[i].strip().upper()
        i += 1
        if stripped.startswith("&END") or stripped == "/" or stripped.endswith("&END") or stripped.endswith("/"):
            break
    else:
        raise ParseError("FCIDUMP header is not terminated by &END or /", line=1)
    if not header or "&FCI" not in header[0].upper():
        raise ParseError("FCIDUMP must start with &FCI", line=1)
    norb, nelec, ms2 = _parse_header("\n".join(header), 1)

    h = np.zeros((norb, norb))
    eri = np.zeros((norb, norb, norb, norb))
    h_set = np.zeros((norb, norb), dtype=bool)
    eri_set = np.zeros(eri.shape, dtype=bool)
    e_core = None

    def put(array, mask, idx, value, lineno):
        if mask[idx] and abs(array[idx] - value) > DUPLICATE_TOL:
            raise ConsistencyError(
                f"line {lineno}: integral {tuple(j + 1 for j in idx)} = {value!r} "
                f"conflicts with earlier value {array[idx]!r}"
            )
        array[idx] = value
        mask[idx] = True

    for lineno, line in enumerate(lines[i:], start=i + 1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 5:
            raise ParseError(f"expected 'value p r q s', got {line.strip()!r}", line=lineno)
        try:
            value = float(fields[0].replace("D", "E").replace("d", "e"))
            p, r, q, s = (int(f) for f in fields[1:])
        except ValueError:
            raise ParseError(f"unparseable record {line.strip()!r}", line=lineno) from None
        if any(k < 0 or k > norb for k in (p, r, q, s)):
            raise RangeError(f"line {lineno}: index outside [1, {norb}] in {line.strip()!r}")
        if p == r == q == s == 0:
            if e_core is not None and abs(e_core - value) > DUPLICATE_TOL:
                raise ConsistencyError(f"line {lineno}: conflicting core energy {value!r} vs {e_core!r}")
            e_core = value
        elif q == s == 0 and p > 0 and r > 0:
            for idx in {(p - 1, r - 1), (r - 1, p - 1)}:
                put(h, h_set, idx, value, lineno)
        elif r == q == s == 0:
            continue
        elif min(p, r, q, s) > 0:
            for idx in _eri_images(p - 1, r - 1, q - 1, s - 1):
                put(eri, eri_set, idx, value, lineno)
        else:
            raise ParseError(f"index pattern {(p, r, q, s)} is not an FCIDUMP record", line=lineno)

    return ActiveSpaceHamiltonian(
        n_orbitals=norb,
        h=h,
        eri=eri,
        e_core=0.0 if e_core is None else e_core,
        n_alpha=(nelec + ms2) // 2,
        n_beta=(nelec - ms2) // 2,
    )


def read_fcidump(path) -> ActiveSpaceHamiltonian:
    with open(path, "rb") as fh:
        return parse_fcidump(fh)


def write_fcidump(ham: ActiveSpaceHamiltonian, sink, tol: float = 0.0):
    """Write ``ham`` as FCIDUMP; ``sink`` is a path or a text stream.

    Values use ``repr`` so a round trip is exact.  Integrals with magnitude
    ``<= tol`` are skipped (``tol=0`` keeps every nonzero value).
    """
    n = ham.n_orbitals
    out = io.StringIO()
    out.write(f" &FCI NORB={n:4d},NELEC={ham.n_electrons:3d},MS2={ham.n_alpha - ham.n_beta},\n")
    out.write("  ORBSYM=" + "1," * n + "\n  ISYM=1,\n &END\n")

    def rec(value, *idx):
        out.write(f"{float(value)!r:>24} {idx[0]:4d} {idx[1]:4d} {idx[2]:4d} {idx[3]:4d}\n")

    for p, r, q, s in product(range(n), repeat=4):
        pr, qs = p * n + r, q * n + s
        if p >= r and q >= s and pr >= qs and abs(ham.eri[p, r, q, s]) > tol:
            rec(ham.eri[p, r, q, s], p + 1, r + 1, q + 1, s + 1)
    for p in range(n):
        for r in range(p + 1):
            if abs(ham.h[p, r]) > tol:
                rec(ham.h[p, r], p + 1, r + 1, 0, 0)
    rec(ham.e_core, 0, 0, 0, 0)
    text = out.getvalue()
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text)
    else:
        sink.write(text)
    return text


def validate(ham: ActiveSpaceHamiltonian) -> list[Violation]:
    """List every broken invariant; empty when the Hamiltonian is consistent."""
    out = []
    n = ham.n_orbitals
    h, eri = ham.h, ham.eri
    if h.shape != (n, n) or eri.shape != (n,) * 4:
        out.append(Violation("shape", (h.shape, eri.shape), float("inf")))
        return out
    for p in range(n):
        for r in range(p + 1, n):
            gap = abs(h[p, r] - h[r, p])
            if gap > SYMMETRY_TOL:
                out.append(Violation("h-symmetry", (p, r), gap))
    seen = set()
    for idx in product(range(n), repeat=4):
        if idx in seen:
            continue
        images = _eri_images(*idx)
        seen |= images
        values = [eri[j] for j in images]
        gap = max(values) - min(values)
        if gap > SYMMETRY_TOL:
            out.append(Violation("eri-symmetry", idx, gap))
    for name, count in (("n_alpha", ham.n_alpha), ("n_beta", ham.n_beta)):
        if not 0 <= count <= n:
            out.append(Violation("sector", (name,), float(count - n), f"{name}={count} with n_orbitals={n}"))
    if not np.isfinite(h).all() or not np.isfinite(eri).all() or not np.isfinite(ham.e_core):
        out.append(Violation("finite", (), float("inf")))
    return out


def random_hamiltonian(n_orbitals, n_alpha, n_beta=None, seed=0, coupling=0.3) -> ActiveSpaceHamiltonian:
    """Random real Hamiltonian with full 8-fold symmetry.

    Orbital energies increase with the index and the two-electron tensor is a
    Gram matrix over orbital pairs, so the ERI supermatrix is positive
    semidefinite like a physical Coulomb kernel.
    """
    rng = np.random.default_rng(seed)
    n = n_orbitals
    h = rng.normal(scale=coupling, size=(n, n))
    h = 0.5 * (h + h.T) + np.diag(np.linspace(-2.0, 1.0, n))
    pairs = rng.normal(scale=0.4, size=(n, n, n + 2))
    pairs = 0.5 * (pairs + pairs.transpose(1, 0, 2))
    for p in range(n):
        pairs[p, p, :] += 0.6 * rng.random()
    eri = np.einsum("prx,qsx->prqs", pairs, pairs) / (n + 2) ** 0.5
    return ActiveSpaceHamiltonian(
        n_orbitals=n,
        h=h,
        eri=eri,
        e_core=float(rng.uniform(0.0, 1.0)),
        n_alpha=n_alpha,
        n_beta=n_alpha if n_beta is None else n_beta,
    )
