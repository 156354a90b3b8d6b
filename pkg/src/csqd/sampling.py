"""Measurement samples: ingestion, pooled spin-string weights, postselection
and a synthetic noisy sampler standing in for hardware.

Sample files are plain text, one ``BITSTRING COUNT`` pair per line, ``#``
starting a comment.  Bitstrings are the alpha block followed by the beta
block, orbital 0 leftmost in each block.
"""

import gzip
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .determinants import from_text, join_bitstring, lex_keys
from .errors import EmptyInputError, FormatError, InputError

SHARD_SIZE = 1 << 16


@dataclass(eq=False)
class SampleSet:
    entries: dict
    n_mo: int

    @property
    def total_shots(self) -> int:
        return sum(self.entries.values())

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, SampleSet) and self.n_mo == other.n_mo and self.entries == other.entries

    def arrays(self):
        """``(alpha, beta, counts)`` arrays in sorted bitstring order."""
        keys = sorted(self.entries)
        n = self.n_mo
        alpha = np.array([from_text(k[:n]) for k in keys], dtype=np.uint64)
        beta = np.array([from_text(k[n:]) for k in keys], dtype=np.uint64)
        counts = np.array([self.entries[k] for k in keys], dtype=np.int64)
        return alpha, beta, counts


@dataclass(eq=False)
class WeightedPool:
    """Deduplicated spin strings (lexicographic order) with pooled weights."""

    strings: np.ndarray
    pi: np.ndarray
    n_mo: int
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.strings = np.asarray(self.strings, dtype=np.uint64)
        self.pi = np.asarray(self.pi, dtype=np.float64)
        self.index = {int(s): i for i, s in enumerate(self.strings)}

    def __len__(self):
        return len(self.strings)

    def weight(self, s) -> float:
        i = self.index.get(int(s))
        return 0.0 if i is None else float(self.pi[i])


def _read_text(source):
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            data = fh.read()
    else:
        data = source.read()
    if isinstance(data, bytes):
        if data[:2] == b"\x1f\x8b":
            data = gzip.decompress(data)
        data = data.decode("utf-8", errors="replace")
    return data


def load_samples(source, n_mo=None, swap_halves=False, reverse_bits=False) -> SampleSet:
    """Parse a sample file (path or stream; plain or gzip).

    ``reverse_bits`` reverses each full bitstring before ``swap_halves``
    exchanges the alpha and beta blocks; both exist for datasets whose bit
    order differs from the alpha-then-beta, orbital-0-leftmost convention.
    """
    text = _read_text(source)
    entries = {}
    width = None if n_mo is None else 2 * n_mo
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        fields = body.split()
        if len(fields) != 2:
            raise FormatError(f"expected 'BITSTRING COUNT', got {body!r}", line=lineno)
        bits, raw = fields
        if any(ch not in "01" for ch in bits):
            raise FormatError(f"non-binary character in {bits!r}", line=lineno)
        if width is None:
            width = len(bits)
        if len(bits) != width or width % 2:
            raise FormatError(f"bitstring length {len(bits)} inconsistent (expected even length {width})", line=lineno)
        try:
            count = int(raw)
        except ValueError:
            raise FormatError(f"count {raw!r} is not an integer", line=lineno) from None
        if count <= 0:
            raise FormatError(f"count must be positive, got {count}", line=lineno)
        if reverse_bits:
            bits = bits[::-1]
        if swap_halves:
            half = len(bits) // 2
            bits = bits[half:] + bits[:half]
        entries[bits] = entries.get(bits, 0) + count
    if width is None:
        width = 0 if n_mo is None else 2 * n_mo
    return SampleSet(entries=entries, n_mo=width // 2)


def write_samples(samples: SampleSet, sink, comment=None):
    lines = []
    if comment:
        lines += [f"# {c}" for c in comment.splitlines()]
    lines += [f"{k} {samples.entries[k]}" for k in sorted(samples.entries)]
    text = "\n".join(lines) + ("\n" if lines else "")
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text)
    else:
        sink.write(text)
    return text


def pool_spin_strings(samples: SampleSet) -> WeightedPool:
    """Pooled single-spin weights: each shot gives 1/2 to its alpha and beta strings."""
    if not samples.entries:
        raise EmptyInputError("no samples to pool")
    alpha, beta, counts = samples.arrays()
    halves = np.concatenate([alpha, beta])
    weights = np.concatenate([counts, counts])
    strings, inverse = np.unique(halves, return_inverse=True)
    numer = np.zeros(len(strings), dtype=np.int64)
    np.add.at(numer, inverse, weights)
    order = np.argsort(lex_keys(strings, samples.n_mo), kind="stable")
    total = 2 * int(counts.sum())
    return WeightedPool(strings=strings[order], pi=numer[order] / total, n_mo=samples.n_mo)


def postselect(samples: SampleSet, n_alpha: int, n_beta: int) -> SampleSet:
    n = samples.n_mo
    kept = {
        k: c
        for k, c in samples.entries.items()
        if k[:n].count("1") == n_alpha and k[n:].count("1") == n_beta
    }
    return SampleSet(entries=kept, n_mo=n)


def _shard(probs, alpha, beta, n_mo, flip_prob, shots, seed, shard):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, shard])))
    picks = rng.multinomial(shots, probs)
    nz = np.nonzero(picks)[0]
    a = np.repeat(alpha[nz], picks[nz])
    b = np.repeat(beta[nz], picks[nz])
    if flip_prob > 0:
        bits = np.uint64(1) << np.arange(n_mo, dtype=np.uint64)
        flips_a = rng.random((shots, n_mo)) < flip_prob
        flips_b = rng.random((shots, n_mo)) < flip_prob
        a = a ^ (flips_a * bits).sum(axis=1, dtype=np.uint64)
        b = b ^ (flips_b * bits).sum(axis=1, dtype=np.uint64)
    pairs, counts = np.unique(np.stack([a, b], axis=1), axis=0, return_counts=True)
    return pairs, counts


def synth_sample(ground_truth, basis, flip_prob, shots, seed, workers=1) -> SampleSet:
    """Draw determinants with probability ``|c|^2`` then flip every bit i.i.d.

    ``ground_truth`` is a CI array of shape ``basis.shape``.  Shots are split
    into fixed shards of ``SHARD_SIZE`` with one RNG stream per
    ``(seed, shard)``, so the result does not depend on ``workers``.
    """
    vec = np.asarray(ground_truth, dtype=np.float64)
    if vec.shape != basis.shape:
        raise InputError(f"ground truth shape {vec.shape} does not match basis {basis.shape}")
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > 1e-8:
        raise InputError(f"ground truth norm {norm!r} is not 1")
    if not 0.0 <= flip_prob < 0.5:
        raise InputError(f"flip_prob {flip_prob} outside [0, 0.5)")
    probs = (vec**2).ravel()
    probs = probs / probs.sum()
    alpha = np.repeat(basis.alpha_strings, len(basis.beta_strings))
    beta = np.tile(basis.beta_strings, len(basis.alpha_strings))
    sizes = [SHARD_SIZE] * (shots // SHARD_SIZE)
    if shots % SHARD_SIZE:
        sizes.append(shots % SHARD_SIZE)
    jobs = [(probs, alpha, beta, basis.n_mo, flip_prob, size, seed, k) for k, size in enumerate(sizes)]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda job: _shard(*job), jobs))
    else:
        results = [_shard(*job) for job in jobs]
    entries = {}
    for pairs, counts in results:
        for (a, b), c in zip(pairs, counts):
            key = join_bitstring(int(a), int(b), basis.n_mo)
            entries[key] = entries.get(key, 0) + int(c)
    return SampleSet(entries=entries, n_mo=basis.n_mo)


def sector_fraction(samples: SampleSet, n_alpha: int, n_beta: int) -> float:
    """Fraction of shots lying in the target particle sector."""
    if not samples.entries:
        return 0.0
    return postselect(samples, n_alpha, n_beta).total_shots / samples.total_shots

