"""End-to-end CSQD iterations and the SQD baseline.

CSQD
  1. pool all samples into single-spin strings, cluster once, derive cluster
     weights ``w_k``, allocations ``m_k`` and raw references;
  2. iteration 1: draw from the postselected strings of each cluster, fill
     any shortfall with synthetic strings guided by the raw reference, solve
     every batch and keep the lowest energy;
  3. later iterations: update the cluster references from the best
     solution, correct wrong-weight strings per cluster, draw new strings,
     merge them with strings carried over from the best solution, truncate,
     solve; stop when both the energy and the references have settled.

SQD keeps one global reference, corrects full bitstrings one spin half at a
time, and builds ``D`` by splitting sampled full bitstrings.

Batches inside an iteration are independent (each has its own RNG stream
derived from ``(seed, iteration, batch)``) and may run on a thread pool; the
best batch is chosen after the whole wave with ties going to the lowest
batch index, so results do not depend on scheduling.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import clustering
from .cisolver import DavidsonOptions, SubspaceSolution, solve
from .determinants import lex_keys, occupations, popcount
from .errors import ConfigError, CSQDError, EmptyInputError, InputError
from .hamiltonian import ActiveSpaceHamiltonian
from .recovery import (
    MembershipTable,
    StringPool,
    draw_without_replacement,
    normalize_reference,
    recover_string,
    refine_pools,
    update_references,
)
from .sampling import SampleSet, pool_spin_strings, postselect
from .subspace import (
    BatchCandidate,
    carry_over,
    cluster_pools,
    fill_deficit,
    merge_truncate,
    subsample_batch,
)

TIE_TOL = 1e-12

# RNG stream tags; every stream is SeedSequence([seed, tag, iteration, index])
_BATCH, _REFINE, _RECOVER = 1, 2, 3


@dataclass
class RunConfig:
    method: str = "csqd"
    K: int = 2
    cluster_kind: str = "kmodes"
    restarts: int = 100
    B: int = 10
    S: int = None
    d_max: int = 1000
    T: int = 10
    tau: float = 1e-4
    eps_E: float = 1e-8
    eps_n: float = 1e-5
    lam: float = 0.1
    delta0: float = 0.01
    seed: int = 0
    sqd_extra_iteration: bool = False
    workers: int = 1
    davidson: DavidsonOptions = field(default_factory=DavidsonOptions)

    def __post_init__(self):
        if isinstance(self.davidson, dict):
            self.davidson = DavidsonOptions(**self.davidson)
        if self.method not in ("csqd", "sqd"):
            raise ConfigError(f"method must be 'csqd' or 'sqd', got {self.method!r}")
        if self.cluster_kind not in clustering.KINDS:
            raise ConfigError(f"cluster_kind must be one of {clustering.KINDS}, got {self.cluster_kind!r}")
        for name in ("K", "B", "d_max", "T", "restarts", "workers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.S is not None and self.S < 1:
            raise ConfigError("S must be a positive integer")
        if self.tau < 0 or self.eps_E < 0 or self.eps_n < 0 or self.lam < 0:
            raise ConfigError("tau, eps_E, eps_n and lam must be nonnegative")
        if not 0.0 <= self.delta0 <= 1.0:
            raise ConfigError("delta0 must lie in [0, 1]")

    @property
    def budget(self) -> int:
        return self.d_max if self.S is None else self.S

    @property
    def iterations(self) -> int:
        return self.T + (1 if self.method == "sqd" and self.sqd_extra_iteration else 0)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["davidson"] = asdict(self.davidson)
        return out


@dataclass
class BatchRecord:
    iteration: int
    batch: int
    energy: float
    s2: float
    n_strings: int
    seconds: float = 0.0


@dataclass
class IterationRecord:
    iteration: int
    best_energy: float
    ref_change: float
    seconds: float = 0.0


@dataclass(eq=False)
class RunResult:
    best: SubspaceSolution
    references: np.ndarray
    history: list
    iterations: list
    stop_reason: str
    config: RunConfig
    memberships: MembershipTable = None
    model: clustering.ClusterModel = None
    stats: clustering.ClusterStats = None
    timings: dict = field(default_factory=dict)
    best_at: tuple = (0, 0)


def check_stop(E_best, E_prev, refs, refs_prev, eps_E, eps_n) -> bool:
    """Energy change below ``eps_E`` and every reference entry moved less than ``eps_n``."""
    if abs(E_best - E_prev) >= eps_E:
        return False
    delta = np.abs(np.asarray(refs, dtype=np.float64) - np.asarray(refs_prev, dtype=np.float64))
    return bool(delta.size == 0 or delta.max() < eps_n)


def _stream(seed, tag, iteration, index):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, tag, iteration, index])))


class _Clock:
    def __init__(self):
        self.totals = {}

    def add(self, phase, seconds):
        self.totals[phase] = self.totals.get(phase, 0.0) + seconds


class _Tracker:
    """Best-so-far solution with deterministic tie-breaking."""

    def __init__(self):
        self.best = None
        self.at = None

    def offer(self, wave, iteration):
        """``wave`` is a list of (batch, solution); lowest energy, then lowest batch index."""
        if not wave:
            return
        b, sol = min(wave, key=lambda item: (item[1].energy, item[0]))
        ties = [w for w in wave if abs(w[1].energy - sol.energy) <= TIE_TOL]
        b, sol = min(ties, key=lambda item: item[0])
        if self.best is None or sol.energy < self.best.energy - TIE_TOL:
            self.best, self.at = sol, (iteration, b)

    @property
    def energy(self):
        return self.best.energy


def _solve_wave(ham, candidates, config, iteration, clock):
    """Solve every batch candidate; returns (records, [(batch, solution)])."""

    def job(item):
        b, cand = item
        t0 = time.perf_counter()
        try:
            sol = solve(ham, cand.strings, lam=config.lam, opts=config.davidson)
        except CSQDError as exc:
            exc.args = (f"iteration {iteration}, batch {b}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise
        return b, sol, time.perf_counter() - t0

    items = list(enumerate(candidates))
    if config.workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(config.workers) as ex:
            done = list(ex.map(job, items))
    else:
        done = [job(item) for item in items]
    records = []
    wave = []
    for b, sol, secs in done:
        clock.add("solve", secs)
        records.append(BatchRecord(iteration, b, sol.energy, sol.s2, len(sol.strings), secs))
        wave.append((b, sol))
    return records, wave


def _check_inputs(ham: ActiveSpaceHamiltonian, samples: SampleSet):
    if ham.n_alpha != ham.n_beta:
        raise ConfigError(f"only S_z = 0 sectors are supported (got n_alpha={ham.n_alpha}, n_beta={ham.n_beta})")
    if samples.n_mo != ham.n_orbitals:
        raise InputError(f"samples have {samples.n_mo} orbitals per spin, Hamiltonian has {ham.n_orbitals}")
    if not samples.entries:
        raise EmptyInputError("no samples")


# ---------------------------------------------------------------- CSQD


def run_csqd(ham: ActiveSpaceHamiltonian, samples: SampleSet, config: RunConfig) -> RunResult:
    if config.method != "csqd":
        raise ConfigError("run_csqd called with method != 'csqd'")
    _check_inputs(ham, samples)
    n, n_sigma, K = ham.n_orbitals, ham.n_alpha, config.K
    clock = _Clock()
    wall0 = time.perf_counter()

    t0 = time.perf_counter()
    pool = pool_spin_strings(samples)
    model = clustering.fit(pool, config.cluster_kind, K, config.restarts, config.seed, config.workers)
    stats = clustering.cluster_stats(pool, model, config.budget)
    clock.add("cluster", time.perf_counter() - t0)

    label_of = dict(zip((int(s) for s in pool.strings), stats.labels.tolist()))
    in_sector = popcount(pool.strings) == n_sigma
    correct = [StringPool(*_select(pool, (stats.labels == k) & in_sector)) for k in range(K)]
    incorrect = [StringPool(*_select(pool, (stats.labels == k) & ~in_sector)) for k in range(K)]

    # iteration 1 draws from the postselected samples, re-pooled
    post = postselect(samples, n_sigma, n_sigma)
    if post.entries:
        post_pool = pool_spin_strings(post)
        post_labels = [label_of[int(s)] for s in post_pool.strings]
        first_pools = cluster_pools(post_pool.strings, post_pool.pi, post_labels, K, n)
    else:
        first_pools = [StringPool(np.zeros(0, dtype=np.uint64), np.zeros(0)) for _ in range(K)]

    def deficit(k, count, rng):
        return fill_deficit(stats.n_raw[k], count, n_sigma, rng)

    members = MembershipTable(K)
    tracker = _Tracker()
    history, iters = [], []

    t0 = time.perf_counter()
    candidates = []
    for b in range(config.B):
        rng = _stream(config.seed, _BATCH, 1, b)
        new = subsample_batch(first_pools, stats.m, rng, n, deficit=deficit)
        candidates.append(merge_truncate(new, BatchCandidate.empty(), config.d_max, n))
    clock.add("subsample", time.perf_counter() - t0)
    records, wave = _solve_wave(ham, candidates, config, 1, clock)
    history += records
    for cand in candidates:
        members.merge(cand.memberships(K))
    tracker.offer(wave, 1)
    refs = np.array([normalize_reference(r, n_sigma) for r in stats.n_raw])
    iters.append(IterationRecord(1, tracker.energy, float("nan"), time.perf_counter() - wall0))

    stop_reason = "max_iter"
    for t in range(2, config.iterations + 1):
        it0 = time.perf_counter()
        E_prev, refs_prev = tracker.energy, refs
        best = tracker.best

        t0 = time.perf_counter()
        refs = update_references(best.coeffs, best.strings, members, n_sigma, n, previous=refs_prev)
        rngs = [_stream(config.seed, _REFINE, t, k) for k in range(K)]
        refined = refine_pools(correct, incorrect, refs, n_sigma, n, rngs, config.delta0)
        clock.add("recover", time.perf_counter() - t0)

        t0 = time.perf_counter()
        carry = carry_over(best.coeffs, best.strings, config.tau, n, members)
        candidates = []
        for b in range(config.B):
            rng = _stream(config.seed, _BATCH, t, b)
            new = subsample_batch(refined, stats.m, rng, n)
            candidates.append(merge_truncate(new, carry, config.d_max, n))
        clock.add("subsample", time.perf_counter() - t0)

        records, wave = _solve_wave(ham, candidates, config, t, clock)
        history += records
        for cand in candidates:
            members.merge(cand.memberships(K))
        tracker.offer(wave, t)
        change = float(np.abs(refs - refs_prev).max())
        iters.append(IterationRecord(t, tracker.energy, change, time.perf_counter() - it0))
        if check_stop(tracker.energy, E_prev, refs, refs_prev, config.eps_E, config.eps_n):
            stop_reason = "converged"
            break

    clock.add("total", time.perf_counter() - wall0)
    return RunResult(
        best=tracker.best,
        references=refs,
        history=history,
        iterations=iters,
        stop_reason=stop_reason,
        config=config,
        memberships=members,
        model=model,
        stats=stats,
        timings=clock.totals,
        best_at=tracker.at,
    )


def _select(pool, mask):
    return pool.strings[mask], pool.pi[mask]


# ---------------------------------------------------------------- SQD baseline


@dataclass(eq=False)
class _FullPool:
    alpha: np.ndarray
    beta: np.ndarray
    prob: np.ndarray


def _full_pool(alpha, beta, prob, n_mo) -> _FullPool:
    """Merge duplicate full bitstrings and order them (alpha, then beta, lexicographic)."""
    if len(alpha) == 0:
        return _FullPool(np.zeros(0, np.uint64), np.zeros(0, np.uint64), np.zeros(0))
    pairs, inv = np.unique(np.stack([alpha, beta], axis=1), axis=0, return_inverse=True)
    summed = np.zeros(len(pairs))
    np.add.at(summed, inv.ravel(), prob)
    order = np.lexsort((lex_keys(pairs[:, 1], n_mo), lex_keys(pairs[:, 0], n_mo)))
    total = summed.sum()
    return _FullPool(pairs[order, 0], pairs[order, 1], summed[order] / total)


def _sqd_candidate(full: _FullPool, budget, carry_pairs, d_max, n_mo, rng) -> BatchCandidate:
    take = min(budget, len(full.prob))
    entries = {}

    def add(s, imp):
        s = int(s)
        entries[s] = entries.get(s, 0.0) + imp

    if take:
        for j in draw_without_replacement(full.prob, take, rng):
            add(full.alpha[j], 0.5 * full.prob[j])
            add(full.beta[j], 0.5 * full.prob[j])
    for a, b, w in carry_pairs:
        add(a, 0.5 * w)
        add(b, 0.5 * w)
    if not entries:
        return BatchCandidate.empty()
    strings = np.array(list(entries), dtype=np.uint64)
    cand = BatchCandidate(strings, np.array([entries[int(s)] for s in strings]), masks=[1] * len(strings))
    return merge_truncate(cand, BatchCandidate.empty(), d_max, n_mo)


def _carry_pairs(best: SubspaceSolution, tau):
    C = best.coeffs
    rows, cols = np.nonzero(np.abs(C) > tau)
    return [(best.strings[i], best.strings[j], float(C[i, j] ** 2)) for i, j in zip(rows, cols)]


def run_sqd(ham: ActiveSpaceHamiltonian, samples: SampleSet, config: RunConfig) -> RunResult:
    """Baseline: one global reference, full-bitstring recovery and carry-over."""
    if config.method != "sqd":
        raise ConfigError("run_sqd called with method != 'sqd'")
    _check_inputs(ham, samples)
    n, n_sigma = ham.n_orbitals, ham.n_alpha
    clock = _Clock()
    wall0 = time.perf_counter()

    alpha, beta, counts = samples.arrays()
    prob = counts / counts.sum()
    raw_pool = pool_spin_strings(samples)
    raw_ref = normalize_reference(raw_pool.pi @ occupations(raw_pool.strings, n), n_sigma)[None, :]

    ok = (popcount(alpha) == n_sigma) & (popcount(beta) == n_sigma)
    if ok.any():
        first = _full_pool(alpha[ok], beta[ok], prob[ok], n)
    else:
        rng = _stream(config.seed, _RECOVER, 1, 0)
        first = _recover_full(alpha, beta, prob, raw_ref[0], n_sigma, n, rng, config.delta0)

    members = MembershipTable(1)
    tracker = _Tracker()
    history, iters = [], []

    t0 = time.perf_counter()
    candidates = [
        _sqd_candidate(first, config.budget, [], config.d_max, n, _stream(config.seed, _BATCH, 1, b))
        for b in range(config.B)
    ]
    clock.add("subsample", time.perf_counter() - t0)
    records, wave = _solve_wave(ham, candidates, config, 1, clock)
    history += records
    for cand in candidates:
        members.merge(cand.memberships(1))
    tracker.offer(wave, 1)
    refs = raw_ref
    iters.append(IterationRecord(1, tracker.energy, float("nan"), time.perf_counter() - wall0))

    stop_reason = "max_iter"
    for t in range(2, config.iterations + 1):
        it0 = time.perf_counter()
        E_prev, refs_prev = tracker.energy, refs
        best = tracker.best

        t0 = time.perf_counter()
        everyone = MembershipTable.full(best.strings, 1)
        refs = update_references(best.coeffs, best.strings, everyone, n_sigma, n, previous=refs_prev)
        rng = _stream(config.seed, _RECOVER, t, 0)
        full = _recover_full(alpha, beta, prob, refs[0], n_sigma, n, rng, config.delta0)
        clock.add("recover", time.perf_counter() - t0)

        t0 = time.perf_counter()
        carry = _carry_pairs(best, config.tau)
        candidates = [
            _sqd_candidate(full, config.budget, carry, config.d_max, n, _stream(config.seed, _BATCH, t, b))
            for b in range(config.B)
        ]
        clock.add("subsample", time.perf_counter() - t0)

        records, wave = _solve_wave(ham, candidates, config, t, clock)
        history += records
        for cand in candidates:
            members.merge(cand.memberships(1))
        tracker.offer(wave, t)
        change = float(np.abs(refs - refs_prev).max())
        iters.append(IterationRecord(t, tracker.energy, change, time.perf_counter() - it0))
        if check_stop(tracker.energy, E_prev, refs, refs_prev, config.eps_E, config.eps_n):
            stop_reason = "converged"
            break

    clock.add("total", time.perf_counter() - wall0)
    return RunResult(
        best=tracker.best,
        references=refs,
        history=history,
        iterations=iters,
        stop_reason=stop_reason,
        config=config,
        memberships=members,
        timings=clock.totals,
        best_at=tracker.at,
    )


def _recover_full(alpha, beta, prob, ref, n_sigma, n_mo, rng, delta0) -> _FullPool:
    """Correct each spin half independently against the global reference."""
    fa = np.array([recover_string(a, ref, n_sigma, rng, n_mo, delta0) for a in alpha], dtype=np.uint64)
    fb = np.array([recover_string(b, ref, n_sigma, rng, n_mo, delta0) for b in beta], dtype=np.uint64)
    return _full_pool(fa, fb, prob, n_mo)


def run(ham: ActiveSpaceHamiltonian, samples: SampleSet, config: RunConfig) -> RunResult:
    if config.method == "csqd":
        return run_csqd(ham, samples, config)
    return run_sqd(ham, samples, config)

