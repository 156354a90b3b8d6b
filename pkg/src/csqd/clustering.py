"""Weighted clustering of pooled single-spin strings.

Two models are provided, both weighted by the pooled empirical weights
``pi`` so that frequently observed strings dominate the fit:

* weighted k-modes with Huang-style density-based initialization,
  Hamming distance and per-bit weighted-majority mode updates;
* a Bernoulli mixture fitted by EM on the weighted log-likelihood
  ``L = sum_mu pi(mu) log sum_k rho_k prod_p theta_kp^mu_p (1 - theta_kp)^(1 - mu_p)``.

Both give a hard partition (nearest mode / maximum responsibility, ties to
the lowest cluster index).  Restarts use independent RNG streams derived
from ``(seed, restart)`` and the best restart is chosen with ties going to
the lowest restart index, so the result does not depend on scheduling.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import ceil
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .determinants import occupations
from .errors import ArtifactIOError, ConfigError, FormatError, NumericError
from .sampling import WeightedPool

THETA_EPS = 1e-6
BMM_TOL = 1e-8
BMM_MAX_ITER = 300
KMODES_MAX_ITER = 100
DEFAULT_RESTARTS = 100
KINDS = ("kmodes", "bmm")


@dataclass(eq=False)
class ClusterModel:
    """A fitted clustering.

    ``centroids`` holds binary modes (kmodes) or Bernoulli parameters
    ``theta`` (bmm), one row per cluster.  ``rho`` is only meaningful for
    bmm (uniform for kmodes).  ``fit_score`` is the weighted cost (kmodes,
    lower is better) or weighted log-likelihood (bmm, higher is better).
    ``trace`` records the score after every sweep of the selected restart.
    """

    kind: str
    K: int
    n_mo: int
    centroids: np.ndarray
    rho: np.ndarray
    fit_score: float
    seed: int
    restarts: int = 1
    best_restart: int = 0
    trace: list = field(default_factory=list, repr=False)

    def scores(self, strings) -> np.ndarray:
        """Per-cluster score matrix, larger is closer, shape ``(len(strings), K)``."""
        x = occupations(strings, self.n_mo)
        if self.kind == "kmodes":
            return -_hamming(x, self.centroids)
        return _log_joint(x, self.centroids, self.rho)

    def assign_many(self, strings) -> np.ndarray:
        strings = np.atleast_1d(np.asarray(strings, dtype=np.uint64))
        if len(strings) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.argmax(self.scores(strings), axis=1).astype(np.int64)

    def __eq__(self, other):
        return (
            isinstance(other, ClusterModel)
            and self.kind == other.kind
            and self.K == other.K
            and self.n_mo == other.n_mo
            and self.seed == other.seed
            and self.fit_score == other.fit_score
            and np.array_equal(self.centroids, other.centroids)
            and np.array_equal(self.rho, other.rho)
        )


def assign(model: ClusterModel, s) -> int:
    """Cluster index of a single string (ties go to the lowest index)."""
    return int(model.assign_many([s])[0])


@dataclass(eq=False)
class ClusterStats:
    w: np.ndarray
    m: np.ndarray
    n_raw: np.ndarray
    labels: np.ndarray

    @property
    def K(self) -> int:
        return len(self.w)


def cluster_stats(pool: WeightedPool, model_or_labels, S: int, K=None) -> ClusterStats:
    """Sampling weights ``w_k``, allocations ``m_k = ceil(w_k S)`` and raw references.

    ``n_raw[k] = sum_{mu in C_k} pi(mu) mu`` (unnormalized, electron units).
    Note that ``sum(m)`` may exceed ``S``.
    """
    if isinstance(model_or_labels, ClusterModel):
        labels = model_or_labels.assign_many(pool.strings)
        K = model_or_labels.K
    else:
        labels = np.asarray(model_or_labels, dtype=np.int64)
        K = int(K if K is not None else labels.max() + 1)
    x = occupations(pool.strings, pool.n_mo)
    w = np.zeros(K)
    np.add.at(w, labels, pool.pi)
    n_raw = np.zeros((K, pool.n_mo))
    np.add.at(n_raw, labels, pool.pi[:, None] * x)
    m = np.array([allocation(wk, S) for wk in w], dtype=np.int64)
    return ClusterStats(w=w, m=m, n_raw=n_raw, labels=labels)


def allocation(w: float, S: int) -> int:
    """``ceil(w S)``, robust to round-off just above an integer, and >= 1 when w > 0."""
    if w <= 0.0:
        return 0
    return max(1, ceil(round(w * S, 9)))


def _check_pool(pool: WeightedPool, K: int):
    if K < 1:
        raise ConfigError(f"K must be positive, got {K}")
    if K > len(pool):
        raise ConfigError(f"K={K} exceeds the number of unique strings ({len(pool)})")


def _hamming(x, modes):
    return x @ (1.0 - modes).T + (1.0 - x) @ modes.T


def _rng(seed, restart):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, restart])))


def _run_restarts(worker, restarts, workers):
    if workers > 1 and restarts > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(worker, range(restarts)))
    return [worker(r) for r in range(restarts)]


# ---------------------------------------------------------------- k-modes


def _huang_init(x, pi, K, rng):
    """Draw each mode bit with probability equal to its weighted frequency,
    then replace every draw by the closest pool string not yet used."""
    freq = pi @ x / pi.sum()
    used = np.zeros(len(x), dtype=bool)
    modes = np.empty((K, x.shape[1]))
    for k in range(K):
        draft = (rng.random(x.shape[1]) < freq).astype(np.float64)
        dist = np.abs(x - draft).sum(axis=1)
        dist[used] = np.inf
        j = int(np.argmin(dist))
        used[j] = True
        modes[k] = x[j]
    return modes


def _kmodes_once(x, pi, K, rng):
    modes = _huang_init(x, pi, K, rng)
    labels = None
    trace = []
    for _ in range(KMODES_MAX_ITER):
        dist = _hamming(x, modes)
        new = np.argmin(dist, axis=1)
        trace.append(float(pi @ dist[np.arange(len(x)), new]))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for k in range(K):
            sel = labels == k
            if not sel.any():
                continue
            ones = pi[sel] @ x[sel]
            modes[k] = (ones >= 0.5 * pi[sel].sum()).astype(np.float64)
        trace.append(float(pi @ _hamming(x, modes)[np.arange(len(x)), labels]))
    cost = float(pi @ _hamming(x, modes).min(axis=1))
    return cost, modes, trace


def fit_kmodes(pool: WeightedPool, K: int, restarts: int = DEFAULT_RESTARTS, seed: int = 0, workers: int = 1) -> ClusterModel:
    """Weighted k-modes: minimize ``sum_mu pi(mu) d_H(mu, mode_k(mu))``."""
    _check_pool(pool, K)
    x = occupations(pool.strings, pool.n_mo)
    pi = pool.pi
    runs = _run_restarts(lambda r: _kmodes_once(x, pi, K, _rng(seed, r)), restarts, workers)
    best = min(range(len(runs)), key=lambda r: (runs[r][0], r))
    cost, modes, trace = runs[best]
    return ClusterModel(
        kind="kmodes",
        K=K,
        n_mo=pool.n_mo,
        centroids=modes,
        rho=np.full(K, 1.0 / K),
        fit_score=cost,
        seed=seed,
        restarts=restarts,
        best_restart=best,
        trace=trace,
    )


# ---------------------------------------------------------------- Bernoulli mixture


def _log_joint(x, theta, rho):
    with np.errstate(divide="ignore"):
        log_rho = np.log(rho)
    return x @ np.log(theta).T + (1.0 - x) @ np.log1p(-theta).T + log_rho


def _bmm_once(x, pi, K, rng):
    n = x.shape[1]
    picks = rng.choice(len(x), size=K, p=pi / pi.sum())
    theta = 0.5 * rng.uniform(0.25, 0.75, size=(K, n)) + 0.5 * x[picks]
    theta = np.clip(theta, THETA_EPS, 1.0 - THETA_EPS)
    rho = np.full(K, 1.0 / K)
    trace = []
    prev = -np.inf
    for _ in range(BMM_MAX_ITER):
        joint = _log_joint(x, theta, rho)
        norm = logsumexp(joint, axis=1)
        ll = float(pi @ norm)
        if not np.isfinite(ll):
            raise NumericError("Bernoulli mixture log-likelihood is not finite")
        trace.append(ll)
        if abs(ll - prev) < BMM_TOL:
            break
        prev = ll
        resp = np.exp(joint - norm[:, None]) * pi[:, None]
        mass = resp.sum(axis=0)
        rho = mass / mass.sum()
        live = mass > 0
        theta[live] = (resp[:, live].T @ x) / mass[live, None]
        theta = np.clip(theta, THETA_EPS, 1.0 - THETA_EPS)
    final = float(pi @ logsumexp(_log_joint(x, theta, rho), axis=1))
    return final, theta, rho, trace


def fit_bmm(pool: WeightedPool, K: int, restarts: int = DEFAULT_RESTARTS, seed: int = 0, workers: int = 1) -> ClusterModel:
    """Weighted Bernoulli mixture fitted by EM; best restart by final likelihood."""
    _check_pool(pool, K)
    x = occupations(pool.strings, pool.n_mo)
    pi = pool.pi
    runs = _run_restarts(lambda r: _bmm_once(x, pi, K, _rng(seed, r)), restarts, workers)
    best = min(range(len(runs)), key=lambda r: (-runs[r][0], r))
    ll, theta, rho, trace = runs[best]
    return ClusterModel(
        kind="bmm",
        K=K,
        n_mo=pool.n_mo,
        centroids=theta,
        rho=rho,
        fit_score=ll,
        seed=seed,
        restarts=restarts,
        best_restart=best,
        trace=trace,
    )


def fit(pool: WeightedPool, kind: str, K: int, restarts: int = DEFAULT_RESTARTS, seed: int = 0, workers: int = 1) -> ClusterModel:
    if kind == "kmodes":
        return fit_kmodes(pool, K, restarts, seed, workers)
    if kind == "bmm":
        return fit_bmm(pool, K, restarts, seed, workers)
    raise ConfigError(f"unknown cluster kind {kind!r}; expected one of {KINDS}")


# ---------------------------------------------------------------- serialization


def save_model(model: ClusterModel, path):
    doc = {
        "kind": model.kind,
        "K": model.K,
        "n_mo": model.n_mo,
        "seed": model.seed,
        "restarts": model.restarts,
        "best_restart": model.best_restart,
        "fit_score": model.fit_score,
        "centroids": model.centroids.tolist(),
        "rho": model.rho.tolist(),
    }
    try:
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")
    except OSError as exc:
        raise ArtifactIOError(f"{path}: {exc}") from exc


def load_model(path) -> ClusterModel:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ArtifactIOError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc.msg}", line=exc.lineno) from exc
    return ClusterModel(
        kind=doc["kind"],
        K=int(doc["K"]),
        n_mo=int(doc["n_mo"]),
        centroids=np.array(doc["centroids"], dtype=np.float64),
        rho=np.array(doc["rho"], dtype=np.float64),
        fit_score=float(doc["fit_score"]),
        seed=int(doc["seed"]),
        restarts=int(doc.get("restarts", 1)),
        best_restart=int(doc.get("best_restart", 0)),
    )
