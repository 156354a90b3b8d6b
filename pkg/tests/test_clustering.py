from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csqd.clustering import (
    ClusterModel,
    allocation,
    assign,
    cluster_stats,
    fit,
    fit_bmm,
    fit_kmodes,
    load_model,
    save_model,
)
from csqd.determinants import from_text, occupations
from csqd.errors import ConfigError
from csqd.sampling import WeightedPool


def pool_of(texts, weights):
    strings = np.array([from_text(t) for t in texts], dtype=np.uint64)
    w = np.asarray(weights, dtype=np.float64)
    return WeightedPool(strings, w / w.sum(), len(texts[0]))


def random_pool(seed, n_mo=6, size=10):
    rng = np.random.default_rng(seed)
    strings = rng.choice(2**n_mo, size=size, replace=False).astype(np.uint64)
    return WeightedPool(strings, rng.dirichlet(np.ones(size)), n_mo)


def test_kmodes_k1_weighted_majority():
    pool = pool_of(["1100", "1010", "0011"], [0.5, 0.3, 0.2])
    model = fit_kmodes(pool, 1, restarts=3)
    x = occupations(pool.strings, 4)
    mode = (pool.pi @ x >= 0.5).astype(float)
    assert np.array_equal(model.centroids[0], mode)
    assert model.fit_score == pytest.approx(float(pool.pi @ np.abs(x - mode).sum(axis=1)))


def test_kmodes_separates_groups():
    pool = pool_of(["110000", "000011"], [0.6, 0.4])
    model = fit_kmodes(pool, 2, restarts=5)
    assert model.fit_score == 0.0
    assert assign(model, pool.strings[0]) != assign(model, pool.strings[1])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**16))
def test_kmodes_beats_every_pair_of_pool_modes(seed):
    pool = random_pool(seed)
    model = fit_kmodes(pool, 2, restarts=100, seed=seed)
    x = occupations(pool.strings, pool.n_mo)
    d = np.abs(x[:, None, :] - x[None, :, :]).sum(axis=2)
    best_pair = min(float(pool.pi @ np.minimum(d[:, i], d[:, j])) for i, j in combinations(range(len(x)), 2))
    assert model.fit_score <= best_pair + 1e-12


def test_bmm_k1_is_weighted_mean():
    pool = pool_of(["1100", "1010", "0011"], [0.5, 0.3, 0.2])
    model = fit_bmm(pool, 1, restarts=2)
    mean = pool.pi @ occupations(pool.strings, 4)
    assert np.allclose(model.centroids[0], np.clip(mean, 1e-6, 1 - 1e-6), atol=1e-9)
    assert model.rho.tolist() == [1.0]


def test_bmm_single_string_pool():
    pool = pool_of(["101"], [1.0])
    model = fit_bmm(pool, 1, restarts=1)
    assert np.allclose(model.centroids[0], [1 - 1e-6, 1e-6, 1 - 1e-6])


def test_bmm_recovers_planted_sources():
    rng = np.random.default_rng(0)
    theta = np.array([[0.9, 0.9, 0.1, 0.1, 0.8, 0.2, 0.1, 0.1], [0.1, 0.1, 0.9, 0.8, 0.1, 0.1, 0.9, 0.9]])
    comp = rng.integers(0, 2, size=1000)
    bits = (rng.random((1000, 8)) < theta[comp]).astype(np.uint64)
    strings, counts = np.unique((bits << np.arange(8, dtype=np.uint64)).sum(axis=1), return_counts=True)
    pool = WeightedPool(strings.astype(np.uint64), counts / counts.sum(), 8)
    model = fit_bmm(pool, 2, restarts=10, seed=1)
    order = np.argsort(model.centroids[:, 0])[::-1]
    assert np.abs(model.centroids[order] - theta).max() < 0.05
    assert np.all(np.diff(model.trace) > -1e-10)  # EM never decreases the likelihood


def test_assign_rules():
    modes = np.array([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
    model = ClusterModel("kmodes", 2, 4, modes, np.full(2, 0.5), 0.0, 0)
    assert assign(model, from_text("0011")) == 1
    assert assign(model, from_text("1010")) == 0  # equidistant -> lowest index
    theta = np.array([[0.99, 0.99, 0.01, 0.01], [0.5, 0.5, 0.5, 0.5]])
    bmm = ClusterModel("bmm", 2, 4, theta, np.full(2, 0.5), 0.0, 0)
    assert assign(bmm, from_text("1100")) == 0


def test_allocation_and_stats_examples():
    assert [allocation(0.25, 10), allocation(0.75, 10)] == [3, 8]
    assert allocation(0.0, 10) == 0 and allocation(1e-9, 10) == 1
    assert allocation(0.3, 10) == 3  # 0.3*10 is 3.0000000000000004 in floating point
    pool = pool_of(["110", "011", "101"], [0.2, 0.1, 0.7])
    stats = cluster_stats(pool, np.array([0, 0, 1]), S=10, K=3)
    assert np.allclose(stats.n_raw[0], [0.2, 0.3, 0.1])
    assert stats.w.tolist() == pytest.approx([0.3, 0.7, 0.0])
    assert stats.m.tolist() == [3, 7, 0]
    assert stats.n_raw[2].tolist() == [0.0, 0.0, 0.0]


@pytest.mark.parametrize("kind", ["kmodes", "bmm"])
def test_fit_deterministic_and_serializable(kind, tmp_path):
    pool = random_pool(3, size=12)
    a = fit(pool, kind, 3, restarts=8, seed=5)
    b = fit(pool, kind, 3, restarts=8, seed=5, workers=4)
    assert a == b and a.best_restart == b.best_restart
    save_model(a, tmp_path / "m.json")
    assert load_model(tmp_path / "m.json") == a


def test_fit_errors():
    pool = pool_of(["10", "01"], [1, 1])
    with pytest.raises(ConfigError):
        fit(pool, "kmodes", 3)
    with pytest.raises(ConfigError):
        fit(pool, "bmm", 3)
    with pytest.raises(ConfigError):
        fit(pool, "kmeans", 1)
