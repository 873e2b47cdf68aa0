import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distream.core import Point, mc_centroid
from distream.errors import DimensionError, EmptyStateError, OrderingError, PreconditionError
from distream.micro import EngineConfig, MicroEngine, engine_init, engine_process, engine_snapshot, seeded_kmeans
from distream.wire import serialize


def feed(engine, X, t0=0):
    for i, x in enumerate(X):
        engine.process(Point(tuple(float(v) for v in x), t0 + i))
    return engine


def test_config_validation():
    with pytest.raises(PreconditionError):
        EngineConfig(k=0)
    with pytest.raises(PreconditionError):
        EngineConfig(k=5, init_points=4)
    with pytest.raises(PreconditionError):
        EngineConfig(boundary_factor=0)
    assert EngineConfig(k=7).init_points == 70


def test_init_is_empty():
    s = engine_init(EngineConfig(k=3), 2)
    assert s.micro_clusters == [] and s.points_seen == 0


def test_k1_absorbs_everything():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(15, 2))
    s = feed(MicroEngine(EngineConfig(k=1, init_points=10), 2), X)
    (mc,) = s.micro_clusters
    assert mc.n == 15
    np.testing.assert_allclose(mc.cf1x, X.sum(axis=0), rtol=1e-12)
    np.testing.assert_allclose(mc.cf2x, (X ** 2).sum(axis=0), rtol=1e-12)


def test_coincident_point_absorbed():
    X = np.array([[0, 0], [0.1, 0], [5, 5], [5.1, 5]])
    s = feed(MicroEngine(EngineConfig(k=2, init_points=4), 2), X)
    before = {mc.id: mc.n for mc in s.micro_clusters}
    target = next(mc for mc in s.micro_clusters if mc.n == 2 and mc.cf1x[0] < 1)
    s.process(Point(mc_centroid(target), 10))
    after = {mc.id: mc.n for mc in s.micro_clusters}
    assert len(after) == 2
    assert after[target.id] == before[target.id] + 1


def test_three_blobs_recovered():
    centers = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3) / 2]])
    rng = np.random.default_rng(42)
    labels = rng.integers(3, size=300)
    X = centers[labels] + rng.normal(scale=0.05, size=(300, 2))
    s = feed(MicroEngine(EngineConfig(k=3), 2), X)
    got = np.array([mc_centroid(mc) for mc in s.micro_clusters])
    assert len(got) == 3
    for c in centers:
        assert np.min(np.linalg.norm(got - c, axis=1)) < 0.1


def test_snapshot_at_init_threshold():
    rng = np.random.default_rng(1)
    s = feed(MicroEngine(EngineConfig(k=2, init_points=20), 3), rng.normal(size=(20, 3)))
    snap = s.snapshot(4, 9)
    assert (snap.site_id, snap.epoch, snap.k) == (4, 9, 2)
    assert snap.total_points == 20


def test_snapshot_is_pure():
    rng = np.random.default_rng(2)
    s = feed(MicroEngine(EngineConfig(k=4, init_points=8), 2), rng.normal(size=(50, 2)))
    assert s.snapshot(0, 0) == s.snapshot(0, 0)
    partial = feed(MicroEngine(EngineConfig(k=4, init_points=40), 2), rng.normal(size=(10, 2)))
    a = partial.snapshot(0, 0)
    assert a == partial.snapshot(0, 0) and not partial.initialized
    assert a.k == 4 and a.total_points == 10


def test_empty_snapshot():
    with pytest.raises(EmptyStateError):
        MicroEngine(EngineConfig(k=2), 2).snapshot(0, 0)


def test_ordering_and_dimension_errors():
    s = MicroEngine(EngineConfig(k=2, init_points=2), 2)
    s.process(Point((0, 0), 5))
    with pytest.raises(OrderingError):
        s.process(Point((0, 0), 4))
    with pytest.raises(DimensionError):
        s.process(Point((0, 0, 0), 6))
    s.process(Point((1, 1), 5))  # equal timestamps are allowed
    assert s.now == 5


def test_wrappers_match_methods():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(30, 2))
    s = engine_init(EngineConfig(k=3, init_points=6), 2)
    for i, x in enumerate(X):
        s = engine_process(s, Point(tuple(x), i))
    ref = feed(MicroEngine(EngineConfig(k=3, init_points=6), 2), X)
    assert engine_snapshot(s, 1, 2) == ref.snapshot(1, 2)


def test_replay_is_bit_identical():
    rng = np.random.default_rng(4)
    X = rng.uniform(size=(500, 3))
    cfg = EngineConfig(k=12, seed=99)
    a = feed(MicroEngine(cfg, 3), X).snapshot(0, 0)
    b = feed(MicroEngine(cfg, 3), X).snapshot(0, 0)
    assert serialize(a) == serialize(b)


def test_fresh_engine_ignores_previous_epoch():
    rng = np.random.default_rng(5)
    X1, X2 = rng.normal(size=(100, 2)), rng.normal(size=(100, 2))
    cfg = EngineConfig(k=5)
    used = feed(MicroEngine(cfg, 2), X1)
    assert used.points_seen == 100
    a = feed(MicroEngine(cfg, 2), X2, t0=100).snapshot(0, 1)
    b = feed(MicroEngine(cfg, 2), X2, t0=100).snapshot(0, 1)
    assert a == b


def test_process_block_matches_points():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(80, 2))
    T = np.arange(80.0)
    a = MicroEngine(EngineConfig(k=6), 2)
    a.process_block(X, T)
    assert a.snapshot(0, 0) == feed(MicroEngine(EngineConfig(k=6), 2), X).snapshot(0, 0)


def test_finite_horizon_deletes_stale():
    cfg = EngineConfig(k=2, init_points=2, recency_horizon=10)
    s = MicroEngine(cfg, 1)
    s.process(Point((0.0,), 0))
    s.process(Point((100.0,), 1))
    s.process(Point((300.0,), 50))  # outside the boundary, both old clusters stale
    assert len(s.micro_clusters) == 2
    assert sum(mc.n for mc in s.micro_clusters) == 2
    assert sorted(mc.cf1x[0] for mc in s.micro_clusters) == [100.0, 300.0]


def test_merge_when_nothing_stale():
    s = MicroEngine(EngineConfig(k=2, init_points=2), 1)
    for x, t in ((0.0, 0), (100.0, 1), (300.0, 2)):
        s.process(Point((x,), t))
    assert sum(mc.n for mc in s.micro_clusters) == 3
    assert len(s.micro_clusters) == 2


def test_seeded_kmeans_groups_nonempty():
    X = np.array([[0, 0], [0, 0], [1, 1], [1, 1], [2, 2]], dtype=float)
    labels = seeded_kmeans(X, 5, seed=0)
    assert len(set(labels.tolist())) == 3  # only three distinct rows
    assert labels[0] == labels[1] and labels[2] == labels[3]


small = st.floats(min_value=-10, max_value=10, allow_nan=False).map(lambda v: round(v, 1))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(small, small), min_size=1, max_size=80), st.integers(2, 8), st.integers(0, 3))
def test_conservation_and_budget(rows, k, seed):
    s = MicroEngine(EngineConfig(k=k, init_points=k + 2, seed=seed), 2)
    distinct = set()
    for i, r in enumerate(rows):
        s.process(Point(r, i))
        distinct.add((r[0] + 0.0, r[1] + 0.0))
        snap = s.snapshot(0, 0)
        assert snap.total_points == i + 1
        if s.initialized:
            assert snap.k == min(k, len(distinct))
    ids = [mc.id for mc in s.snapshot(0, 0).micro_clusters]
    assert len(ids) == len(set(ids))
