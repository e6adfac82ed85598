import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mainzsl.continual import (
    Reservoir,
    ReservoirItem,
    augmented_pool,
    build_dynamic_stream,
    build_fixed_stream,
    build_gzsl_view,
    even_counts,
    offer_dataset,
    reservoir_capacity,
    reservoir_offer,
)
from mainzsl.dataio import DatasetBundle, FeatureDataset
from mainzsl.errors import DataError, ProtocolError


def make_bundle(C, n_seen, per_class=4, name="toy", seed=0):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(C), per_class)
    train = [i for i, y in enumerate(labels) if y < n_seen and i % per_class < per_class // 2]
    return DatasetBundle(rng.normal(size=(len(labels), 3)), labels, rng.normal(size=(C, 2)),
                         [f"c{i}" for i in range(C)], list(range(n_seen)), list(range(n_seen, C)),
                         np.array(train), name=name)


def test_even_counts():
    assert even_counts(10, 3) == [3, 3, 4]
    assert sum(even_counts(717, 15)) == 717
    with pytest.raises(ProtocolError):
        even_counts(2, 3)


def test_fixed_toy_k2():
    s = build_fixed_stream(make_bundle(4, 2), 2)
    (t1, t2) = s.views
    assert (len(t1.seen_class_ids), len(t1.unseen_class_ids)) == (2, 2)
    assert (len(t2.seen_class_ids), len(t2.unseen_class_ids)) == (4, 0)


def test_fixed_cub_shape_and_invariants():
    s = build_fixed_stream(make_bundle(200, 150, per_class=2, name="CUB"), 20)
    v3 = s.views[2]
    assert (len(v3.seen_class_ids), len(v3.unseen_class_ids)) == (30, 170)
    for a, b in zip(s.views, s.views[1:]):
        assert set(a.seen_class_ids) < set(b.seen_class_ids)
        assert set(a.unseen_class_ids) > set(b.unseen_class_ids)
    for v in s.views:
        assert set(v.class_ids) == set(range(200))
        assert len(v.class_ids) == 200
    with pytest.raises(ProtocolError):
        build_fixed_stream(make_bundle(200, 150, per_class=2, name="CUB"), 10)


def test_fixed_unseen_classes_get_train_split():
    s = build_fixed_stream(make_bundle(4, 2), 2)
    t2 = s.views[1]
    assert set(np.unique(t2.train_set.labels)) == {2, 3}
    assert set(np.unique(t2.test_set.labels)) == {0, 1, 2, 3}


def test_dynamic_cub_task3():
    s = build_dynamic_stream(make_bundle(200, 150, per_class=2, name="CUB"))
    assert s.K == 20
    v3 = s.views[2]
    assert (len(v3.seen_class_ids), len(v3.unseen_class_ids)) == (21, 9)
    assert len(v3.current_class_ids) == 7
    assert set(np.unique(v3.train_set.labels)) <= set(v3.current_class_ids)


def test_dynamic_toy_two_tasks_and_inductive_table():
    b = make_bundle(6, 4)
    s = build_dynamic_stream(b, [2, 2], [1, 1])
    t1, t2 = s.views
    assert (len(t2.seen_class_ids), len(t2.unseen_class_ids)) == (4, 2)
    np.testing.assert_array_equal(t1.attribute_table, b.attributes[list(t1.class_ids)])
    later = set(t2.class_ids) - set(t1.class_ids)
    assert not later & set(t1.class_ids)
    assert len(t1.attribute_table) == 3
    with pytest.raises(ProtocolError):
        build_dynamic_stream(b, [2, 1], [1, 1])


def test_gzsl_view_is_single_task():
    v = build_gzsl_view(make_bundle(5, 3))
    assert v.seen_class_ids == (0, 1, 2) and v.unseen_class_ids == (3, 4)


def _item(i):
    return ReservoirItem(np.full(2, float(i)), i, np.zeros(2), 1)


def test_reservoir_below_capacity():
    res = Reservoir(2)
    rng = np.random.default_rng(0)
    for i in range(2):
        reservoir_offer(res, _item(i), rng)
    assert [it.label for it in res.items] == [0, 1] and res.stream_count == 2


def test_reservoir_uniform_retention():
    counts = np.zeros(1000)
    for trial in range(500):
        res = Reservoir(100)
        rng = np.random.default_rng(trial)
        for i in range(1000):
            reservoir_offer(res, ReservoirItem(None, i, None, 0), rng)
        counts[[it.label for it in res.items]] += 1
    freq = counts / 500
    # a single item's frequency has binomial sd ~0.013, so the band is checked
    # on stream-position deciles and the per-item spread against that sd
    deciles = freq.reshape(10, 100).mean(axis=1)
    assert np.abs(deciles - 0.10).max() <= 0.02
    assert abs(freq.mean() - 0.1) < 1e-12
    assert abs(freq.std() / np.sqrt(0.1 * 0.9 / 500) - 1.0) < 0.15


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 20), st.integers(0, 60), st.integers(0, 1000))
def test_reservoir_never_exceeds_capacity(M, n, seed):
    res = Reservoir(M)
    rng = np.random.default_rng(seed)
    for i in range(n):
        reservoir_offer(res, _item(i), rng)
        assert len(res) <= M
    assert len(res) == min(M, n)


def test_reservoir_capacity_rule():
    assert reservoir_capacity(10, 20) == 200
    assert reservoir_capacity(0, 20) == 0


def test_augmented_pool():
    cur = FeatureDataset(np.ones((90, 2)), np.zeros(90, int))
    assert augmented_pool(Reservoir(10), cur).labels.tolist() == cur.labels.tolist()
    attrs = np.arange(6.0).reshape(3, 2)
    res = Reservoir(10)
    offer_dataset(res, FeatureDataset(np.zeros((10, 2)), np.arange(10) % 3), attrs, np.random.default_rng(0))
    pool = augmented_pool(res, cur, attrs)
    assert len(pool) == 100
    for it in res.items:
        np.testing.assert_array_equal(it.attribute, attrs[it.label])
    res.items[0] = res.items[0]._replace(attribute=np.array([9.0, 9.0]))
    with pytest.raises(DataError):
        augmented_pool(res, cur, attrs)


def test_manifest_round_trip():
    s = build_fixed_stream(make_bundle(4, 2), 2)
    m = s.manifest()
    assert m["K"] == 2 and m["tasks"][0]["seen"] == [0, 1]
    assert '"protocol": "fixed"' in s.to_json()
