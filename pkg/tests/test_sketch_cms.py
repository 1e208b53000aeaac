import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import exact_counts
from edgeburst.sketch import (
    KIND_EDGE,
    KIND_NODE,
    CountMinSketch,
    SketchKey,
    bucket_indices,
    edge_key,
    node_key,
)


class TestConstruction:
    def test_paper_shape_starts_empty(self):
        s = CountMinSketch(2, 719, 42)
        assert s.counters.shape == (2, 719)
        assert not s.counters.any()

    def test_wide_shape(self):
        s = CountMinSketch(2, 1024, 7)
        assert s.counters.shape == (2, 1024)

    @pytest.mark.parametrize("rows,buckets", [(0, 10), (10, 0), (0, 0), (-1, 5)])
    def test_rejects_degenerate_dims(self, rows, buckets):
        with pytest.raises(ValueError):
            CountMinSketch(rows, buckets)

    def test_same_config_hashes_identically(self):
        a = CountMinSketch(3, 101, 9)
        b = CountMinSketch(3, 101, 9)
        for i in range(50):
            a.update(edge_key(i, i + 1), 2.0)
            b.update(edge_key(i, i + 1), 2.0)
        assert np.array_equal(a.counters, b.counters)

    def test_different_seeds_hash_differently(self):
        a = CountMinSketch(2, 719, 1)
        b = CountMinSketch(2, 719, 2)
        a.update(edge_key(3, 4))
        b.update(edge_key(3, 4))
        assert not np.array_equal(a.counters, b.counters)


class TestUpdateEstimate:
    def test_repeated_update_exact_without_collisions(self):
        s = CountMinSketch(2, 719, 42)
        k = edge_key(1, 2)
        for _ in range(5):
            s.update(k)
        assert s.estimate(k) >= 5
        assert s.estimate(k) == 5  # only key inserted, no collision possible

    def test_zero_delta_is_noop(self):
        s = CountMinSketch(2, 64, 0)
        k = edge_key(1, 2)
        s.update(k, 0.0)
        assert s.estimate(k) == 0.0
        assert s.total_mass() == 0.0

    def test_negative_delta_rejected(self):
        s = CountMinSketch(2, 64, 0)
        with pytest.raises(ValueError):
            s.update(edge_key(1, 2), -1.0)
        with pytest.raises(ValueError):
            s.update_many(KIND_EDGE, [1], [2], [-0.5])

    def test_empty_estimate_is_zero(self):
        s = CountMinSketch(2, 719, 42)
        assert s.estimate(edge_key(9, 9)) == 0.0

    def test_single_bucket_collapses_to_total_mass(self):
        s = CountMinSketch(1, 1, 0)
        s.update(edge_key(1, 2), 8.0)
        s.update(edge_key(3, 4), 9.0)
        assert s.estimate(edge_key(100, 200)) == 17.0
        assert s.total_mass() == 17.0

    def test_never_underestimates_random_stream(self):
        rng = np.random.default_rng(1)
        keys = rng.integers(0, 50, size=(10_000, 2))
        s = CountMinSketch(2, 719, 42)
        s.update_many(KIND_EDGE, keys[:, 0], keys[:, 1], 1.0)
        oracle = exact_counts(map(tuple, keys.tolist()))
        for (u, v), true in oracle.items():
            assert s.estimate(edge_key(u, v)) >= true

    def test_estimate_within_eps_v_of_truth(self):
        # Adversarial tiny sketch: heavy collisions, bound still holds.
        rng = np.random.default_rng(2)
        keys = rng.integers(0, 2, size=(2000, 2))
        s = CountMinSketch(2, 8, 3)
        s.update_many(KIND_EDGE, keys[:, 0], keys[:, 1], 1.0)
        eps = math.e / s.buckets
        v = s.total_mass()
        oracle = exact_counts(map(tuple, keys.tolist()))
        for (u, v_), true in oracle.items():
            est = s.estimate(edge_key(u, v_))
            assert true <= est <= true + eps * v

    def test_scalar_and_vector_paths_agree(self):
        rng = np.random.default_rng(3)
        a = rng.integers(0, 30, 500)
        b = rng.integers(0, 30, 500)
        w = rng.integers(1, 5, 500).astype(float)
        s_vec = CountMinSketch(3, 97, 11)
        s_vec.update_many(KIND_EDGE, a, b, w)
        s_sca = CountMinSketch(3, 97, 11)
        for ai, bi, wi in zip(a.tolist(), b.tolist(), w.tolist()):
            s_sca.update(edge_key(ai, bi), wi)
        assert np.array_equal(s_vec.counters, s_sca.counters)
        est_vec = s_vec.estimate_many(KIND_EDGE, a[:50], b[:50])
        est_sca = [s_sca.estimate(edge_key(ai, bi)) for ai, bi in zip(a[:50], b[:50])]
        assert np.array_equal(est_vec, est_sca)

    def test_edge_keys_are_directed(self):
        assert edge_key(1, 2) != edge_key(2, 1)
        s = CountMinSketch(2, 719, 5)
        s.update(edge_key(1, 2), 7.0)
        assert s.estimate(edge_key(1, 2)) == 7.0
        assert s.estimate(edge_key(2, 1)) < 7.0  # independent cell at this seed

    def test_node_and_edge_keys_are_distinct_streams(self):
        s = CountMinSketch(2, 719, 5)
        s.update(node_key(1), 3.0)
        assert s.estimate(edge_key(1, 0)) < 3.0


class TestMerge:
    def test_merge_with_empty_is_identity(self):
        s = CountMinSketch(2, 64, 1)
        s.update_many(KIND_EDGE, [1, 2, 3], [4, 5, 6], 2.0)
        merged = s.merge(CountMinSketch(2, 64, 1))
        assert np.array_equal(merged.counters, s.counters)

    def test_merge_equals_concatenated_build(self):
        rng = np.random.default_rng(4)
        k1 = rng.integers(0, 40, size=(800, 2))
        k2 = rng.integers(20, 60, size=(600, 2))
        a = CountMinSketch(2, 131, 9)
        a.update_many(KIND_EDGE, k1[:, 0], k1[:, 1], 1.0)
        b = CountMinSketch(2, 131, 9)
        b.update_many(KIND_EDGE, k2[:, 0], k2[:, 1], 1.0)
        both = CountMinSketch(2, 131, 9)
        allk = np.vstack([k1, k2])
        both.update_many(KIND_EDGE, allk[:, 0], allk[:, 1], 1.0)
        assert np.array_equal(a.merge(b).counters, both.counters)

    def test_merged_estimate_is_sum_of_estimates_for_any_key(self):
        # Exact for Count-Min only in the pointwise-counter sense; check
        # mass additivity across a three-way merge.
        parts = []
        for seed_stream in range(3):
            s = CountMinSketch(2, 97, 7)
            rng = np.random.default_rng(seed_stream)
            ks = rng.integers(0, 10, size=(100, 2))
            s.update_many(KIND_EDGE, ks[:, 0], ks[:, 1], 1.0)
            parts.append(s)
        merged = parts[0].merge(parts[1]).merge(parts[2])
        assert merged.total_mass() == sum(p.total_mass() for p in parts)

    def test_incompatible_merge_rejected(self):
        base = CountMinSketch(2, 64, 1)
        for other in (CountMinSketch(3, 64, 1), CountMinSketch(2, 32, 1),
                      CountMinSketch(2, 64, 2)):
            with pytest.raises(ValueError):
                base.merge(other)
            with pytest.raises(ValueError):
                base.merge_in(other)


class TestScaleClear:
    def test_scale_zero_annihilates(self):
        s = CountMinSketch(2, 64, 0)
        s.update(edge_key(1, 2), 10.0)
        s.scale(0.0)
        assert not s.counters.any()

    def test_scale_one_is_identity(self):
        s = CountMinSketch(2, 64, 0)
        s.update(edge_key(1, 2), 10.0)
        before = s.counters.copy()
        s.scale(1.0)
        assert np.array_equal(s.counters, before)

    def test_decay_factor_scales_mass(self):
        s = CountMinSketch(2, 64, 0)
        s.update_many(KIND_EDGE, range(10), range(10), 10.0)
        assert s.total_mass() == 100.0
        s.scale(0.6)
        assert s.total_mass() == pytest.approx(60.0, rel=1e-12)

    @pytest.mark.parametrize("factor", [-0.1, 1.1, 2.0])
    def test_scale_out_of_range_rejected(self, factor):
        s = CountMinSketch(2, 64, 0)
        with pytest.raises(ValueError):
            s.scale(factor)

    def test_clear_resets_all_estimates(self):
        s = CountMinSketch(2, 64, 0)
        s.update_many(KIND_EDGE, range(20), range(20), 3.0)
        s.clear()
        assert s.total_mass() == 0.0
        for i in range(20):
            assert s.estimate(edge_key(i, i)) == 0.0
        s.clear()  # idempotent
        assert s.total_mass() == 0.0

    def test_singleton_after_clear_is_exact(self):
        s = CountMinSketch(2, 64, 0)
        s.update_many(KIND_EDGE, range(20), range(20), 3.0)
        s.clear()
        s.update(edge_key(7, 8), 2.5)
        assert s.estimate(edge_key(7, 8)) == 2.5


class TestTotalMass:
    def test_empty_mass_zero(self):
        assert CountMinSketch(2, 64, 0).total_mass() == 0.0

    def test_mass_adds_update_weights(self):
        s = CountMinSketch(2, 64, 0)
        s.update(edge_key(1, 2), 3.0)
        s.update(edge_key(3, 4), 4.0)
        assert s.total_mass() == 7.0

    def test_mass_adds_across_merge(self):
        a = CountMinSketch(2, 64, 0)
        a.update(edge_key(1, 2), 10.0)
        b = CountMinSketch(2, 64, 0)
        b.update(edge_key(5, 6), 20.0)
        assert a.merge(b).total_mass() == 30.0


# -- properties ---------------------------------------------------------

key_lists = st.lists(
    st.tuples(st.integers(0, 30), st.integers(0, 30)), min_size=1, max_size=300
)


@given(keys=key_lists, rows=st.integers(1, 3), buckets=st.sampled_from([16, 97, 719]))
def test_property_one_sided_error(keys, rows, buckets):
    arr = np.array(keys)
    s = CountMinSketch(rows, buckets, 42)
    s.update_many(KIND_EDGE, arr[:, 0], arr[:, 1], 1.0)
    oracle = exact_counts(keys)
    for (u, v), true in oracle.items():
        assert s.estimate(edge_key(u, v)) >= true


@given(keys=key_lists, cut=st.integers(0, 300))
def test_property_merge_concat_equivalence(keys, cut):
    cut = min(cut, len(keys))
    arr = np.array(keys)
    a = CountMinSketch(2, 61, 5)
    b = CountMinSketch(2, 61, 5)
    if cut:
        a.update_many(KIND_EDGE, arr[:cut, 0], arr[:cut, 1], 1.0)
    if cut < len(keys):
        b.update_many(KIND_EDGE, arr[cut:, 0], arr[cut:, 1], 1.0)
    whole = CountMinSketch(2, 61, 5)
    whole.update_many(KIND_EDGE, arr[:, 0], arr[:, 1], 1.0)
    assert np.array_equal(a.merge(b).counters, whole.counters)


@given(keys=key_lists, factor=st.floats(0.0, 1.0, allow_nan=False))
def test_property_scale_linearity(keys, factor):
    arr = np.array(keys)
    s = CountMinSketch(2, 61, 5)
    s.update_many(KIND_EDGE, arr[:, 0], arr[:, 1], 1.0)
    before = {k: s.estimate(edge_key(*k)) for k in set(keys)}
    s.scale(factor)
    for k, est in before.items():
        assert s.estimate(edge_key(*k)) == pytest.approx(est * factor, rel=1e-12, abs=1e-12)


@given(keys=key_lists)
def test_property_row_sums_equal(keys):
    arr = np.array(keys)
    s = CountMinSketch(3, 61, 5)
    s.update_many(KIND_EDGE, arr[:, 0], arr[:, 1], 1.0)
    sums = s.counters.sum(axis=1)
    assert np.all(sums == sums[0])  # integer weights: exact in float64
