"""Oracle tests: exact packing, offline optimum, ratio check, weights."""
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from kvpack import (
    ClusterState,
    brute_force_bin_pack,
    competitive_check,
    exact_bin_pack,
    opt_lower_bound,
    weight_audit,
)


class TestExactBinPack:
    def test_empty(self):
        assert exact_bin_pack([], 24) == 0

    def test_two_pairs(self):
        assert exact_bin_pack([13, 13, 9, 9], 24) == 2

    def test_full_items_need_one_bin_each(self):
        assert exact_bin_pack([24] * 5, 24) == 5

    def test_oversize_infeasible(self):
        with pytest.raises(ValueError):
            exact_bin_pack([25], 24)

    def test_tight_two_bin_instance(self):
        # Both bins must be filled exactly; any misstep needs a third.
        assert exact_bin_pack([6, 5, 5, 4, 4, 4, 4], 16) == 2

    @settings(max_examples=150, deadline=None)
    @given(st.lists(st.integers(1, 30), max_size=7), st.integers(30, 60))
    def test_matches_exhaustive_enumeration(self, sizes, capacity):
        assert (exact_bin_pack(sizes, capacity)
                == brute_force_bin_pack(sizes, capacity))

    @given(st.lists(st.integers(1, 50), max_size=10), st.integers(50, 100))
    def test_volume_lower_bound(self, sizes, capacity):
        bins = exact_bin_pack(sizes, capacity)
        assert bins * capacity >= sum(sizes)
        assert bins <= len(sizes)


class TestOptLowerBound:
    def test_single_request(self):
        assert opt_lower_bound([10], 24).bins == 1

    def test_peak_across_slots(self):
        capacity = 100
        slot_a = opt_lower_bound([60, 60], capacity)
        slot_b = opt_lower_bound([60, 40], capacity)
        assert max(slot_a.bins, slot_b.bins) == 2
        assert slot_b.bins == 1

    def test_empty(self):
        res = opt_lower_bound([], 24)
        assert res.bins == 0 and res.exact

    def test_large_instance_falls_back_to_volume_bound(self):
        res = opt_lower_bound([30] * 30, 100)
        assert not res.exact
        assert res.bins == 9  # ceil(900 / 100)

    def test_monotone_in_items(self):
        sizes = [40, 35, 20, 55, 10]
        capacity = 60
        prev = 0
        for k in range(len(sizes) + 1):
            bins = opt_lower_bound(sizes[:k], capacity).bins
            assert bins >= prev
            prev = bins


class TestCompetitiveCheck:
    def test_within_allowance(self):
        report = competitive_check([4], [3], slack=4)
        assert report.ok  # 4 <= ceil(4) + 4

    def test_exceeding_allowance(self):
        report = competitive_check([10], [3], slack=4)
        assert not report.ok
        assert report.worst_slot == 0
        assert report.worst_excess == 2  # 10 - (4 + 4)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            competitive_check([1, 2], [1])


def place_all(cluster, gpu_loads):
    rid = 0
    for loads in gpu_loads:
        gpu = cluster.activate_gpu()
        for size in loads:
            cluster.sizes[rid] = size
            cluster.place(rid, gpu.id)
            rid += 1


class TestWeightAudit:
    C = 120_000

    def test_combined_l_plus_m_gpu(self):
        cluster = ClusterState(self.C)
        place_all(cluster, [[70_000, 45_000]])
        report = weight_audit(cluster)
        assert report["total_weight"] == Fraction(4, 3)
        assert report["combined_l_requests"] == 1
        assert report["per_gpu_weight_ok"]
        assert report["ok"]

    def test_three_small_gpu(self):
        cluster = ClusterState(self.C)
        place_all(cluster, [[35_000, 35_000, 35_000]])
        report = weight_audit(cluster)
        assert report["total_weight"] == Fraction(1)

    def test_empty_cluster(self):
        report = weight_audit(ClusterState(self.C))
        assert report["total_weight"] == 0
        assert report["count_bound_ok"]
        assert report["ok"]

    def test_count_bound_with_exemptions(self):
        cluster = ClusterState(self.C)
        place_all(cluster, [[70_000, 35_000], [45_000, 45_000],
                            [35_000, 35_000, 35_000], [20_000, 20_000,
                                                       25_000, 25_000]])
        report = weight_audit(cluster)
        assert report["active_gpus"] == 4
        assert report["count_bound_ok"]
