"""Baseline scheduler tests: best-fit, worst-fit, load balancing."""
import pytest

from kvpack import (
    ClusterState,
    GreedyScheduler,
    LbConfig,
    LoadBalancingScheduler,
    RequestTooLarge,
    bf_allocate,
    lb_rebalance,
    wf_allocate,
)

C = 24


def cluster_with_free(*free_list):
    """One GPU per entry, pre-loaded so that its free memory matches."""
    cluster = ClusterState(C)
    rid = 100
    for free in free_list:
        gpu = cluster.activate_gpu()
        if free < C:
            cluster.sizes[rid] = C - free
            cluster.place(rid, gpu.id)
            rid += 1
    return cluster


class TestBestFit:
    def test_tightest_sufficient_gpu(self):
        cluster = cluster_with_free(5, 9, 20)
        bf_allocate(cluster, 1, 8)
        assert cluster.gpu_of(1) == 1  # the free-9 GPU

    def test_no_fit_activates_new_gpu(self):
        cluster = cluster_with_free(5)
        bf_allocate(cluster, 1, 8)
        assert cluster.gpu_of(1) == 1
        assert len(cluster.gpus) == 2

    def test_tie_breaks_to_lower_id(self):
        cluster = cluster_with_free(9, 9)
        bf_allocate(cluster, 1, 8)
        assert cluster.gpu_of(1) == 0

    def test_oversize_rejected(self):
        with pytest.raises(RequestTooLarge):
            bf_allocate(ClusterState(C), 1, C + 1)

    def test_never_migrates(self):
        cluster = cluster_with_free(5, 9, 20)
        log = bf_allocate(cluster, 1, 8)
        assert log.migration_count == 0


class TestWorstFit:
    def test_roomiest_gpu(self):
        cluster = cluster_with_free(5, 9, 20)
        wf_allocate(cluster, 1, 8)
        assert cluster.gpu_of(1) == 2  # the free-20 GPU

    def test_no_fit_activates_new_gpu(self):
        cluster = cluster_with_free(5)
        wf_allocate(cluster, 1, 8)
        assert len(cluster.gpus) == 2

    def test_tie_breaks_to_lower_id(self):
        cluster = cluster_with_free(9, 9)
        wf_allocate(cluster, 1, 8)
        assert cluster.gpu_of(1) == 0


class TestLbRebalance:
    def test_moves_until_within_threshold(self):
        cluster = ClusterState(C)
        hi = cluster.activate_gpu()
        lo = cluster.activate_gpu()
        cluster.sizes[1] = 12
        cluster.sizes[2] = 10
        cluster.place(1, hi.id)
        cluster.place(2, hi.id)
        cluster.sizes[3] = 2
        cluster.place(3, lo.id)
        log = lb_rebalance(cluster, LbConfig(imbalance_threshold=0.25))
        assert len(log.moves) == 1  # one swap closes the 20-byte gap
        gap = abs(cluster.used_bytes(hi.id) - cluster.used_bytes(lo.id))
        assert gap <= 0.25 * C
        assert max(cluster.used_bytes(g) for g in cluster.gpus) < 22

    def test_balanced_cluster_untouched(self):
        cluster = cluster_with_free(10, 10)
        log = lb_rebalance(cluster, LbConfig())
        assert log.moves == []

    def test_single_gpu_untouched(self):
        cluster = cluster_with_free(2)
        log = lb_rebalance(cluster, LbConfig())
        assert log.moves == []

    def test_never_increases_max_load(self):
        cluster = ClusterState(100)
        a = cluster.activate_gpu()
        b = cluster.activate_gpu()
        for rid, (size, gpu) in enumerate([(40, a), (30, a), (20, a),
                                           (5, b)]):
            cluster.sizes[rid] = size
            cluster.place(rid, gpu.id)
        before = max(cluster.used_bytes(g) for g in cluster.gpus)
        lb_rebalance(cluster, LbConfig(imbalance_threshold=0.1))
        after = max(cluster.used_bytes(g) for g in cluster.gpus)
        assert after <= before
        cluster.check_capacity()

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            LbConfig(rebalance_period=0)
        with pytest.raises(ValueError):
            LbConfig(imbalance_threshold=1.5)


class TestSchedulerAdapters:
    def test_greedy_epoch_places_and_departs(self):
        cluster = ClusterState(C)
        sched = GreedyScheduler(cluster, best_fit=True)
        result = sched.step_epoch([(1, 10), (2, 10)], [])
        assert cluster.gpu_of(1) is not None
        assert result.migration_count == 0
        result = sched.step_epoch([], [1, 2])
        assert not cluster.gpus

    def test_lb_epoch_rebalances_on_overload(self):
        cluster = ClusterState(C)
        sched = LoadBalancingScheduler(cluster, LbConfig())
        sched.step_epoch([(1, 10), (2, 10), (3, 10)], [])
        cluster.check_capacity()
        assert len(cluster.gpus) >= 2
