"""Scheduler tests: placement rules, repairs, grouping, batching, shape."""
import random

import pytest

from kvpack import (
    ClusterState,
    MellScheduler,
    NotPlaced,
    RequestTooLarge,
    SizeClass,
    allocation_priority,
    migration_priority,
    verify_properties,
)

C = 120_000

# Representative sizes per class at C = 120000.
L_SIZE = 72_000   # > C/2
M_SIZE = 45_000   # in (C/3, C/2]
S_SIZE = 30_100   # in (C/4, C/3]
T_SIZE = 25_000   # in (C/8, C/4]
TINY_SIZE = 7_500  # <= C/8


def fresh():
    cluster = ClusterState(C)
    return cluster, MellScheduler(cluster)


class TestPriorities:
    def test_more_free_memory_wins(self):
        cluster = ClusterState(100)
        cluster.activate_gpu()
        cluster.activate_gpu()
        cluster.sizes[0] = 90
        cluster.sizes[1] = 96
        cluster.place(0, 0)
        cluster.place(1, 1)
        assert allocation_priority(cluster, 0) > allocation_priority(cluster, 1)

    def test_fewer_residents_wins_at_equal_free(self):
        cluster = ClusterState(100)
        cluster.activate_gpu()
        cluster.activate_gpu()
        cluster.sizes[0] = 60
        cluster.place(0, 0)
        for rid, size in [(1, 20), (2, 20), (3, 20)]:
            cluster.sizes[rid] = size
            cluster.place(rid, 1)
        assert allocation_priority(cluster, 0) > allocation_priority(cluster, 1)

    def test_same_machine_destination_preferred(self):
        cluster = ClusterState(100, gpus_per_machine=2)
        for _ in range(3):
            cluster.activate_gpu()  # gpus 0,1 on machine 0; gpu 2 on machine 1
        assert (migration_priority(cluster, 0, 1)
                > migration_priority(cluster, 0, 2))

    def test_same_src_dst_rejected(self):
        cluster = ClusterState(100)
        cluster.activate_gpu()
        with pytest.raises(ValueError):
            migration_priority(cluster, 0, 0)


class TestAllocate:
    def test_empty_cluster_medium(self):
        cluster, sched = fresh()
        log = sched.allocate(1, M_SIZE)
        assert len(cluster.gpus) == 1
        assert log.migration_count == 0

    def test_small_prefers_l_gpu_with_room(self):
        cluster, sched = fresh()
        sched.allocate(1, L_SIZE)           # L-GPU at 60%
        sched.allocate(2, 50_000)           # M-GPU (does not fit beside L)
        sched.allocate(3, S_SIZE)           # S fits beside the L-request
        assert cluster.gpu_of(3) == cluster.gpu_of(1)

    def test_large_pulls_a_small_donor(self):
        cluster, sched = fresh()
        for rid in (1, 2, 3):
            sched.allocate(rid, S_SIZE)     # one S-GPU with three S-requests
        log = sched.allocate(4, 80_000)
        j = cluster.gpu_of(4)
        residents = cluster.gpus[j].residents
        classes = sorted(cluster.item_class(it).value for it in residents)
        assert classes == ["L", "S"]
        assert log.migration_count <= 5

    def test_oversize_rejected(self):
        _, sched = fresh()
        with pytest.raises(RequestTooLarge):
            sched.allocate(1, C + 1)

    def test_t_request_tops_up_latest_t_gpu(self):
        cluster, sched = fresh()
        for rid in range(4):
            sched.allocate(rid, T_SIZE)
        assert len(cluster.gpus) == 1       # four T-requests fill one GPU
        sched.allocate(4, T_SIZE)
        assert len(cluster.gpus) == 2       # fifth does not fit


class TestDepart:
    def test_latest_gpu_departs_free(self):
        cluster, sched = fresh()
        sched.allocate(1, M_SIZE)
        log = sched.depart(1)
        assert log.migration_count == 0
        cluster.terminate_idle_gpus()
        assert not cluster.gpus

    def test_t_from_non_latest_t_gpu(self):
        cluster, sched = fresh()
        for rid in range(8):
            sched.allocate(rid, T_SIZE)     # two T-GPUs, four requests each
        non_latest = min(cluster.gpus,
                         key=lambda g: cluster.gpus[g].activation_seq)
        victim = next(iter(cluster.gpus[non_latest].residents))
        log = sched.depart(victim)
        assert log.migration_count <= 2
        assert verify_properties(cluster) == []

    def test_large_with_one_small_corider(self):
        cluster, sched = fresh()
        for rid in (1, 2, 3):
            sched.allocate(rid, S_SIZE)
        sched.allocate(4, 80_000)           # L pulls one S beside it
        log = sched.depart(4)
        assert log.migration_count <= 3
        assert verify_properties(cluster) == []

    def test_unplaced_rejected(self):
        _, sched = fresh()
        with pytest.raises(NotPlaced):
            sched.depart(99)


class TestUpdate:
    def test_small_grown_into_medium_is_reallocated(self):
        cluster, sched = fresh()
        sched.allocate(1, S_SIZE)
        cluster.set_size(1, M_SIZE)
        log = sched.update(1)
        assert sched.scheduled_class[1] is SizeClass.M
        assert log.migration_count <= 10
        assert verify_properties(cluster) == []

    def test_medium_to_large_without_overload_moves_nothing(self):
        cluster, sched = fresh()
        sched.allocate(1, M_SIZE)           # alone on its GPU
        cluster.set_size(1, 70_000)
        log = sched.update(1)
        assert log.moves == []
        assert sched.scheduled_class[1] is SizeClass.L

    def test_growth_overload_stays_within_bound(self):
        cluster, sched = fresh()
        sched.allocate(1, L_SIZE)
        sched.allocate(2, M_SIZE)
        sched.allocate(3, M_SIZE)
        grown = next(r for r in (2, 3)
                     if cluster.gpu_of(r) == cluster.gpu_of(1))
        cluster.set_size(grown, M_SIZE + 20_000)
        logs = sched.handle_growth([grown])
        assert sum(log.migration_count for log in logs) <= 10
        cluster.check_capacity()
        assert verify_properties(cluster) == []


class TestGroupTiny:
    def test_three_tiny_seal_a_t_group(self):
        cluster, sched = fresh()
        for rid in (1, 2, 3):
            sched.allocate(rid, TINY_SIZE)
        assert len(cluster.groups) == 1
        gid = next(iter(cluster.groups))
        assert cluster.groups[gid].members == {1, 2, 3}
        assert cluster.item_class(gid) is SizeClass.T

    def test_single_small_tiny_group_stays_open(self):
        cluster, sched = fresh()
        sched.allocate(1, 12_000)  # C/10, still below the T threshold
        gid = next(iter(cluster.groups))
        assert 8 * cluster.item_size(gid) <= C  # open: not yet T-class
        assert cluster.gpu_of(gid) is not None

    def test_member_depart_reopens_group(self):
        cluster, sched = fresh()
        for rid in (1, 2, 3):
            sched.allocate(rid, TINY_SIZE)
        log = sched.depart(2)
        assert log.kind == "update"  # the shrunken group was re-handled
        gid = next(iter(cluster.groups))
        assert cluster.groups[gid].members == {1, 3}
        assert 8 * cluster.item_size(gid) <= C


class TestVerifyProperties:
    def test_empty_cluster_conforms(self):
        assert verify_properties(ClusterState(C)) == []

    def test_underfilled_non_latest_s_gpu_flagged(self):
        cluster = ClusterState(C)
        a = cluster.activate_gpu()
        b = cluster.activate_gpu()  # later activation: the exempt S-GPU
        rid = 0
        for gpu, count in ((a, 2), (b, 3)):
            for _ in range(count):
                cluster.sizes[rid] = S_SIZE
                cluster.place(rid, gpu.id)
                rid += 1
        violations = verify_properties(cluster)
        assert [(v.gpu_id, v.code) for v in violations] == [(a.id, "P2")]

    def test_explicit_exempt_set_is_honored(self):
        cluster = ClusterState(C)
        gpu = cluster.activate_gpu()
        cluster.sizes[0] = S_SIZE
        cluster.place(0, gpu.id)
        assert verify_properties(cluster) == []  # latest S-GPU exempt
        assert verify_properties(cluster, exempt=set()) != []


class TestEpochs:
    def test_no_events_no_moves(self):
        _, sched = fresh()
        result = sched.step_epoch([], [])
        assert result.moves == []
        assert result.terminated == []

    def test_idle_gpu_terminated_at_epoch_end(self):
        cluster, sched = fresh()
        sched.allocate(1, M_SIZE)
        result = sched.step_epoch([], [1])
        assert result.terminated == [0]
        assert not cluster.gpus

    def test_batched_depart_plus_allocate_cancels_refill(self):
        cluster = ClusterState(C)
        sched = MellScheduler(cluster, batching=True)
        for rid in (1, 2, 3, 4):
            sched.allocate(rid, M_SIZE)  # two full M-GPUs
        result = sched.step_epoch([(5, M_SIZE)], [1])
        assert result.migration_count == 0
        assert verify_properties(cluster) == []

    def test_batched_never_beats_sequential(self):
        cluster = ClusterState(C)
        sched = MellScheduler(cluster, batching=True)
        rng = random.Random(7)
        next_id = 0
        for _ in range(60):
            arrivals = [(next_id + k, rng.randint(1, C)) for k in
                        range(rng.randint(0, 3))]
            next_id += len(arrivals)
            live = cluster.running_requests()
            completions = rng.sample(live, min(len(live),
                                               rng.randint(0, 2)))
            sched.step_epoch(arrivals, completions)
        assert sched.epoch_migration_counts
        for seq_count, adopted in sched.epoch_migration_counts:
            assert adopted <= seq_count


class TestRandomizedShape:
    """Small-scale version of the full conformance sweep (fast smoke)."""

    def test_random_operations_keep_the_shape(self):
        from kvpack.verification import placement_property_sweep
        props, bounds = placement_property_sweep(seeds=3, ops_per_seed=200)
        assert props.passed, props.measured
        assert bounds.passed, bounds.measured
