"""Migration-planner tests: budgets, hybrid mode selection, ordering."""
import random

import pytest
from hypothesis import given, strategies as st

from kvpack import (
    Boundaries,
    ConfigError,
    PendingMove,
    Topology,
    check_budgets,
    consensus_order,
    load_boundaries,
    plan_hybrid,
)
from kvpack.migration import (
    DEFERRED,
    FORCED_KV_TRANSFER,
    KV_TRANSFER,
    TOKEN_TRANSFER,
)


class TestTopology:
    def test_intra_vs_inter_links(self):
        topo = Topology(gpus_per_machine=4)
        assert topo.link_of(0, 3) == ("intra", 0)
        assert topo.link_of(0, 4) == ("inter",)
        assert topo.bandwidth_of(("intra", 0)) == topo.intra_bandwidth_bytes_per_s
        assert topo.bandwidth_of(("inter",)) == topo.inter_bandwidth_bytes_per_s

    def test_invalid_parameters_rejected(self):
        with pytest.raises(ConfigError):
            Topology(gpus_per_machine=0)
        with pytest.raises(ConfigError):
            Topology(prefill_tokens_per_s=0)


class TestLoadBoundaries:
    def test_ten_gbps_half_fraction(self):
        topo = Topology(inter_bandwidth_bytes_per_s=10e9 / 8)  # 10 Gbps
        bounds = load_boundaries(topo, epoch_seconds=1.0, fraction=0.5)
        assert bounds.inter_comm_budget == 625_000_000

    def test_zero_fraction_rejected(self):
        with pytest.raises(ConfigError):
            load_boundaries(Topology(), 1.0, 0.0)

    def test_prefill_budget(self):
        topo = Topology(prefill_tokens_per_s=10_000)
        bounds = load_boundaries(topo, epoch_seconds=1.0, fraction=0.1)
        assert bounds.comp_budget == 1_000

    def test_zero_epoch_rejected(self):
        with pytest.raises(ConfigError):
            load_boundaries(Topology(), 0.0, 0.5)


def bounds_with(comm: float, comp: float) -> Boundaries:
    return Boundaries(comm_budget={}, comp_budget=comp,
                      intra_comm_budget=comm, inter_comm_budget=comm)


class TestPlanHybrid:
    def test_kv_first_then_token_fallback(self):
        topo = Topology()
        bounds = bounds_with(comm=8e9, comp=1_000)
        moves = [
            PendingMove(item=1, src=0, dst=1, kv_bytes=8_000_000_000,
                        tokens=4_000),
            PendingMove(item=2, src=0, dst=1, kv_bytes=2_000_000_000,
                        tokens=500),
        ]
        plan = plan_hybrid(moves, bounds, topo)
        modes = {p.move.item: p.mode for p in plan.assignments}
        assert modes == {1: KV_TRANSFER, 2: TOKEN_TRANSFER}

    def test_empty_move_set(self):
        plan = plan_hybrid([], bounds_with(1e9, 1e4), Topology())
        assert plan.assignments == []
        assert plan.executed == []

    def test_exhausted_budgets_defer_without_spending(self):
        plan = plan_hybrid(
            [PendingMove(item=1, src=0, dst=1, kv_bytes=100, tokens=50)],
            bounds_with(comm=10, comp=1), Topology())
        assert [p.mode for p in plan.assignments] == [DEFERRED]
        assert plan.link_bytes == {}
        assert plan.dest_tokens == {}

    def test_repeatedly_deferred_move_is_forced(self):
        move = PendingMove(item=1, src=0, dst=1, kv_bytes=100, tokens=50)
        plan = plan_hybrid([move], bounds_with(comm=10, comp=1), Topology(),
                           defer_counts={1: 3}, max_defer=3)
        assert [p.mode for p in plan.assignments] == [FORCED_KV_TRANSFER]
        assert plan.forced == [move]

    def test_latency_model_is_linear(self):
        topo = Topology(intra_bandwidth_bytes_per_s=1e9,
                        prefill_tokens_per_s=1_000)
        bounds = bounds_with(comm=5e9, comp=10_000)
        plan = plan_hybrid(
            [PendingMove(item=1, src=0, dst=1, kv_bytes=2_000_000_000,
                         tokens=0)],
            bounds, topo)
        assert plan.assignments[0].latency_s == pytest.approx(2.0)
        plan = plan_hybrid(
            [PendingMove(item=1, src=0, dst=1, kv_bytes=int(6e9),
                         tokens=4_000)],
            bounds, topo)  # over comm budget, falls back to tokens
        assert plan.assignments[0].mode == TOKEN_TRANSFER
        assert plan.assignments[0].latency_s == pytest.approx(4.0)

    def test_budget_audit_clean_without_forcing(self):
        rng = random.Random(0)
        topo = Topology()
        bounds = load_boundaries(topo, 0.5, 0.1)
        moves = [PendingMove(item=i, src=rng.randrange(8),
                             dst=(rng.randrange(8) + 1) % 16,
                             kv_bytes=rng.randint(1, int(2e9)),
                             tokens=rng.randint(1, 5_000))
                 for i in range(25)]
        plan = plan_hybrid(moves, bounds, topo)
        assert check_budgets(plan, bounds) == []


class TestConsensusOrder:
    def test_sort_key(self):
        moves = [
            PendingMove(item=9, src=0, dst=1, kv_bytes=3, tokens=1),
            PendingMove(item=4, src=0, dst=1, kv_bytes=7, tokens=1),
            PendingMove(item=2, src=0, dst=1, kv_bytes=7, tokens=1),
        ]
        assert [m.item for m in consensus_order(moves)] == [2, 4, 9]

    def test_single_move(self):
        move = PendingMove(item=1, src=0, dst=1, kv_bytes=5, tokens=1)
        assert consensus_order([move]) == [move]

    @given(st.lists(st.tuples(st.integers(0, 50), st.integers(1, 1_000)),
                    max_size=25, unique_by=lambda t: t[0]),
           st.randoms(use_true_random=False))
    def test_permutation_invariance(self, specs, rnd):
        moves = [PendingMove(item=i, src=0, dst=1, kv_bytes=kv, tokens=1)
                 for i, kv in specs]
        shuffled = list(moves)
        rnd.shuffle(shuffled)
        assert consensus_order(shuffled) == consensus_order(moves)
