"""Hybrid migration planning under per-epoch communication/compute budgets.

Each scheduler move is carried out either by shipping the KV cache over
the link between the two GPUs (kv_transfer) or by re-prefilling the
request's processed tokens on the destination (token_transfer). Both
consume a per-epoch budget; a move that fits neither budget is deferred,
and after too many consecutive deferrals it is forced through as an
over-budget KV transfer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import ConfigError

LinkId = Tuple

KV_TRANSFER = "kv_transfer"
TOKEN_TRANSFER = "token_transfer"
DEFERRED = "deferred"
FORCED_KV_TRANSFER = "forced_kv_transfer"


@dataclass(frozen=True)
class Topology:
    """GPU-to-machine layout with link bandwidths and prefill throughput.

    GPUs on one machine share an intra-machine link; all cross-machine
    traffic shares one switch-backed inter-machine link.
    """

    gpus_per_machine: int = 4
    intra_bandwidth_bytes_per_s: float = 50e9
    inter_bandwidth_bytes_per_s: float = 1.25e9
    prefill_tokens_per_s: float = 10_000.0

    def __post_init__(self):
        if self.gpus_per_machine < 1:
            raise ConfigError("gpus_per_machine must be >= 1")
        for name in ("intra_bandwidth_bytes_per_s",
                     "inter_bandwidth_bytes_per_s", "prefill_tokens_per_s"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")

    def machine_of(self, gpu_id: int) -> int:
        return gpu_id // self.gpus_per_machine

    def link_of(self, src_gpu: int, dst_gpu: int) -> LinkId:
        m_src, m_dst = self.machine_of(src_gpu), self.machine_of(dst_gpu)
        if m_src == m_dst:
            return ("intra", m_src)
        return ("inter",)

    def bandwidth_of(self, link: LinkId) -> float:
        if link[0] == "intra":
            return self.intra_bandwidth_bytes_per_s
        return self.inter_bandwidth_bytes_per_s


@dataclass(frozen=True)
class Boundaries:
    """Per-epoch transfer budgets derived from offline profiling."""

    comm_budget: Dict[LinkId, float]  # bytes per epoch, keyed lazily
    comp_budget: float  # tokens per epoch per destination GPU
    intra_comm_budget: float
    inter_comm_budget: float

    def comm_budget_of(self, link: LinkId) -> float:
        if link in self.comm_budget:
            return self.comm_budget[link]
        return (self.intra_comm_budget if link[0] == "intra"
                else self.inter_comm_budget)


def load_boundaries(topology: Topology, epoch_seconds: float,
                    fraction: float) -> Boundaries:
    """Budgets = resource rate x epoch length x allowed fraction."""
    if epoch_seconds <= 0:
        raise ConfigError("epoch_seconds must be > 0")
    if not 0.0 < fraction <= 1.0:
        raise ConfigError("budget fraction must be in (0, 1]")
    return Boundaries(
        comm_budget={},
        comp_budget=topology.prefill_tokens_per_s * epoch_seconds * fraction,
        intra_comm_budget=(topology.intra_bandwidth_bytes_per_s
                           * epoch_seconds * fraction),
        inter_comm_budget=(topology.inter_bandwidth_bytes_per_s
                           * epoch_seconds * fraction),
    )


@dataclass(frozen=True)
class PendingMove:
    """One physical transfer request: who moves where, and how big it is."""

    item: int
    src: int
    dst: int
    kv_bytes: int
    tokens: int  # prompt + generated so far (re-prefill cost)


@dataclass
class PlannedMove:
    move: PendingMove
    mode: str  # kv_transfer | token_transfer | deferred | forced_kv_transfer
    latency_s: float = 0.0


@dataclass
class MigrationPlan:
    assignments: List[PlannedMove] = field(default_factory=list)
    link_bytes: Dict[LinkId, float] = field(default_factory=dict)
    dest_tokens: Dict[int, float] = field(default_factory=dict)
    forced: List[PendingMove] = field(default_factory=list)

    @property
    def executed(self) -> List[PlannedMove]:
        return [p for p in self.assignments if p.mode != DEFERRED]

    @property
    def deferred(self) -> List[PendingMove]:
        return [p.move for p in self.assignments if p.mode == DEFERRED]


def consensus_order(moves: Sequence[PendingMove]) -> List[PendingMove]:
    """Canonical order: descending KV bytes, then ascending item id.

    Every planner given the same move set derives the same sequence, so
    independent instances agree on the plan without coordination.
    """
    return sorted(moves, key=lambda m: (-m.kv_bytes, m.item))


def plan_hybrid(moves: Sequence[PendingMove], boundaries: Boundaries,
                topology: Topology,
                defer_counts: Optional[Dict[int, int]] = None,
                max_defer: int = 3) -> MigrationPlan:
    """Greedily assign each move a transport mode within the budgets.

    KV transfer is preferred (no recompute); token transfer is the
    fallback; otherwise the move is deferred. A move already deferred
    ``max_defer`` consecutive epochs is forced through as an over-budget
    KV transfer and flagged.
    """
    defer_counts = defer_counts or {}
    plan = MigrationPlan()
    for move in consensus_order(moves):
        link = topology.link_of(move.src, move.dst)
        used_link = plan.link_bytes.get(link, 0.0)
        used_dest = plan.dest_tokens.get(move.dst, 0.0)
        bandwidth = topology.bandwidth_of(link)
        if used_link + move.kv_bytes <= boundaries.comm_budget_of(link):
            plan.link_bytes[link] = used_link + move.kv_bytes
            plan.assignments.append(PlannedMove(
                move, KV_TRANSFER, move.kv_bytes / bandwidth))
        elif used_dest + move.tokens <= boundaries.comp_budget:
            plan.dest_tokens[move.dst] = used_dest + move.tokens
            plan.assignments.append(PlannedMove(
                move, TOKEN_TRANSFER,
                move.tokens / topology.prefill_tokens_per_s))
        elif defer_counts.get(move.item, 0) >= max_defer:
            plan.forced.append(move)
            plan.assignments.append(PlannedMove(
                move, FORCED_KV_TRANSFER, move.kv_bytes / bandwidth))
        else:
            plan.assignments.append(PlannedMove(move, DEFERRED, 0.0))
    return plan


def check_budgets(plan: MigrationPlan, boundaries: Boundaries) -> List[str]:
    """Budget-safety audit; forced transfers are exempt by design."""
    problems = []
    for link, used in plan.link_bytes.items():
        if used > boundaries.comm_budget_of(link) + 1e-9:
            problems.append(f"link {link} over comm budget: {used}")
    for dst, used in plan.dest_tokens.items():
        if used > boundaries.comp_budget + 1e-9:
            problems.append(f"gpu {dst} over comp budget: {used}")
    return problems
