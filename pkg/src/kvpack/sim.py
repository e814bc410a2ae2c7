"""Discrete-time simulation loop.

Per slot: grow running requests' KV caches, detect completions, hand
arrivals/completions/growth to the configured scheduler at epoch
boundaries, pass the scheduler's cross-GPU moves to the hybrid migration
planner, and append one metrics row. Deterministic for a fixed config
and trace.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .baselines import GreedyScheduler, LbConfig, LoadBalancingScheduler
from .config import RunConfig
from .errors import ConfigError
from .migration import (PendingMove, Topology, load_boundaries, plan_hybrid)
from .model import ClusterState, Request, active_gpu_count, kv_size_at
from .oracle import EXACT_LIMIT, OptResult, opt_lower_bound
from .scheduler import MellScheduler, PriorityConfig
from .workload import Trace

METRICS_HEADER = ["slot", "active_gpus", "migrations", "deferred",
                  "forced", "used_bytes", "capacity_bytes"]


@dataclass
class MetricsSeries:
    slots: List[int] = field(default_factory=list)
    active_gpus: List[int] = field(default_factory=list)
    migrations: List[int] = field(default_factory=list)
    deferred: List[int] = field(default_factory=list)
    forced: List[int] = field(default_factory=list)
    used_bytes: List[int] = field(default_factory=list)
    capacity_bytes: List[int] = field(default_factory=list)

    def append(self, slot: int, active: int, migrations: int, deferred: int,
               forced: int, used: int, capacity: int) -> None:
        self.slots.append(slot)
        self.active_gpus.append(active)
        self.migrations.append(migrations)
        self.deferred.append(deferred)
        self.forced.append(forced)
        self.used_bytes.append(used)
        self.capacity_bytes.append(capacity)

    @property
    def peak_gpus(self) -> int:
        return max(self.active_gpus, default=0)

    @property
    def total_migrations(self) -> int:
        return sum(self.migrations)

    @property
    def mean_utilization(self) -> float:
        ratios = [u / c for u, c in zip(self.used_bytes, self.capacity_bytes)
                  if c > 0]
        return sum(ratios) / len(ratios) if ratios else 0.0


@dataclass
class RunResult:
    metrics: MetricsSeries
    events: List[Tuple[int, str, str]]  # (slot, kind, detail)
    summary: Dict[str, object]
    cluster: ClusterState
    alive_sizes: List[List[int]]  # per-slot resident KV sizes, for oracles
    # (sequential, adopted) migration counts per batched epoch; empty for
    # schedulers without a batching mode.
    epoch_migration_counts: List[Tuple[int, int]] = field(default_factory=list)


def _make_scheduler(config: RunConfig, cluster: ClusterState):
    kind = config.scheduler.kind
    if kind == "mell":
        prio = PriorityConfig(
            weight_free_mem=config.scheduler.weight_free_mem,
            weight_request_count=config.scheduler.weight_request_count,
            weight_same_machine=config.scheduler.weight_same_machine,
        )
        return MellScheduler(cluster, priority_cfg=prio,
                             batching=config.scheduler.batching)
    if kind in ("bf", "wf"):
        return GreedyScheduler(cluster, best_fit=(kind == "bf"))
    if kind == "lb":
        return LoadBalancingScheduler(cluster, LbConfig(
            rebalance_period=config.scheduler.rebalance_period,
            imbalance_threshold=config.scheduler.imbalance_threshold,
        ))
    raise ConfigError(f"unknown scheduler kind {kind!r}")


def _completion_slot(request: Request, tokens_per_slot: int) -> int:
    return request.arrival_slot + math.ceil(
        request.response_tokens / tokens_per_slot)


def run(config: RunConfig, trace: Trace) -> RunResult:
    """Simulate one scheduler over one trace; see module docstring."""
    bpt = config.workload.kv_bytes_per_token
    tokens_per_slot = config.sim.tokens_per_slot
    epoch_slots = config.sim.epoch_slots
    capacity = config.cluster.capacity_bytes

    cluster = ClusterState(capacity_bytes=capacity,
                           gpus_per_machine=config.cluster.gpus_per_machine)
    scheduler = _make_scheduler(config, cluster)
    topology = Topology(
        gpus_per_machine=config.cluster.gpus_per_machine,
        intra_bandwidth_bytes_per_s=config.cluster.intra_bandwidth_bytes_per_s,
        inter_bandwidth_bytes_per_s=config.cluster.inter_bandwidth_bytes_per_s,
        prefill_tokens_per_s=config.cluster.prefill_tokens_per_s,
    )
    boundaries = load_boundaries(topology, config.migration.epoch_seconds,
                                 config.migration.budget_fraction)

    requests: Dict[int, Request] = {}
    for rec in trace.records:
        requests[rec.request_id] = Request(
            id=rec.request_id, arrival_slot=rec.arrival_slot,
            prompt_tokens=rec.prompt_tokens,
            response_tokens=rec.response_tokens,
            kv_bytes_per_token=bpt)
    arrivals_by_slot: Dict[int, List[Request]] = {}
    for req in requests.values():
        arrivals_by_slot.setdefault(req.arrival_slot, []).append(req)
    last_arrival = max((r.arrival_slot for r in requests.values()), default=-1)
    horizon = max(config.workload.duration_slots, last_arrival + 1)

    running: Dict[int, Request] = {}
    buffered_arrivals: List[Tuple[int, int]] = []
    reserve_final = config.scheduler.kind in ("bf", "wf")
    # Physical transfer backlog: item -> pending move, carried across
    # epochs while the data-plane budget is exhausted.
    pending: Dict[int, PendingMove] = {}
    defer_counts: Dict[int, int] = {}

    metrics = MetricsSeries()
    events: List[Tuple[int, str, str]] = []
    alive_sizes: List[List[int]] = []
    completed = 0
    rejected = 0
    aborted = 0
    max_gpus_seen = 0
    slot = 0
    while slot < horizon or running or buffered_arrivals:
        # 1. Grow running requests and detect completions.
        growths: Dict[int, int] = {}
        completions: List[int] = []
        for rid, req in running.items():
            if _completion_slot(req, tokens_per_slot) <= slot:
                completions.append(rid)
            else:
                growths[rid] = kv_size_at(req, slot, tokens_per_slot)
        for req in arrivals_by_slot.get(slot, []):
            # Schedulers that never migrate cannot react to KV growth, so
            # they must reserve each request's full final footprint at
            # admission; migrating schedulers place the current size.
            if reserve_final:
                size = (req.prompt_tokens + req.response_tokens) * bpt
            else:
                size = req.prompt_tokens * bpt
            buffered_arrivals.append((req.id, size))

        # 2. Scheduler step. Completions and growth must be applied every
        # slot to keep memory accounting truthful; fresh arrivals wait for
        # the next epoch boundary when epoch_slots > 1.
        if slot % epoch_slots == 0:
            arrivals, buffered_arrivals = buffered_arrivals, []
        else:
            arrivals = []
        result = scheduler.step_epoch(arrivals, completions, growths=growths)
        slot_migrations = 0
        gone = set(completions)
        for log in result.logs:
            for mv in log.moves:
                if mv.src is not None:
                    slot_migrations += 1
                    item = mv.item
                    phys = pending[item].src if item in pending else mv.src
                    pending[item] = PendingMove(
                        item=item, src=phys, dst=mv.dst, kv_bytes=0, tokens=0)
            for kind, detail in log.events:
                events.append((slot, kind, detail))
                if kind == "rejected":
                    rejected += 1
                    gone.add(int(detail))
                elif kind == "aborted":
                    aborted += 1
                    gone.add(int(detail))

        for rid in completions:
            running.pop(rid, None)
            completed += 1
        for rid in gone - set(completions):
            running.pop(rid, None)
        for rid, _size in arrivals:
            if rid not in gone:
                running[rid] = requests[rid]
                requests[rid].advance_state("running")

        # 3. Data plane: refresh the backlog and plan physical transfers.
        for item in list(pending):
            loc = cluster.placement.get(item)
            if loc is None or loc == pending[item].src:
                del pending[item]
                defer_counts.pop(item, None)
                continue
            size = cluster.item_size(item)
            pending[item] = PendingMove(
                item=item, src=pending[item].src, dst=loc,
                kv_bytes=size, tokens=size // bpt)
        plan = plan_hybrid(list(pending.values()), boundaries, topology,
                           defer_counts=defer_counts,
                           max_defer=config.migration.max_defer)
        for planned in plan.executed:
            del pending[planned.move.item]
            defer_counts.pop(planned.move.item, None)
        for move in plan.deferred:
            defer_counts[move.item] = defer_counts.get(move.item, 0) + 1
        for move in plan.forced:
            events.append((slot, "forced_transfer", str(move.item)))

        # 4. Metrics. Utilization counts the KV bytes that actually exist,
        # so a scheduler that holds memory in reserve gets no credit for it.
        active = active_gpu_count(cluster)
        max_gpus_seen = max(max_gpus_seen, active)
        used = sum(
            min(kv_size_at(req, slot, tokens_per_slot), capacity)
            for rid, req in running.items()
            if rid in cluster.sizes)
        metrics.append(slot, active, slot_migrations, len(plan.deferred),
                       len(plan.forced), used, active * capacity)
        alive_sizes.append(sorted(
            (cluster.item_size(it) for it in cluster.placement
             if it >= 0 or it in cluster.groups), reverse=True))
        slot += 1
        if slot > horizon + 10 ** 6:
            raise RuntimeError("simulation failed to drain")

    summary = {
        "schema_version": 1,
        "scheduler": config.scheduler.kind,
        "batching": config.scheduler.batching,
        "slots": len(metrics.slots),
        "peak_gpus": metrics.peak_gpus,
        "total_migrations": metrics.total_migrations,
        "total_deferred": sum(metrics.deferred),
        "total_forced": sum(metrics.forced),
        "mean_active_gpus": (sum(metrics.active_gpus)
                             / len(metrics.active_gpus)
                             if metrics.active_gpus else 0.0),
        "mean_utilization": metrics.mean_utilization,
        "requests": len(requests),
        "completed": completed,
        "rejected": rejected,
        "aborted": aborted,
        "config": config.to_dict(),
    }
    return RunResult(metrics=metrics, events=events, summary=summary,
                     cluster=cluster, alive_sizes=alive_sizes,
                     epoch_migration_counts=list(
                         getattr(scheduler, "epoch_migration_counts", [])))


def opt_series(result: RunResult, capacity: int) -> List[OptResult]:
    """Per-slot offline optimum for the run's resident-size snapshots."""
    return [opt_lower_bound(sizes, capacity) for sizes in result.alive_sizes]


def compare(config: RunConfig, trace: Trace,
            schedulers: Optional[List[str]] = None) -> Dict[str, RunResult]:
    """Run several schedulers over the same trace (mell is the baseline
    for the reduction/gain deltas in the comparison table)."""
    from dataclasses import replace
    schedulers = schedulers or ["mell", "bf", "wf", "lb"]
    results: Dict[str, RunResult] = {}
    for kind in schedulers:
        cfg = replace(config,
                      scheduler=replace(config.scheduler, kind=kind))
        results[kind] = run(cfg, trace)
    return results


def comparison_table(results: Dict[str, RunResult]) -> List[Dict[str, object]]:
    """Per-scheduler totals plus deltas relative to the first entry."""
    rows = []
    base = next(iter(results.values()), None)
    for kind, res in results.items():
        peak = res.metrics.peak_gpus
        util = res.metrics.mean_utilization
        base_peak = base.metrics.peak_gpus if base else 0
        rows.append({
            "scheduler": kind,
            "peak_gpus": peak,
            "total_migrations": res.metrics.total_migrations,
            "mean_utilization": round(util, 6),
            "gpu_reduction_pct": round(
                100.0 * (peak - base_peak) / peak, 3) if peak else 0.0,
            "utilization_gain_pct": round(
                100.0 * (base.metrics.mean_utilization - util), 3)
            if base else 0.0,
        })
    return rows


def metrics_to_csv(metrics: MetricsSeries) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for i in range(len(metrics.slots)):
        writer.writerow([metrics.slots[i], metrics.active_gpus[i],
                         metrics.migrations[i], metrics.deferred[i],
                         metrics.forced[i], metrics.used_bytes[i],
                         metrics.capacity_bytes[i]])
    return buf.getvalue()


def write_metrics_csv(metrics: MetricsSeries, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(metrics_to_csv(metrics))


def write_summary_json(summary: Dict[str, object], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
