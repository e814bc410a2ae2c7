"""Comparison schedulers: best-fit, worst-fit and load-balancing.

All three dispatch arrivals greedily by free memory. BF and WF never
migrate running requests; when growth overloads a GPU they preempt and
re-dispatch (recorded as events, not migrations). LB additionally runs a
periodic max/min-load swap loop whose moves are real KV migrations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import RequestTooLarge
from .model import ClusterState
from .scheduler import EpochResult, Move, OperationLog


@dataclass(frozen=True)
class LbConfig:
    """Parameters of the load-balancing swap loop."""

    rebalance_period: int = 1
    imbalance_threshold: float = 0.25

    def __post_init__(self):
        if self.rebalance_period < 1:
            raise ValueError("rebalance_period must be >= 1")
        if not 0.0 < self.imbalance_threshold < 1.0:
            raise ValueError("imbalance_threshold must be in (0, 1)")


def _pick_fit(cluster: ClusterState, size: int, best: bool) -> Optional[int]:
    """GPU id with min (best) or max (worst) free memory >= size."""
    chosen = None
    chosen_free = None
    for g in sorted(cluster.gpus):
        free = cluster.free_bytes(g)
        if free < size:
            continue
        better = (chosen_free is None
                  or (free < chosen_free if best else free > chosen_free))
        if better:
            chosen, chosen_free = g, free
    return chosen


def bf_allocate(cluster: ClusterState, request_id: int,
                size: int) -> OperationLog:
    """Place on the GPU with the least sufficient free memory."""
    return _greedy_allocate(cluster, request_id, size, best=True)


def wf_allocate(cluster: ClusterState, request_id: int,
                size: int) -> OperationLog:
    """Place on the GPU with the most free memory."""
    return _greedy_allocate(cluster, request_id, size, best=False)


def _greedy_allocate(cluster: ClusterState, request_id: int, size: int,
                     best: bool) -> OperationLog:
    if size > cluster.capacity_bytes:
        raise RequestTooLarge(
            f"request {request_id} needs {size} > capacity "
            f"{cluster.capacity_bytes}")
    if size <= 0:
        raise ValueError("size must be positive")
    log = OperationLog("allocate", request_id)
    cluster.sizes[request_id] = size
    g = _pick_fit(cluster, size, best)
    if g is None:
        g = cluster.activate_gpu().id
    cluster.place(request_id, g)
    log.moves.append(Move(request_id, None, g, "allocate"))
    return log


def lb_rebalance(cluster: ClusterState, cfg: LbConfig) -> OperationLog:
    """Swap load from the most- to the least-loaded GPU until balanced."""
    log = OperationLog("update", None)
    capacity = cluster.capacity_bytes
    limit = cfg.imbalance_threshold * capacity
    for _ in range(10_000):
        active = [g for g, st in cluster.gpus.items() if st.residents]
        if len(active) < 2:
            break
        hi = max(active, key=lambda g: (cluster.used_bytes(g), -g))
        lo = min(active, key=lambda g: (cluster.used_bytes(g), g))
        gap = cluster.used_bytes(hi) - cluster.used_bytes(lo)
        if gap <= limit:
            break
        free_lo = cluster.free_bytes(lo)
        movable = [r for r in cluster.gpus[hi].residents
                   if cluster.sizes[r] < gap and cluster.sizes[r] <= free_lo]
        if not movable:
            break
        pick = max(movable, key=lambda r: (cluster.sizes[r], -r))
        cluster.unplace(pick)
        cluster.place(pick, lo)
        log.moves.append(Move(pick, hi, lo, "update"))
    return log


class GreedyScheduler:
    """BF/WF front end with vLLM-style preempt-and-redispatch on overload."""

    def __init__(self, cluster: ClusterState, best_fit: bool):
        self.cluster = cluster
        self.best_fit = best_fit

    def _dispatch(self, request_id: int, size: int,
                  logs: List[OperationLog]) -> None:
        try:
            logs.append(_greedy_allocate(self.cluster, request_id, size,
                                         self.best_fit))
        except RequestTooLarge:
            log = OperationLog("allocate", request_id)
            log.events.append(("rejected", str(request_id)))
            logs.append(log)

    def _handle_overloads(self, grown: Sequence[int],
                          logs: List[OperationLog]) -> None:
        c = self.cluster
        for r in sorted(grown):
            if r not in c.placement:
                continue
            if c.sizes[r] > c.capacity_bytes:
                log = OperationLog("update", r)
                c.unplace(r)
                del c.sizes[r]
                log.events.append(("aborted", str(r)))
                logs.append(log)
                continue
            j = c.gpu_of(r)
            if c.used_bytes(j) <= c.capacity_bytes:
                continue
            log = OperationLog("update", r)
            # Preempt newest co-residents and re-dispatch them fresh; the
            # KV cache is recomputed, so this is not a migration.
            victims = sorted((x for x in c.gpus[j].residents if x != r),
                             reverse=True)
            for v in victims:
                if c.used_bytes(j) <= c.capacity_bytes:
                    break
                c.unplace(v)
                log.events.append(("preempted", str(v)))
                size = c.sizes[v]
                g = _pick_fit(c, size, self.best_fit)
                if g is None:
                    g = c.activate_gpu().id
                c.place(v, g)
                log.moves.append(Move(v, None, g, "allocate"))
            if c.used_bytes(j) > c.capacity_bytes:
                c.unplace(r)
                del c.sizes[r]
                log.events.append(("aborted", str(r)))
            logs.append(log)

    def step_epoch(self, arrivals: Sequence[Tuple[int, int]],
                   completions: Sequence[int],
                   growths: Optional[Dict[int, int]] = None) -> EpochResult:
        c = self.cluster
        growths = growths or {}
        logs: List[OperationLog] = []
        for r, size in sorted(growths.items()):
            if r in c.sizes:
                c.set_size(r, max(c.sizes[r], size))
        for r in sorted(completions):
            log = OperationLog("depart", r)
            if r in c.placement:
                c.unplace(r)
                del c.sizes[r]
            logs.append(log)
        self._handle_overloads(sorted(growths), logs)
        for r, size in sorted(arrivals):
            self._dispatch(r, size, logs)
        terminated = c.terminate_idle_gpus()
        return EpochResult(logs=logs, terminated=terminated)


class LoadBalancingScheduler:
    """Worst-fit dispatch plus the periodic swap loop of lb_rebalance."""

    def __init__(self, cluster: ClusterState, cfg: Optional[LbConfig] = None):
        self.cluster = cluster
        self.cfg = cfg or LbConfig()
        self._epoch = 0

    def _handle_overloads(self, grown: Sequence[int],
                          logs: List[OperationLog]) -> None:
        c = self.cluster
        for r in sorted(grown):
            if r not in c.placement:
                continue
            if c.sizes[r] > c.capacity_bytes:
                log = OperationLog("update", r)
                c.unplace(r)
                del c.sizes[r]
                log.events.append(("aborted", str(r)))
                logs.append(log)
                continue
            j = c.gpu_of(r)
            if c.used_bytes(j) <= c.capacity_bytes:
                continue
            log = OperationLog("update", r)
            # Migrate co-residents off the overloaded GPU, largest first.
            victims = sorted((x for x in c.gpus[j].residents if x != r),
                             key=lambda x: (-c.sizes[x], x))
            for v in victims:
                if c.used_bytes(j) <= c.capacity_bytes:
                    break
                c.unplace(v)
                g = _pick_fit(c, c.sizes[v], best=False)
                if g is None or g == j:
                    g = c.activate_gpu().id
                c.place(v, g)
                log.moves.append(Move(v, j, g, "update"))
            if c.used_bytes(j) > c.capacity_bytes:
                c.unplace(r)
                del c.sizes[r]
                log.events.append(("aborted", str(r)))
            logs.append(log)

    def step_epoch(self, arrivals: Sequence[Tuple[int, int]],
                   completions: Sequence[int],
                   growths: Optional[Dict[int, int]] = None) -> EpochResult:
        c = self.cluster
        growths = growths or {}
        logs: List[OperationLog] = []
        for r, size in sorted(growths.items()):
            if r in c.sizes:
                c.set_size(r, max(c.sizes[r], size))
        for r in sorted(completions):
            log = OperationLog("depart", r)
            if r in c.placement:
                c.unplace(r)
                del c.sizes[r]
            logs.append(log)
        self._handle_overloads(sorted(growths), logs)
        for r, size in sorted(arrivals):
            try:
                logs.append(wf_allocate(c, r, size))
            except RequestTooLarge:
                log = OperationLog("allocate", r)
                log.events.append(("rejected", str(r)))
                logs.append(log)
        self._epoch += 1
        if self._epoch % self.cfg.rebalance_period == 0:
            logs.append(lb_rebalance(c, self.cfg))
        terminated = c.terminate_idle_gpus()
        return EpochResult(logs=logs, terminated=terminated)
