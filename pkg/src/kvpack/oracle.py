"""Offline optima and analytical audits.

``exact_bin_pack`` gives the true minimum GPU count for a set of resident
KV sizes; ``opt_lower_bound`` degrades gracefully to a volume bound for
large instances; ``competitive_check`` compares an online run against the
per-slot optimum; ``weight_audit`` cross-checks the fractional-weight
accounting that underpins the GPU-count guarantee.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence

from .model import (WEIGHT_L_SINGLE, ClusterState, SizeClass,
                    active_gpu_count, request_weight, total_weight)

EXACT_LIMIT = 20  # branch-and-bound instance-size cutoff


def _ffd(sizes: Sequence[int], capacity: int) -> int:
    """First-fit-decreasing heuristic; upper bound on the optimum."""
    bins: List[int] = []
    for size in sorted(sizes, reverse=True):
        for i, used in enumerate(bins):
            if used + size <= capacity:
                bins[i] = used + size
                break
        else:
            bins.append(size)
    return len(bins)


def exact_bin_pack(sizes: Sequence[int], capacity: int) -> int:
    """Minimum number of capacity-``capacity`` bins holding all sizes.

    Branch and bound over item-to-bin assignments with first-fit-decreasing
    as the incumbent and the volume bound for pruning. Intended for
    instances of at most ``EXACT_LIMIT`` items.
    """
    items = sorted((s for s in sizes if s > 0), reverse=True)
    if any(s > capacity for s in items):
        raise ValueError("item larger than capacity")
    if not items:
        return 0
    if len(items) > EXACT_LIMIT:
        raise ValueError(f"instance too large for exact search "
                         f"(> {EXACT_LIMIT} items)")
    best = _ffd(items, capacity)
    volume_bound = math.ceil(sum(items) / capacity)
    if best == volume_bound:
        return best
    bins: List[int] = []

    def search(index: int) -> None:
        nonlocal best
        if len(bins) >= best:
            return
        remaining = sum(items[index:])
        if len(bins) + max(
                0, math.ceil((remaining - sum(capacity - b for b in bins))
                             / capacity)) >= best:
            return
        if index == len(items):
            best = len(bins)
            return
        size = items[index]
        seen = set()
        for i, used in enumerate(bins):
            if used + size <= capacity and used not in seen:
                seen.add(used)
                bins[i] = used + size
                search(index + 1)
                bins[i] = used
                if best == volume_bound:
                    return
        if len(bins) + 1 < best:
            bins.append(size)
            search(index + 1)
            bins.pop()

    search(0)
    return best


def _partitions(items: List[int]):
    """All set partitions of ``items`` (by index), for cross-checking."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for partition in _partitions(rest):
        for i in range(len(partition)):
            yield partition[:i] + [partition[i] + [first]] + partition[i + 1:]
        yield partition + [[first]]


def brute_force_bin_pack(sizes: Sequence[int], capacity: int) -> int:
    """Minimum bins by exhaustive set-partition enumeration (n <= 10)."""
    items = [s for s in sizes if s > 0]
    if any(s > capacity for s in items):
        raise ValueError("item larger than capacity")
    if not items:
        return 0
    if len(items) > 10:
        raise ValueError("brute force limited to 10 items")
    best = len(items)
    for partition in _partitions(items):
        if len(partition) >= best:
            continue
        if all(sum(block) <= capacity for block in partition):
            best = len(partition)
    return best


@dataclass(frozen=True)
class OptResult:
    bins: int
    exact: bool


def opt_lower_bound(sizes: Sequence[int], capacity: int) -> OptResult:
    """Optimal GPU count if the instance is small, else the volume bound."""
    items = [s for s in sizes if s > 0]
    if len(items) <= EXACT_LIMIT:
        return OptResult(bins=exact_bin_pack(items, capacity), exact=True)
    return OptResult(bins=math.ceil(sum(items) / capacity), exact=False)


@dataclass(frozen=True)
class CompetitiveReport:
    ok: bool
    worst_slot: Optional[int]
    worst_excess: int
    slots_checked: int


def competitive_check(active_gpus: Sequence[int], opt: Sequence[int],
                      slack: int = 4) -> CompetitiveReport:
    """Verify active GPUs <= ceil(4/3 * opt) + slack at every slot."""
    if len(active_gpus) != len(opt):
        raise ValueError("series length mismatch")
    worst_slot = None
    worst_excess = -(10 ** 9)
    ok = True
    for slot, (used, best) in enumerate(zip(active_gpus, opt)):
        allowed = math.ceil(Fraction(4, 3) * best) + slack
        excess = used - allowed
        if excess > worst_excess:
            worst_excess = excess
            worst_slot = slot
        if excess > 0:
            ok = False
    if worst_slot is None:
        worst_excess = 0
    return CompetitiveReport(ok=ok, worst_slot=worst_slot,
                             worst_excess=max(worst_excess, 0)
                             if worst_slot is not None else 0,
                             slots_checked=len(active_gpus))


def weight_audit(cluster: ClusterState) -> Dict[str, object]:
    """Cross-check the fractional-weight accounting on a live cluster.

    Every request carries a rational weight (L alone 1, L sharing with an
    M/S item 5/6, M 1/2, S 1/3, T and smaller 0). The audit reports the
    total weight, counts single vs combined L-requests, verifies that no
    GPU carries more than 4/3 total weight, and checks that the active
    GPU count stays within total weight plus one under-filled GPU per
    size category.
    """
    weight = total_weight(cluster)
    active = active_gpu_count(cluster)
    exempt = cluster.exempt_gpus()
    single_l = 0
    combined_l = 0
    per_gpu_ok = True
    worst_gpu_weight = Fraction(0)
    for gpu_id, gpu in cluster.gpus.items():
        gpu_weight = Fraction(0)
        for item in gpu.residents:
            if item < 0:
                continue
            w = request_weight(item, cluster)
            gpu_weight += w
            if cluster.item_class(item) is SizeClass.L:
                if w == WEIGHT_L_SINGLE:
                    single_l += 1
                else:
                    combined_l += 1
        worst_gpu_weight = max(worst_gpu_weight, gpu_weight)
        if gpu_weight > Fraction(4, 3):
            per_gpu_ok = False
    bound_ok = active <= weight + len(exempt)
    return {
        "total_weight": weight,
        "active_gpus": active,
        "exempt_gpus": len(exempt),
        "single_l_requests": single_l,
        "combined_l_requests": combined_l,
        "max_gpu_weight": worst_gpu_weight,
        "per_gpu_weight_ok": per_gpu_ok,
        "count_bound_ok": bound_ok,
        "ok": per_gpu_ok and bound_ok,
    }
