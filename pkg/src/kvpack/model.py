"""Domain model: requests, GPUs, cluster state, size classes and weights.

Capacities and KV sizes are integer bytes throughout; class boundaries are
compared with cross-multiplied integers so that sizes exactly at C/2, C/3,
C/4 or C/8 land in the lower-named class. Weights are exact rationals.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Optional, Set

from .errors import NoCategory, NotPlaced, RequestTooLarge

# Item ids: requests are non-negative ints, multi-item groups negative ints.
ItemId = int

_STATE_ORDER = {"pending": 0, "running": 1, "completed": 2}


class SizeClass(Enum):
    L = "L"
    M = "M"
    S = "S"
    T = "T"
    TINY = "Tiny"


@dataclass
class Request:
    """One LLM request with its arrival slot and token counts."""

    id: int
    arrival_slot: int
    prompt_tokens: int
    response_tokens: int
    kv_bytes_per_token: int
    state: str = "pending"

    def __post_init__(self):
        if self.prompt_tokens < 1:
            raise ValueError("prompt_tokens must be >= 1")
        if self.response_tokens < 1:
            raise ValueError("response_tokens must be >= 1")
        if self.kv_bytes_per_token <= 0:
            raise ValueError("kv_bytes_per_token must be > 0")
        if self.state not in _STATE_ORDER:
            raise ValueError(f"unknown state {self.state!r}")

    def advance_state(self, new_state: str) -> None:
        if _STATE_ORDER.get(new_state, -1) < _STATE_ORDER[self.state]:
            raise ValueError(f"illegal transition {self.state} -> {new_state}")
        self.state = new_state


def kv_size_at(request: Request, slot: int, tokens_per_slot: int) -> int:
    """KV footprint in bytes at a slot boundary.

    Grows linearly with generated tokens and saturates at completion.
    """
    if slot < request.arrival_slot:
        raise ValueError("slot precedes request arrival")
    generated = min(
        request.response_tokens,
        tokens_per_slot * (slot - request.arrival_slot),
    )
    return (request.prompt_tokens + generated) * request.kv_bytes_per_token


def classify_request(size: int, capacity: int) -> SizeClass:
    """Map a KV size to its class; upper boundaries are inclusive."""
    if size <= 0:
        raise ValueError("size must be positive")
    if size > capacity:
        raise RequestTooLarge(f"size {size} exceeds capacity {capacity}")
    if 2 * size > capacity:
        return SizeClass.L
    if 3 * size > capacity:
        return SizeClass.M
    if 4 * size > capacity:
        return SizeClass.S
    if 8 * size > capacity:
        return SizeClass.T
    return SizeClass.TINY


@dataclass
class GpuState:
    """One GPU: capacity, machine, activation bookkeeping and residents."""

    id: int
    capacity_bytes: int
    machine_id: int
    activation_seq: int
    residents: Set[ItemId] = field(default_factory=set)


@dataclass
class MultiItemGroup:
    """Several sub-C/8 requests scheduled as one aggregate item."""

    group_id: ItemId
    members: Set[int] = field(default_factory=set)
    aggregate_bytes: int = 0


# Weight of each request class in the analysis bookkeeping.
WEIGHT_L_SINGLE = Fraction(1)
WEIGHT_L_COMBINED = Fraction(5, 6)
WEIGHT_M = Fraction(1, 2)
WEIGHT_S = Fraction(1, 3)


class ClusterState:
    """Placement of schedulable items (requests and groups) on GPUs.

    Single-writer: exactly one scheduler mutates an instance at a time.
    """

    def __init__(self, capacity_bytes: int, gpus_per_machine: int = 4):
        if capacity_bytes <= 0:
            raise ValueError("capacity_bytes must be > 0")
        if gpus_per_machine < 1:
            raise ValueError("gpus_per_machine must be >= 1")
        self.capacity_bytes = capacity_bytes
        self.gpus_per_machine = gpus_per_machine
        self.gpus: Dict[int, GpuState] = {}
        self.placement: Dict[ItemId, int] = {}
        self.sizes: Dict[int, int] = {}
        self.groups: Dict[ItemId, MultiItemGroup] = {}
        self.request_group: Dict[int, ItemId] = {}
        self.next_activation_seq = 0
        self._next_group_id = -1
        self._free_gpu_ids: List[int] = []
        self._next_gpu_id = 0
        # Family of each nonempty GPU, invalidated on any mutation.
        self._family_cache: Dict[int, SizeClass] = {}

    # -- sizes and classes ------------------------------------------------

    def item_size(self, item: ItemId) -> int:
        if item < 0:
            return self.groups[item].aggregate_bytes
        return self.sizes[item]

    def set_size(self, request_id: int, size: int) -> None:
        """Record a request's new KV size, keeping group aggregates in sync."""
        old = self.sizes[request_id]
        self.sizes[request_id] = size
        gid = self.request_group.get(request_id)
        if gid is not None:
            self.groups[gid].aggregate_bytes += size - old
        host = self.placement.get(gid if gid is not None else request_id)
        if host is not None:
            self._family_cache.pop(host, None)

    def group_add(self, gid: ItemId, request_id: int) -> None:
        group = self.groups[gid]
        group.members.add(request_id)
        group.aggregate_bytes += self.sizes[request_id]
        self.request_group[request_id] = gid
        host = self.placement.get(gid)
        if host is not None:
            self._family_cache.pop(host, None)

    def group_remove(self, gid: ItemId, request_id: int) -> None:
        group = self.groups[gid]
        group.members.discard(request_id)
        group.aggregate_bytes -= self.sizes[request_id]
        self.request_group.pop(request_id, None)
        host = self.placement.get(gid)
        if host is not None:
            self._family_cache.pop(host, None)

    def item_class(self, item: ItemId) -> SizeClass:
        # Growth may momentarily push an item past C before the scheduler
        # aborts it; classify it as L in that window.
        size = min(self.item_size(item), self.capacity_bytes)
        return classify_request(size, self.capacity_bytes)

    def used_bytes(self, gpu_id: int) -> int:
        return sum(self.item_size(it) for it in self.gpus[gpu_id].residents)

    def free_bytes(self, gpu_id: int) -> int:
        return self.capacity_bytes - self.used_bytes(gpu_id)

    # -- GPU lifecycle ----------------------------------------------------

    def activate_gpu(self) -> GpuState:
        """Activate the lowest-id inactive GPU with a fresh activation seq."""
        if self._free_gpu_ids:
            gpu_id = heapq.heappop(self._free_gpu_ids)
        else:
            gpu_id = self._next_gpu_id
            self._next_gpu_id += 1
        gpu = GpuState(
            id=gpu_id,
            capacity_bytes=self.capacity_bytes,
            machine_id=gpu_id // self.gpus_per_machine,
            activation_seq=self.next_activation_seq,
        )
        self.next_activation_seq += 1
        self.gpus[gpu_id] = gpu
        return gpu

    def terminate_gpu(self, gpu_id: int) -> None:
        self._family_cache.pop(gpu_id, None)
        gpu = self.gpus.pop(gpu_id)
        if gpu.residents:
            raise ValueError(f"GPU {gpu_id} still has residents")
        heapq.heappush(self._free_gpu_ids, gpu_id)

    def terminate_idle_gpus(self) -> List[int]:
        idle = sorted(g for g, st in self.gpus.items() if not st.residents)
        for g in idle:
            self.terminate_gpu(g)
        return idle

    # -- placement --------------------------------------------------------

    def place(self, item: ItemId, gpu_id: int) -> None:
        if item in self.placement:
            raise ValueError(f"item {item} already placed")
        self.gpus[gpu_id].residents.add(item)
        self.placement[item] = gpu_id
        self._family_cache.pop(gpu_id, None)

    def unplace(self, item: ItemId) -> int:
        gpu_id = self.placement.pop(item, None)
        if gpu_id is None:
            raise NotPlaced(f"item {item} not placed")
        self.gpus[gpu_id].residents.discard(item)
        self._family_cache.pop(gpu_id, None)
        return gpu_id

    def gpu_of(self, item: ItemId) -> Optional[int]:
        return self.placement.get(item)

    def new_group(self) -> MultiItemGroup:
        gid = self._next_group_id
        self._next_group_id -= 1
        group = MultiItemGroup(group_id=gid)
        self.groups[gid] = group
        return group

    def item_of_request(self, request_id: int) -> ItemId:
        """Schedulable item carrying this request (itself or its group)."""
        return self.request_group.get(request_id, request_id)

    # -- categories -------------------------------------------------------

    def gpu_class(self, gpu_id: int) -> SizeClass:
        gpu = self.gpus[gpu_id]
        if not gpu.residents:
            raise NoCategory(f"GPU {gpu_id} is empty")
        largest = max(gpu.residents, key=lambda it: (self.item_size(it), it))
        return self.item_class(largest)

    def gpu_family(self, gpu_id: int) -> SizeClass:
        """GPU category for scheduling; an open Tiny group counts as T."""
        fam = self._family_cache.get(gpu_id)
        if fam is None:
            cls = self.gpu_class(gpu_id)
            fam = SizeClass.T if cls is SizeClass.TINY else cls
            self._family_cache[gpu_id] = fam
        return fam

    def gpus_of_family(self, family: SizeClass) -> List[int]:
        return sorted(
            g for g, st in self.gpus.items()
            if st.residents and self.gpu_family(g) is family
        )

    def latest_gpu_of_family(self, family: SizeClass) -> Optional[int]:
        candidates = self.gpus_of_family(family)
        if not candidates:
            return None
        return max(candidates, key=lambda g: self.gpus[g].activation_seq)

    def exempt_gpus(self) -> Set[int]:
        """The latest GPU of each category; the only under-filled ones."""
        exempt = set()
        for family in (SizeClass.L, SizeClass.M, SizeClass.S, SizeClass.T):
            latest = self.latest_gpu_of_family(family)
            if latest is not None:
                exempt.add(latest)
        return exempt

    # -- invariants and aggregates ---------------------------------------

    def check_capacity(self) -> None:
        for gpu_id, gpu in self.gpus.items():
            if gpu.residents and self.used_bytes(gpu_id) > self.capacity_bytes:
                raise AssertionError(
                    f"GPU {gpu_id} over capacity: "
                    f"{self.used_bytes(gpu_id)} > {self.capacity_bytes}"
                )

    def running_requests(self) -> List[int]:
        placed = [r for r in self.placement if r >= 0]
        grouped = list(self.request_group)
        return sorted(set(placed) | set(grouped))


def classify_gpu(gpu: GpuState, cluster: ClusterState) -> SizeClass:
    """Class of the GPU's largest resident item (groups at aggregate size)."""
    return cluster.gpu_class(gpu.id)


def request_weight(request_id: int, cluster: ClusterState) -> Fraction:
    """Analysis weight of a running request."""
    if request_id in cluster.request_group:
        return Fraction(0)
    gpu_id = cluster.gpu_of(request_id)
    if gpu_id is None:
        raise NotPlaced(f"request {request_id} not placed")
    cls = cluster.item_class(request_id)
    if cls is SizeClass.M:
        return WEIGHT_M
    if cls is SizeClass.S:
        return WEIGHT_S
    if cls in (SizeClass.T, SizeClass.TINY):
        return Fraction(0)
    # L-request: combined iff an M/S item shares the GPU.
    for other in cluster.gpus[gpu_id].residents:
        if other == request_id:
            continue
        if cluster.item_class(other) in (SizeClass.M, SizeClass.S):
            return WEIGHT_L_COMBINED
    return WEIGHT_L_SINGLE


def total_weight(cluster: ClusterState) -> Fraction:
    total = Fraction(0)
    for request_id in cluster.placement:
        if request_id >= 0:
            total += request_weight(request_id, cluster)
    return total


def active_gpu_count(cluster: ClusterState) -> int:
    return sum(1 for gpu in cluster.gpus.values() if gpu.residents)
