"""Online KV-cache scheduler: allocate/depart/update, grouping, batching.

The scheduler keeps every non-latest GPU of each size category in a
canonical shape (two M-requests per M-GPU, three S-requests per S-GPU,
75%-full T-GPUs, L-GPUs paired with a fitting M/S where possible) and
repairs that shape with a bounded number of migrations per operation.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

from .errors import NotPlaced, RequestTooLarge
from .model import ClusterState, ItemId, SizeClass, classify_request

SM_CLASSES = (SizeClass.M, SizeClass.S)
T_CLASSES = (SizeClass.T, SizeClass.TINY)

# Open slots per GPU category in the canonical shape.
_CLASS_SLOTS = {SizeClass.M: 2, SizeClass.S: 3}


@dataclass(frozen=True)
class Move:
    """One item relocation; src is None for a fresh placement."""

    item: ItemId
    src: Optional[int]
    dst: int
    reason: str


@dataclass
class OperationLog:
    """Moves and events produced by one scheduler invocation."""

    kind: str  # allocate | depart | update | epoch
    request_id: Optional[int]
    moves: List[Move] = field(default_factory=list)
    events: List[Tuple[str, ...]] = field(default_factory=list)

    @property
    def migration_count(self) -> int:
        return sum(1 for m in self.moves if m.src is not None)


@dataclass(frozen=True)
class PriorityConfig:
    """Provider-tunable weights for GPU priority scores."""

    weight_free_mem: float = 1.0
    weight_request_count: float = 0.25
    weight_same_machine: float = 0.5

    def __post_init__(self):
        if (self.weight_free_mem < 0 or self.weight_request_count < 0
                or self.weight_same_machine < 0):
            raise ValueError("priority weights must be non-negative")
        if not (self.weight_free_mem or self.weight_request_count
                or self.weight_same_machine):
            raise ValueError("at least one priority weight must be > 0")


DEFAULT_PRIORITY = PriorityConfig()


def allocation_priority(cluster: ClusterState, gpu_id: int,
                        cfg: PriorityConfig = DEFAULT_PRIORITY) -> float:
    """Workload-only score for receiving a fresh allocation."""
    gpu = cluster.gpus[gpu_id]
    free_frac = cluster.free_bytes(gpu_id) / cluster.capacity_bytes
    return (cfg.weight_free_mem * free_frac
            - cfg.weight_request_count * len(gpu.residents))


def migration_priority(cluster: ClusterState, src: int, dst: int,
                       cfg: PriorityConfig = DEFAULT_PRIORITY) -> float:
    """Score of dst as a migration peer of src; higher is preferred."""
    if src == dst:
        raise ValueError("src and dst must differ")
    same = cluster.gpus[src].machine_id == cluster.gpus[dst].machine_id
    return (allocation_priority(cluster, dst, cfg)
            + cfg.weight_same_machine * (1.0 if same else 0.0))


# ---------------------------------------------------------------------------
# Canonical-shape verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    gpu_id: Optional[int]
    code: str
    detail: str


def _conforms_threequarter(cluster: ClusterState, gpu_id: int) -> bool:
    return 4 * cluster.used_bytes(gpu_id) >= 3 * cluster.capacity_bytes


def verify_properties(cluster: ClusterState,
                      exempt: Optional[Set[int]] = None) -> List[Violation]:
    """Check the canonical-shape properties outside the exempt GPUs.

    ``exempt`` defaults to the latest GPU of each category; passing it
    explicitly keeps tests from silently widening the exemption set.
    """
    out: List[Violation] = []
    capacity = cluster.capacity_bytes
    # One pass to size and classify everything.
    info = {}  # gpu -> (family, used, kinds, largest_size, sm_sizes)
    for g, st in cluster.gpus.items():
        if not st.residents:
            continue
        used = 0
        largest = 0
        kinds: List[SizeClass] = []
        sm_sizes: List[int] = []
        for it in st.residents:
            size = cluster.item_size(it)
            if 2 * size > capacity:
                cls = SizeClass.L
            elif 3 * size > capacity:
                cls = SizeClass.M
            elif 4 * size > capacity:
                cls = SizeClass.S
            elif 8 * size > capacity:
                cls = SizeClass.T
            else:
                cls = SizeClass.TINY
            used += size
            if size > largest:
                largest = size
            kinds.append(cls)
            if cls is SizeClass.M or cls is SizeClass.S:
                sm_sizes.append(size)
        fam = classify_request(min(largest, capacity), capacity)
        if fam is SizeClass.TINY:
            fam = SizeClass.T
        info[g] = (fam, used, kinds, largest, sm_sizes)
    if exempt is None:
        latest: Dict[SizeClass, Tuple[int, int]] = {}
        for g, (fam, _, _, _, _) in info.items():
            seq = cluster.gpus[g].activation_seq
            if fam not in latest or seq > latest[fam][0]:
                latest[fam] = (seq, g)
        exempt = {g for _, g in latest.values()}
    all_sm_sizes = sorted(
        s for g, (_, _, _, _, sms) in info.items()
        if info[g][0] in SM_CLASSES for s in sms
    )
    t_gpu_present = any(
        fam is SizeClass.T and g not in exempt
        for g, (fam, _, _, _, _) in info.items()
    )
    threshold = 3 * capacity  # compare 4*used >= 3*C

    for g in sorted(info):
        fam, used, kinds, largest, _ = info[g]
        if used > capacity:
            out.append(Violation(g, "capacity", "residents exceed capacity"))
        if g in exempt:
            continue
        if fam is SizeClass.M:
            n_m = sum(1 for c in kinds if c is SizeClass.M)
            n_t = sum(1 for c in kinds if c in T_CLASSES)
            if n_m != 2 or n_t > 1 or n_m + n_t != len(kinds):
                out.append(Violation(g, "P1", f"M-GPU holds {kinds}"))
        elif fam is SizeClass.S:
            n_s = sum(1 for c in kinds if c is SizeClass.S)
            if n_s != 3 or n_s != len(kinds):
                out.append(Violation(g, "P2", f"S-GPU holds {kinds}"))
        elif fam is SizeClass.T:
            if 4 * used < threshold:
                out.append(Violation(g, "P3", "T-GPU below 75% utilization"))
        elif fam is SizeClass.L:
            n_sm = sum(1 for c in kinds if c in SM_CLASSES)
            if n_sm == 0:
                free = capacity - used
                limit = min(free, capacity - largest - 1)
                if all_sm_sizes and all_sm_sizes[0] <= limit:
                    out.append(Violation(
                        g, "P4", "L-GPU lacks S/M though one fits"))
            elif n_sm > 1:
                out.append(Violation(g, "P4", "L-GPU holds multiple S/M"))
        if t_gpu_present and fam in (SizeClass.L, SizeClass.M):
            if 4 * used < threshold:
                out.append(Violation(
                    g, "P5", "L/M-GPU below 75% while T-GPUs exist"))
    return out


# ---------------------------------------------------------------------------
# Scheduler
# ---------------------------------------------------------------------------

@dataclass
class EpochResult:
    logs: List[OperationLog]
    terminated: List[int]
    batched: bool = False

    @property
    def moves(self) -> List[Move]:
        return [m for log in self.logs for m in log.moves]

    @property
    def migration_count(self) -> int:
        return sum(log.migration_count for log in self.logs)

    @property
    def events(self) -> List[Tuple[str, ...]]:
        return [e for log in self.logs for e in log.events]


class MellScheduler:
    """Category-aware online scheduler over one ClusterState."""

    def __init__(self, cluster: ClusterState,
                 priority_cfg: PriorityConfig = DEFAULT_PRIORITY,
                 batching: bool = False):
        self.cluster = cluster
        self.priority_cfg = priority_cfg
        self.batching = batching
        # Class of each item at its last scheduling decision.
        self.scheduled_class: Dict[ItemId, SizeClass] = {}
        # Per-epoch (sequential, adopted) migration counts when batching.
        self.epoch_migration_counts: List[Tuple[int, int]] = []

    # -- small helpers ----------------------------------------------------

    @property
    def capacity(self) -> int:
        return self.cluster.capacity_bytes

    def _best_by_priority(self, gpu_ids: Iterable[int]) -> Optional[int]:
        best = None
        best_key = None
        for g in gpu_ids:
            key = (allocation_priority(self.cluster, g, self.priority_cfg), -g)
            if best_key is None or key > best_key:
                best, best_key = g, key
        return best

    def _best_migration_peer(self, src: int,
                             gpu_ids: Iterable[int]) -> Optional[int]:
        best = None
        best_key = None
        for g in gpu_ids:
            key = (migration_priority(self.cluster, src, g, self.priority_cfg), -g)
            if best_key is None or key > best_key:
                best, best_key = g, key
        return best

    def _fresh_gpu(self) -> int:
        """An empty active GPU re-sequenced as newly activated, else a new one."""
        c = self.cluster
        empties = sorted(g for g, st in c.gpus.items() if not st.residents)
        if empties:
            g = empties[0]
            c.gpus[g].activation_seq = c.next_activation_seq
            c.next_activation_seq += 1
            return g
        return c.activate_gpu().id

    def _record_place(self, item: ItemId, gpu_id: int, log: OperationLog,
                      reason: str, src: Optional[int]) -> None:
        self.cluster.place(item, gpu_id)
        self.scheduled_class[item] = self.cluster.item_class(item)
        if src != gpu_id:
            log.moves.append(Move(item, src, gpu_id, reason))

    def _move(self, item: ItemId, dst: int, log: OperationLog,
              reason: str) -> None:
        src = self.cluster.unplace(item)
        self._record_place(item, dst, log, reason, src)

    def _items_of_class(self, gpu_id: int,
                        kinds: Tuple[SizeClass, ...]) -> List[ItemId]:
        c = self.cluster
        items = [it for it in c.gpus[gpu_id].residents
                 if c.item_class(it) in kinds]
        return sorted(items, key=lambda it: (-c.item_size(it), it))

    def _class_count(self, gpu_id: int, kinds: Tuple[SizeClass, ...]) -> int:
        return len(self._items_of_class(gpu_id, kinds))

    def _t_family_gpus(self) -> List[int]:
        return self.cluster.gpus_of_family(SizeClass.T)

    def _latest_map(self) -> Dict[SizeClass, Optional[int]]:
        c = self.cluster
        return {fam: c.latest_gpu_of_family(fam)
                for fam in (SizeClass.L, SizeClass.M, SizeClass.S, SizeClass.T)}

    def _repair_demoted(self, before: Dict[SizeClass, Optional[int]],
                        log: OperationLog) -> None:
        """Repair GPUs that lost their latest-of-category exemption.

        An operation that activates a fresh GPU (or promotes one into a
        new family) steals latest status from the previous holder, whose
        under-filled shape was legal only while exempt.
        """
        c = self.cluster
        for _ in range(3):
            after = self._latest_map()
            stale = sorted({
                old for fam, old in before.items()
                if old is not None and after.get(fam) != old
                and old in c.gpus and c.gpus[old].residents
            })
            if not stale:
                break
            for g in stale:
                self._repair_gpu(g, log)
            before = after
        self._ensure_l_coverage(log)

    def _ensure_l_coverage(self, log: OperationLog,
                           rounds: int = 3) -> None:
        """Final sweep: L-GPUs may lack an S/M item only if none fits.

        A multi-move operation can create a fitting donor after an L-GPU
        was already repaired, so single repairs are not a fixpoint. Runs
        only after such operations; cheap ops cannot regress coverage.
        """
        if len(log.moves) < 2 and not log.events:
            return
        c = self.cluster
        for _ in range(rounds):
            smallest = None
            for fam in SM_CLASSES:
                for g in c.gpus_of_family(fam):
                    for it in self._items_of_class(g, SM_CLASSES):
                        size = c.item_size(it)
                        if smallest is None or size < smallest:
                            smallest = size
            if smallest is None:
                return
            exempt_l = c.latest_gpu_of_family(SizeClass.L)
            pulled = False
            for g in c.gpus_of_family(SizeClass.L):
                if g == exempt_l or self._class_count(g, SM_CLASSES):
                    continue
                l_items = self._items_of_class(g, (SizeClass.L,))
                limit = min(c.free_bytes(g),
                            self.capacity - c.item_size(l_items[0]) - 1)
                if smallest <= limit and self._pull_sm_to_l(g, log):
                    pulled = True
            if not pulled:
                return

    def _latest_other(self, family: SizeClass,
                      exclude: FrozenSet[int] = frozenset()) -> Optional[int]:
        c = self.cluster
        cands = [g for g in c.gpus_of_family(family)
                 if g not in exclude]
        if not cands:
            return None
        return max(cands, key=lambda g: c.gpus[g].activation_seq)

    # -- placement (Allocate paths) ---------------------------------------

    def _place_item(self, item: ItemId, log: OperationLog, *,
                    src: Optional[int] = None,
                    exclude: FrozenSet[int] = frozenset(),
                    allow_evict: bool = True,
                    prefer_holes: bool = False,
                    reason: str = "allocate") -> None:
        cls = self.cluster.item_class(item)
        if cls is SizeClass.L:
            self._place_large(item, log, src=src, reason=reason)
        elif cls in SM_CLASSES:
            self._place_medium_small(item, cls, log, src=src, exclude=exclude,
                                     allow_evict=allow_evict,
                                     prefer_holes=prefer_holes, reason=reason)
        else:
            self._place_tiny_item(item, log, src=src, exclude=exclude,
                                  prefer_holes=prefer_holes, reason=reason)

    def _place_large(self, item: ItemId, log: OperationLog, *,
                     src: Optional[int], reason: str) -> None:
        c = self.cluster
        j = self._fresh_gpu()
        self._record_place(item, j, log, reason, src)
        if not self._pull_sm_to_l(j, log):
            self._fill_with_t(j, log)

    def _pull_sm_to_l(self, j: int, log: OperationLog) -> bool:
        """Pull one fitting M/S-item from an S/M-GPU onto L-GPU ``j``."""
        c = self.cluster
        l_items = self._items_of_class(j, (SizeClass.L,))
        if not l_items:
            return False
        l_size = c.item_size(l_items[0])
        free = c.free_bytes(j)
        donors = []
        for fam in SM_CLASSES:
            for d in c.gpus_of_family(fam):
                if d == j:
                    continue
                if any(l_size + c.item_size(it) < self.capacity
                       and c.item_size(it) <= free
                       for it in self._items_of_class(d, SM_CLASSES)):
                    donors.append(d)
        donor = self._best_migration_peer(j, donors)
        if donor is None:
            return False
        pick = next(it for it in self._items_of_class(donor, SM_CLASSES)
                    if l_size + c.item_size(it) < self.capacity
                    and c.item_size(it) <= free)
        self._move(pick, j, log, "l-fill")
        if (c.gpus[donor].residents
                and not self._class_count(donor, SM_CLASSES)):
            # The donor kept only T/Tiny items and would turn into a
            # spurious T-GPU; re-home those leftovers instead.
            for t_item in self._items_of_class(donor, T_CLASSES):
                c.unplace(t_item)
                self._place_tiny_item(t_item, log, src=donor,
                                      exclude=frozenset({donor}),
                                      prefer_holes=False, reason="l-fill")
        else:
            self._repair_gpu(donor, log)
        return True

    def _fill_with_t(self, j: int, log: OperationLog) -> None:
        """Pull T-items from the latest T-GPU until ``j`` reaches 75% use.

        Only fires while T-GPUs exist; keeps the P5 premise satisfiable.
        """
        c = self.cluster
        for _ in range(8):
            if _conforms_threequarter(c, j):
                return
            # Only the globally latest T-GPU is exempt and may be drained;
            # if that is j itself, j is the exemption and needs no fill.
            donor = c.latest_gpu_of_family(SizeClass.T)
            if donor is None or donor == j:
                return
            free = c.free_bytes(j)
            fitting = [it for it in self._items_of_class(donor, T_CLASSES)
                       if c.item_size(it) <= free]
            if not fitting:
                return
            self._move(fitting[0], j, log, "depart-refill")

    def _fill_m_with_t(self, j: int, log: OperationLog) -> None:
        """Give an under-75% M-GPU one T-item while T-GPUs exist."""
        c = self.cluster
        if j not in c.gpus or not c.gpus[j].residents:
            return
        if _conforms_threequarter(c, j):
            return
        if self._class_count(j, T_CLASSES):
            return
        donor = self._latest_other(SizeClass.T, frozenset({j}))
        if donor is None:
            return
        free = c.free_bytes(j)
        fitting = [it for it in self._items_of_class(donor, T_CLASSES)
                   if c.item_size(it) <= free]
        if fitting:
            self._move(fitting[0], j, log, "depart-refill")

    def _place_medium_small(self, item: ItemId, cls: SizeClass,
                            log: OperationLog, *, src: Optional[int],
                            exclude: FrozenSet[int], allow_evict: bool,
                            prefer_holes: bool, reason: str) -> None:
        c = self.cluster
        size = c.item_size(item)

        def l_candidates(need_free: bool) -> List[int]:
            out = []
            for g in c.gpus_of_family(SizeClass.L):
                if g in exclude or self._class_count(g, SM_CLASSES):
                    continue
                l_size = c.item_size(self._items_of_class(g, (SizeClass.L,))[0])
                if l_size + size >= self.capacity:
                    continue
                if need_free and c.free_bytes(g) < size:
                    continue
                out.append(g)
            return out

        j = self._best_by_priority(l_candidates(need_free=True))
        if j is not None:
            self._record_place(item, j, log, reason, src)
            return
        if allow_evict:
            j = self._best_by_priority(l_candidates(need_free=False))
            if j is not None:
                self._place_with_t_eviction(item, j, log, src=src,
                                            reason=reason)
                return
        # Same-class GPU with an open slot: only the latest one in the
        # canonical shape; any one when batching is filling holes.
        slots = _CLASS_SLOTS[cls]
        if prefer_holes:
            open_gpus = [g for g in c.gpus_of_family(cls)
                         if g not in exclude
                         and self._class_count(g, (cls,)) < slots
                         and c.free_bytes(g) >= size]
            j = self._best_by_priority(open_gpus)
            if j is not None:
                self._record_place(item, j, log, reason, src)
                return
        latest = self._latest_other(cls, exclude)
        if latest is not None and self._class_count(latest, (cls,)) < slots:
            evictable = sum(c.item_size(t) for t
                            in self._items_of_class(latest, T_CLASSES))
            if c.free_bytes(latest) + evictable >= size:
                self._place_with_t_eviction(item, latest, log, src=src,
                                            reason=reason)
                if cls is SizeClass.M:
                    self._fill_m_with_t(latest, log)
                return
        was_latest = self._latest_other(cls, exclude)
        j = self._fresh_gpu()
        self._record_place(item, j, log, reason, src)
        # The previously latest M-GPU is no longer exempt; top it up if
        # T-GPUs exist and it sits below 75%.
        if cls is SizeClass.M and was_latest is not None:
            self._fill_m_with_t(was_latest, log)

    def _place_with_t_eviction(self, item: ItemId, j: int, log: OperationLog,
                               *, src: Optional[int], reason: str) -> None:
        """Place on ``j``, re-allocating blocking T-items largest-first."""
        c = self.cluster
        size = c.item_size(item)
        evicted: List[ItemId] = []
        for t_item in self._items_of_class(j, T_CLASSES):
            if c.free_bytes(j) >= size:
                break
            c.unplace(t_item)
            evicted.append(t_item)
        self._record_place(item, j, log, reason, src)
        for t_item in evicted:
            self._place_tiny_item(t_item, log, src=j, exclude=frozenset(),
                                  prefer_holes=False, reason="update")

    def _place_tiny_item(self, item: ItemId, log: OperationLog, *,
                         src: Optional[int], exclude: FrozenSet[int],
                         prefer_holes: bool, reason: str) -> None:
        c = self.cluster
        size = c.item_size(item)
        cands = [g for g in c.gpus_of_family(SizeClass.L)
                 if g not in exclude and c.free_bytes(g) >= size]
        j = self._best_by_priority(cands)
        if j is None:
            cands = [g for g in c.gpus_of_family(SizeClass.M)
                     if g not in exclude
                     and not _conforms_threequarter(c, g)
                     and not self._class_count(g, T_CLASSES)
                     and c.free_bytes(g) >= size]
            j = self._best_by_priority(cands)
        if j is None and prefer_holes:
            cands = [g for g in self._t_family_gpus()
                     if g not in exclude and c.free_bytes(g) >= size]
            j = self._best_by_priority(cands)
        if j is None:
            latest = self._latest_other(SizeClass.T, exclude)
            if latest is not None and c.free_bytes(latest) >= size:
                j = latest
        if j is None:
            j = self._fresh_gpu()
        self._record_place(item, j, log, reason, src)

    # -- repair (Depart refills) ------------------------------------------

    def _repair_gpu(self, j: int, log: OperationLog) -> None:
        """Restore the canonical shape of ``j`` after items were removed."""
        c = self.cluster
        if j not in c.gpus or not c.gpus[j].residents:
            return
        fam = c.gpu_family(j)
        if j == c.latest_gpu_of_family(fam):
            return
        if fam is SizeClass.L:
            if not self._class_count(j, SM_CLASSES):
                self._pull_sm_to_l(j, log)
            if not _conforms_threequarter(c, j):
                self._fill_with_t(j, log)
        elif fam is SizeClass.M:
            if self._class_count(j, (SizeClass.M,)) < 2:
                self._refill_medium(j, log)
            self._fill_m_with_t(j, log)
        elif fam is SizeClass.S:
            # A demoted L-GPU can leave stray T-items behind; an S-GPU
            # may hold nothing but S-items.
            for t_item in self._items_of_class(j, T_CLASSES):
                c.unplace(t_item)
                self._place_tiny_item(t_item, log, src=j,
                                      exclude=frozenset({j}),
                                      prefer_holes=False,
                                      reason="depart-refill")
            while self._class_count(j, (SizeClass.S,)) < 3:
                # Only the globally latest S-GPU may be drained; taking
                # from a full one would just relocate the hole.
                donor = c.latest_gpu_of_family(SizeClass.S)
                if donor is None or donor == j:
                    break
                picks = [it for it in self._items_of_class(donor, (SizeClass.S,))
                         if c.item_size(it) <= c.free_bytes(j)]
                if not picks:
                    break
                self._move(picks[0], j, log, "depart-refill")
        else:
            self._fill_with_t(j, log)

    def _refill_medium(self, j: int, log: OperationLog) -> None:
        c = self.cluster
        donor = self._latest_other(SizeClass.M, frozenset({j}))
        if donor is None:
            return
        ms = self._items_of_class(donor, (SizeClass.M,))
        fitting = [it for it in ms if c.item_size(it) <= c.free_bytes(j)]
        if not fitting:
            # Blocking T-item on j; re-allocate it elsewhere first.
            for t_item in self._items_of_class(j, T_CLASSES):
                c.unplace(t_item)
                self._place_tiny_item(t_item, log, src=j,
                                      exclude=frozenset({j}),
                                      prefer_holes=False, reason="depart-refill")
                break
            fitting = [it for it in ms if c.item_size(it) <= c.free_bytes(j)]
        if not fitting:
            return
        self._move(fitting[0], j, log, "depart-refill")
        # If the donor kept only T-items it stops being an M-GPU; clear it.
        if (donor in c.gpus and c.gpus[donor].residents
                and not self._class_count(donor, (SizeClass.M,))):
            for t_item in self._items_of_class(donor, T_CLASSES):
                c.unplace(t_item)
                self._place_tiny_item(t_item, log, src=donor,
                                      exclude=frozenset({donor}),
                                      prefer_holes=False, reason="depart-refill")

    # -- public operations -------------------------------------------------

    def allocate(self, request_id: int, size: int) -> OperationLog:
        """Admit a request with its current KV size."""
        if size > self.capacity:
            raise RequestTooLarge(
                f"request {request_id} needs {size} > capacity {self.capacity}")
        if size <= 0:
            raise ValueError("size must be positive")
        log = OperationLog("allocate", request_id)
        before = self._latest_map()
        self.cluster.sizes[request_id] = size
        if classify_request(size, self.capacity) is SizeClass.TINY:
            self._allocate_tiny(request_id, log)
        else:
            self._place_item(request_id, log)
        self._repair_demoted(before, log)
        return log

    def _open_group(self) -> Optional[ItemId]:
        c = self.cluster
        for gid in sorted(c.groups, reverse=True):
            if 8 * c.item_size(gid) <= self.capacity:
                return gid
        return None

    def _allocate_tiny(self, request_id: int, log: OperationLog) -> None:
        c = self.cluster
        gid = self._open_group()
        if gid is None:
            group = c.new_group()
            c.group_add(group.group_id, request_id)
            self._place_item(group.group_id, log)
            return
        c.group_add(gid, request_id)
        j = c.gpu_of(gid)
        self.scheduled_class[gid] = c.item_class(gid)
        if c.used_bytes(j) > self.capacity:
            # Joining overflowed the host GPU; relocate the whole group.
            log.kind = "update"
            c.unplace(gid)
            self._repair_gpu(j, log)
            self._place_item(gid, log, src=j, exclude=frozenset({j}),
                             allow_evict=False, reason="update")

    def depart(self, request_id: int) -> OperationLog:
        """Release a completed request and refill the hole it leaves."""
        log = OperationLog("depart", request_id)
        c = self.cluster
        before = self._latest_map()
        if request_id in c.request_group:
            self._depart_group_member(request_id, log)
            self._repair_demoted(before, log)
            return log
        j = c.gpu_of(request_id)
        if j is None:
            raise NotPlaced(f"request {request_id} not placed")
        cls = c.item_class(request_id)
        if cls is SizeClass.L:
            self._depart_large(request_id, j, log)
        else:
            c.unplace(request_id)
            self.scheduled_class.pop(request_id, None)
            del c.sizes[request_id]
            self._repair_gpu(j, log)
        self._repair_demoted(before, log)
        return log

    def _depart_large(self, item: ItemId, j: int, log: OperationLog) -> None:
        c = self.cluster
        c.unplace(item)
        self.scheduled_class.pop(item, None)
        del c.sizes[item]
        others = sorted(c.gpus[j].residents,
                        key=lambda it: (-c.item_size(it), it))
        for other in others:
            c.unplace(other)
        for other in others:
            self._place_item(other, log, src=j, allow_evict=False,
                             reason="depart-refill")

    def _depart_group_member(self, request_id: int, log: OperationLog) -> None:
        c = self.cluster
        gid = c.request_group[request_id]
        group = c.groups[gid]
        c.group_remove(gid, request_id)
        del c.sizes[request_id]
        j = c.gpu_of(gid)
        if not group.members:
            c.unplace(gid)
            self.scheduled_class.pop(gid, None)
            del c.groups[gid]
            self._repair_gpu(j, log)
            return
        if 8 * c.item_size(gid) <= self.capacity:
            log.kind = "update"
            self._reopen_group(gid, j, log)
        else:
            self.scheduled_class[gid] = c.item_class(gid)
            self._repair_gpu(j, log)

    def _reopen_group(self, gid: ItemId, j: int, log: OperationLog) -> None:
        """A sealed group fell back under C/8: merge or re-place it."""
        c = self.cluster
        other_open = next(
            (g for g in sorted(c.groups, reverse=True)
             if g != gid and 8 * c.item_size(g) <= self.capacity),
            None,
        )
        if other_open is not None:
            dst_gpu = c.gpu_of(other_open)
            members = sorted(c.groups[gid].members)
            for r in members:
                c.group_remove(gid, r)
                c.group_add(other_open, r)
            c.unplace(gid)
            self.scheduled_class.pop(gid, None)
            del c.groups[gid]
            if j != dst_gpu:
                log.moves.append(Move(gid, j, dst_gpu, "update"))
            self.scheduled_class[other_open] = c.item_class(other_open)
            if c.used_bytes(dst_gpu) > self.capacity:
                merged = other_open
                src2 = c.unplace(merged)
                self._repair_gpu(src2, log)
                self._place_item(merged, log, src=src2,
                                 exclude=frozenset({src2}),
                                 allow_evict=False, reason="update")
            self._repair_gpu(j, log)
        else:
            c.unplace(gid)
            self._repair_gpu(j, log)
            self._place_item(gid, log, src=j, allow_evict=False,
                             reason="update")

    def update(self, request_id: int) -> OperationLog:
        """React to a class change or an overload of the host GPU."""
        log = OperationLog("update", request_id)
        c = self.cluster
        item = c.item_of_request(request_id)
        j = c.gpu_of(item)
        if j is None:
            raise NotPlaced(f"request {request_id} not placed")
        before = self._latest_map()
        old_cls = self.scheduled_class.get(item)
        new_cls = c.item_class(item)
        if new_cls is old_cls:
            if c.used_bytes(j) > self.capacity:
                self._resolve_overload(j, item, log)
            self._repair_demoted(before, log)
            return log
        if new_cls is SizeClass.L:
            l_items = self._items_of_class(j, (SizeClass.L,))
            if any(it != item for it in l_items):
                # Grown beside another L-request; move out.
                c.unplace(item)
                self._repair_gpu(j, log)
                self._place_item(item, log, src=j, allow_evict=False,
                                 reason="update")
            else:
                self.scheduled_class[item] = new_cls
                if c.used_bytes(j) > self.capacity:
                    self._resolve_overload(j, item, log)
                self._repair_gpu(j, log)
                # An in-place promotion can steal latest-L status from the
                # previous holder before the snapshot below can see it.
                demoted = self._latest_other(SizeClass.L, frozenset({j}))
                if demoted is not None:
                    self._repair_gpu(demoted, log)
        else:
            c.unplace(item)
            self._repair_gpu(j, log)
            self._place_item(item, log, src=j, allow_evict=False,
                             reason="update")
        self._repair_demoted(before, log)
        return log

    def _resolve_overload(self, j: int, keep: ItemId,
                          log: OperationLog) -> None:
        """Re-allocate every other resident of an overloaded GPU."""
        c = self.cluster
        others = sorted((it for it in c.gpus[j].residents if it != keep),
                        key=lambda it: (-c.item_size(it), it))
        for other in others:
            c.unplace(other)
        for other in others:
            self._place_item(other, log, src=j, allow_evict=False,
                             exclude=frozenset({j}), reason="update")
        # If the kept item is an S/M that now sits alone, a fitting L-GPU
        # is the canonical home (same preference a fresh allocate has).
        if (c.gpu_of(keep) == j and keep in c.placement
                and c.item_class(keep) in SM_CLASSES):
            dst = self._free_l_gpu_for(keep, frozenset({j}))
            if dst is not None:
                self._move(keep, dst, log, "update")
        self._repair_gpu(j, log)

    def _free_l_gpu_for(self, item: ItemId,
                        exclude: FrozenSet[int]) -> Optional[int]:
        """Best L-GPU that can host an S/M item without any eviction."""
        c = self.cluster
        size = c.item_size(item)
        cands = []
        for g in c.gpus_of_family(SizeClass.L):
            if g in exclude or self._class_count(g, SM_CLASSES):
                continue
            l_size = c.item_size(self._items_of_class(g, (SizeClass.L,))[0])
            if l_size + size < self.capacity and c.free_bytes(g) >= size:
                cands.append(g)
        return self._best_by_priority(cands)

    # -- growth -----------------------------------------------------------

    def handle_growth(self, grown: Sequence[int]) -> List[OperationLog]:
        """Apply class-change/overload updates after sizes were advanced.

        ``grown`` lists request ids whose size increased this slot; sizes
        must already be written into the cluster. Returns one log per
        request that needed action.
        """
        c = self.cluster
        logs: List[OperationLog] = []
        for r in sorted(grown):
            if r in c.request_group:
                log = self._handle_group_member_growth(r)
                if log is not None:
                    logs.append(log)
                continue
            if c.gpu_of(r) is None:
                continue
            if c.sizes[r] > self.capacity:
                logs.append(self._abort(r))
                continue
            j = c.gpu_of(r)
            if (self.scheduled_class.get(r) is not c.item_class(r)
                    or c.used_bytes(j) > self.capacity):
                logs.append(self.update(r))
        return logs

    def _abort(self, request_id: int) -> OperationLog:
        log = OperationLog("update", request_id)
        c = self.cluster
        before = self._latest_map()
        j = c.unplace(request_id)
        self.scheduled_class.pop(request_id, None)
        del c.sizes[request_id]
        log.events.append(("aborted", str(request_id)))
        self._repair_gpu(j, log)
        self._repair_demoted(before, log)
        return log

    def _handle_group_member_growth(self, r: int) -> Optional[OperationLog]:
        c = self.cluster
        gid = c.request_group[r]
        j = c.gpu_of(gid)
        before = self._latest_map()
        if c.sizes[r] > self.capacity:
            # Grown past a whole GPU: abort instead of leaving the group.
            log = OperationLog("update", r)
            c.group_remove(gid, r)
            del c.sizes[r]
            log.events.append(("aborted", str(r)))
            if not c.groups[gid].members:
                c.unplace(gid)
                self.scheduled_class.pop(gid, None)
                del c.groups[gid]
            if j in c.gpus and c.gpus[j].residents:
                self._repair_gpu(j, log)
            self._repair_demoted(before, log)
            return log
        if 8 * c.sizes[r] > self.capacity:
            # The member outgrew Tiny and leaves its group.
            log = OperationLog("update", r)
            c.group_remove(gid, r)
            if not c.groups[gid].members:
                c.unplace(gid)
                self.scheduled_class.pop(gid, None)
                del c.groups[gid]
            elif 8 * c.item_size(gid) <= self.capacity:
                self._reopen_group(gid, j, log)
            else:
                self.scheduled_class[gid] = c.item_class(gid)
            exclude = (frozenset({j})
                       if j in c.gpus and c.used_bytes(j) > self.capacity
                       else frozenset())
            self._place_item(r, log, src=j, allow_evict=False,
                             exclude=exclude, reason="update")
            if j in c.gpus and c.gpus[j].residents:
                self._repair_gpu(j, log)
            self._repair_demoted(before, log)
            return log
        if 4 * c.item_size(gid) > self.capacity:
            # Aggregate outgrew the T range; shed smallest members.
            log = OperationLog("update", r)
            self._shed_group_members(gid, j, log)
            self._repair_demoted(before, log)
            return log
        if c.used_bytes(j) > self.capacity:
            log = OperationLog("update", r)
            self._resolve_overload(j, gid, log)
            self._repair_demoted(before, log)
            return log
        self.scheduled_class[gid] = c.item_class(gid)
        return None

    def _shed_group_members(self, gid: ItemId, j: int,
                            log: OperationLog) -> None:
        c = self.cluster
        group = c.groups[gid]
        shed: List[int] = []
        members = sorted(group.members, key=lambda r: (c.sizes[r], r))
        for r in members:
            if 4 * c.item_size(gid) <= self.capacity:
                break
            c.group_remove(gid, r)
            shed.append(r)
        self.scheduled_class[gid] = c.item_class(gid)
        open_gid = self._open_group()
        if open_gid is not None and open_gid != gid:
            dst = c.gpu_of(open_gid)
            for r in shed:
                c.group_add(open_gid, r)
                if dst != j:
                    log.moves.append(Move(r, j, dst, "update"))
            self.scheduled_class[open_gid] = c.item_class(open_gid)
            if c.used_bytes(dst) > self.capacity:
                self._resolve_overload(dst, open_gid, log)
        else:
            new = c.new_group()
            for r in shed:
                c.group_add(new.group_id, r)
            self._place_item(new.group_id, log, src=j, allow_evict=False,
                             reason="update")
        if j in c.gpus and c.used_bytes(j) > self.capacity:
            self._resolve_overload(j, gid, log)
        elif j in c.gpus and c.gpus[j].residents:
            self._repair_gpu(j, log)

    # -- epochs ------------------------------------------------------------

    def step_epoch(self, arrivals: Sequence[Tuple[int, int]],
                   completions: Sequence[int],
                   growths: Optional[Dict[int, int]] = None) -> EpochResult:
        """Run one epoch of departs, updates and allocates.

        With batching enabled the three operation sets run as phases with
        refill moves deferred into a repair pass; the batched outcome is
        kept only when it needs no more moves than sequential execution.
        """
        growths = growths or {}
        if not self.batching:
            result = self._step_sequential(arrivals, completions, growths)
            self.cluster.check_capacity()
            return result
        seq = self.clone()
        bat = self.clone()
        seq_result = seq._step_sequential(arrivals, completions, growths)
        bat_result = bat._step_batched(arrivals, completions, growths)
        bat_ok = (
            bat_result is not None
            and bat_result.migration_count <= seq_result.migration_count
        )
        winner = bat if bat_ok else seq
        result = bat_result if bat_ok else seq_result
        self.epoch_migration_counts.append(
            (seq_result.migration_count, result.migration_count))
        self._adopt(winner)
        self.cluster.check_capacity()
        return result

    def _step_sequential(self, arrivals, completions, growths) -> EpochResult:
        c = self.cluster
        logs: List[OperationLog] = []
        for r, size in sorted(growths.items()):
            if r in c.sizes:
                c.set_size(r, max(c.sizes[r], size))
        for r in sorted(completions):
            logs.append(self.depart(r))
        logs.extend(self.handle_growth(sorted(growths)))
        for r, size in sorted(arrivals):
            try:
                logs.append(self.allocate(r, size))
            except RequestTooLarge:
                log = OperationLog("allocate", r)
                log.events.append(("rejected", str(r)))
                logs.append(log)
        terminated = c.terminate_idle_gpus()
        return EpochResult(logs=logs, terminated=terminated, batched=False)

    def _step_batched(self, arrivals, completions,
                      growths) -> Optional[EpochResult]:
        c = self.cluster
        log = OperationLog("epoch", None)
        # Phase 1: departs without refills; holes stay open for later phases.
        for r in sorted(completions):
            if r in c.request_group:
                gid = c.request_group[r]
                c.group_remove(gid, r)
                del c.sizes[r]
                if not c.groups[gid].members:
                    c.unplace(gid)
                    self.scheduled_class.pop(gid, None)
                    del c.groups[gid]
                continue
            j = c.gpu_of(r)
            if j is None:
                continue
            c.unplace(r)
            self.scheduled_class.pop(r, None)
            del c.sizes[r]
        # Phase 2: growth, aborts and group structure; placement repairs wait.
        for r, size in sorted(growths.items()):
            if r in c.sizes:
                c.set_size(r, max(c.sizes[r], size))
        for r in sorted(growths):
            if r in c.request_group:
                gid = c.request_group[r]
                if c.sizes[r] > self.capacity:
                    c.group_remove(gid, r)
                    del c.sizes[r]
                    log.events.append(("aborted", str(r)))
                    if not c.groups[gid].members:
                        c.unplace(gid)
                        self.scheduled_class.pop(gid, None)
                        del c.groups[gid]
                    continue
                if 8 * c.sizes[r] > self.capacity:
                    j = c.gpu_of(gid)
                    c.group_remove(gid, r)
                    if not c.groups[gid].members:
                        c.unplace(gid)
                        self.scheduled_class.pop(gid, None)
                        del c.groups[gid]
                    self._place_item(r, log, src=j, allow_evict=False,
                                     prefer_holes=True, reason="update")
            elif r in c.sizes and c.gpu_of(r) is not None:
                if c.sizes[r] > self.capacity:
                    j = c.unplace(r)
                    self.scheduled_class.pop(r, None)
                    del c.sizes[r]
                    log.events.append(("aborted", str(r)))
        # Phase 3: allocates may consume the holes departs left behind.
        for r, size in sorted(arrivals):
            if size > self.capacity:
                log.events.append(("rejected", str(r)))
                continue
            c.sizes[r] = size
            if classify_request(size, self.capacity) is SizeClass.TINY:
                self._allocate_tiny(r, log)
            else:
                self._place_item(r, log, prefer_holes=True)
        # Phase 4: flush — a global repair standing in for the deferred moves.
        if not self._repair_all(log):
            return None
        terminated = c.terminate_idle_gpus()
        if verify_properties(c):
            return None
        return EpochResult(logs=[log], terminated=terminated, batched=True)

    def _repair_all(self, log: OperationLog) -> bool:
        """Drive the whole cluster back to the canonical shape."""
        c = self.cluster
        for _ in range(6):
            changed = False
            before = len(log.moves)
            # Group aggregates may have left the T range.
            for gid in sorted(c.groups, reverse=True):
                if 4 * c.item_size(gid) > self.capacity:
                    j = c.gpu_of(gid)
                    self._shed_group_members(gid, j, log)
            order = sorted(
                (g for g, st in c.gpus.items() if st.residents),
                key=lambda g: (c.gpus[g].activation_seq, g),
            )
            for j in order:
                if j not in c.gpus or not c.gpus[j].residents:
                    continue
                if c.used_bytes(j) > self.capacity:
                    keep = max(c.gpus[j].residents,
                               key=lambda it: (c.item_size(it), it))
                    self._resolve_overload(j, keep, log)
                    changed = True
            for j in order:
                if j not in c.gpus or not c.gpus[j].residents:
                    continue
                if self._repair_shape(j, log):
                    changed = True
            changed = changed or len(log.moves) > before
            if not changed and not verify_properties(c):
                return True
        return not verify_properties(c)

    def _repair_shape(self, j: int, log: OperationLog) -> bool:
        """Move out items foreign to the GPU's category, then refill."""
        c = self.cluster
        if j not in c.gpus or not c.gpus[j].residents:
            return False
        before = len(log.moves)
        fam = c.gpu_family(j)
        latest = c.latest_gpu_of_family(fam)
        if j == latest:
            return False
        if fam is SizeClass.L:
            extra_sm = self._items_of_class(j, SM_CLASSES)[1:]
            for it in extra_sm:
                c.unplace(it)
                self._place_item(it, log, src=j, allow_evict=False,
                                 exclude=frozenset({j}), prefer_holes=True,
                                 reason="batch")
        elif fam is SizeClass.M:
            for it in self._items_of_class(j, (SizeClass.S,)):
                c.unplace(it)
                self._place_item(it, log, src=j, allow_evict=False,
                                 exclude=frozenset({j}), prefer_holes=True,
                                 reason="batch")
            for it in self._items_of_class(j, (SizeClass.M,))[2:]:
                c.unplace(it)
                self._place_item(it, log, src=j, allow_evict=False,
                                 exclude=frozenset({j}), prefer_holes=True,
                                 reason="batch")
            for it in self._items_of_class(j, T_CLASSES)[1:]:
                c.unplace(it)
                self._place_item(it, log, src=j, allow_evict=False,
                                 exclude=frozenset({j}), prefer_holes=True,
                                 reason="batch")
        elif fam is SizeClass.S:
            for it in self._items_of_class(j, T_CLASSES):
                c.unplace(it)
                self._place_item(it, log, src=j, allow_evict=False,
                                 exclude=frozenset({j}), prefer_holes=True,
                                 reason="batch")
            for it in self._items_of_class(j, (SizeClass.S,))[3:]:
                c.unplace(it)
                self._place_item(it, log, src=j, allow_evict=False,
                                 exclude=frozenset({j}), prefer_holes=True,
                                 reason="batch")
        self._repair_gpu(j, log)
        return len(log.moves) > before

    # -- cloning -----------------------------------------------------------

    def clone(self) -> "MellScheduler":
        other = MellScheduler(copy.deepcopy(self.cluster),
                              priority_cfg=self.priority_cfg,
                              batching=False)
        other.scheduled_class = dict(self.scheduled_class)
        return other

    def _adopt(self, other: "MellScheduler") -> None:
        src = other.cluster
        dst = self.cluster
        dst.gpus = src.gpus
        dst.placement = src.placement
        dst.sizes = src.sizes
        dst.groups = src.groups
        dst.request_group = src.request_group
        dst.next_activation_seq = src.next_activation_seq
        dst._next_group_id = src._next_group_id
        dst._free_gpu_ids = src._free_gpu_ids
        dst._next_gpu_id = src._next_gpu_id
        dst._family_cache = src._family_cache
        self.scheduled_class = other.scheduled_class


def batch_operations(scheduler: MellScheduler,
                     departs: Sequence[int],
                     updates: Dict[int, int],
                     allocates: Sequence[Tuple[int, int]]) -> EpochResult:
    """Run one epoch's depart/update/allocate sets as a batch."""
    was = scheduler.batching
    scheduler.batching = True
    try:
        return scheduler.step_epoch(allocates, departs, updates)
    finally:
        scheduler.batching = was
