"""Epoch-based persistent-slot allocation over designated heap areas.

Each worker thread owns an allocator that hands out fixed-size slots from
designated areas of the persistent heap, either by bumping into fresh space
or from a local free list fed by retired slots whose grace period elapsed.
Area metadata (kind, base, geometry, owner) lives in a persisted registry at
the bottom of the heap so a recovery can rediscover every slot; allocator
runtime state (bump positions, free lists, limbo, epochs) is volatile and is
rebuilt after a crash from a scan of the areas.

Fresh heap bytes are zero and the zero state needs no writeback, so a new
area is born with every slot persistently zeroed; only the registry update
itself is flushed and fenced, and that cost is attributed to setup rather
than to whichever queue operation triggered the area growth.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Set, Tuple

from .pmem import LINE_SIZE, WORD, PersistentHeap

_REG_MAGIC = 0x53_47_45_52_51_4D_50_41  # "APMQREGS" little-endian
_MAX_AREAS = 255
_DATA_START_LINE = 1 + _MAX_AREAS
_KIND_BYTES = 16

QUIESCENT = None


class AllocError(Exception):
    pass


class RecoveryError(Exception):
    """A crash image failed validation during recovery; the image is rejected."""


@dataclass
class Area:
    kind: str
    base: int
    slot_size: int
    slot_count: int
    owner: int
    bump: int = 0  # volatile: next fresh slot index

    def addr(self, index: int) -> int:
        return self.base + index * self.slot_size

    def end(self) -> int:
        return self.base + self.slot_size * self.slot_count

    def contains(self, addr: int) -> bool:
        return self.base <= addr < self.end() and (addr - self.base) % self.slot_size == 0

    def slots(self) -> Iterator[int]:
        for i in range(self.slot_count):
            yield self.addr(i)


class AreaRegistry:
    """Persisted directory of designated areas, kept in the heap's first lines."""

    def __init__(self, heap: PersistentHeap):
        self.heap = heap
        self.areas: List[Area] = []
        self._carve = _DATA_START_LINE * LINE_SIZE

    @classmethod
    def create(cls, heap: PersistentHeap, thread: int = 0) -> "AreaRegistry":
        reg = cls(heap)
        with heap.suspend_attribution(thread):
            heap.store_word(0, _REG_MAGIC, thread)
            heap.store_word(WORD, 0, thread)
            heap.flush(0, thread)
            heap.sfence(thread)
        return reg

    @classmethod
    def load(cls, heap: PersistentHeap, thread: int = 0) -> "AreaRegistry":
        reg = cls(heap)
        magic = heap.load_word(0, thread)
        if magic != _REG_MAGIC:
            raise RecoveryError(f"area registry magic mismatch: {magic:#x}")
        count = heap.load_word(WORD, thread)
        if count > _MAX_AREAS:
            raise RecoveryError(f"area registry count {count} exceeds capacity")
        for i in range(count):
            base_off = (1 + i) * LINE_SIZE
            raw_kind = heap.pload(base_off, _KIND_BYTES, thread)
            kind = raw_kind.rstrip(b"\x00").decode("ascii")
            base = heap.load_word(base_off + 16, thread)
            slot_size = heap.load_word(base_off + 24, thread)
            slot_count = heap.load_word(base_off + 32, thread)
            owner = heap.load_word(base_off + 40, thread)
            if not kind or slot_size == 0 or base + slot_size * slot_count > heap.capacity:
                raise RecoveryError(f"area registry entry {i} is corrupt")
            area = Area(kind, base, slot_size, slot_count, owner, bump=slot_count)
            reg.areas.append(area)
            reg._carve = max(reg._carve, area.end())
        return reg

    def create_area(self, kind: str, slot_size: int, slot_count: int, owner: int, thread: int) -> Area:
        if slot_size % LINE_SIZE:
            raise AllocError(f"slot size {slot_size} must be a line multiple so slots never share a line")
        if len(self.areas) >= _MAX_AREAS:
            raise AllocError("area registry is full")
        base = self._carve
        if base + slot_size * slot_count > self.heap.capacity:
            raise AllocError("heap capacity exhausted")
        self._carve = base + slot_size * slot_count
        area = Area(kind, base, slot_size, slot_count, owner)
        index = len(self.areas)
        self.areas.append(area)
        heap = self.heap
        with heap.suspend_attribution(thread):
            entry = (1 + index) * LINE_SIZE
            padded = kind.encode("ascii").ljust(_KIND_BYTES, b"\x00")
            heap.pstore(entry, padded, thread)
            heap.store_word(entry + 16, base, thread)
            heap.store_word(entry + 24, slot_size, thread)
            heap.store_word(entry + 32, slot_count, thread)
            heap.store_word(entry + 40, owner, thread)
            heap.flush(entry, thread)
            heap.sfence(thread)
            # count is bumped only after the entry is persistent
            heap.store_word(WORD, index + 1, thread)
            heap.flush(WORD, thread)
            heap.sfence(thread)
        return area

    def areas_of(self, kind: str) -> List[Area]:
        return [a for a in self.areas if a.kind == kind]

    def scan(self, kind: str, thread: int = 0) -> Iterator[Tuple[int, Area]]:
        """Yield every slot address of every area of a kind."""
        for area in self.areas_of(kind):
            for addr in area.slots():
                yield addr, area


class EpochManager:
    """Shared epoch records: per-thread announcements plus a global counter."""

    def __init__(self, n_threads: int):
        self.global_epoch = 0
        self.announced: List[Optional[int]] = [QUIESCENT] * n_threads

    def enter(self, thread: int) -> None:
        self.announced[thread] = self.global_epoch
        self.try_advance()

    def exit(self, thread: int) -> None:
        self.announced[thread] = QUIESCENT

    def try_advance(self) -> bool:
        g = self.global_epoch
        for e in self.announced:
            if e is not None and e < g:
                return False
        self.global_epoch = g + 1
        return True


class ThreadAllocator:
    """Single-owner allocator: designated areas, free lists, and limbo."""

    def __init__(self, pool: "AllocatorPool", owner: int):
        self.pool = pool
        self.owner = owner
        self.free: Dict[str, List[int]] = {}
        self.limbo: deque = deque()  # (retire_epoch, kind, addr)
        self._open_areas: Dict[str, Area] = {}

    def alloc(self, kind: str, thread: int) -> int:
        self.collect()
        free = self.free.get(kind)
        if free:
            addr = free.pop()
            self.pool._shadow_move(addr, "free", "live")
        else:
            area = self._open_areas.get(kind)
            if area is None or area.bump >= area.slot_count:
                slot_size, area_slots = self.pool.kinds[kind]
                area = self.pool.registry.create_area(kind, slot_size, area_slots, self.owner, thread)
                self._open_areas[kind] = area
            addr = area.addr(area.bump)
            area.bump += 1
            self.pool._shadow_move(addr, None, "live")
        self.pool.heap.lifetime_boundary(addr, self.pool.kinds[kind][0])
        return addr

    def retire(self, kind: str, addr: int) -> None:
        self.pool._shadow_move(addr, "live", "limbo")
        epochs = self.pool.epochs
        self.limbo.append((epochs.global_epoch, kind, addr))
        epochs.try_advance()
        self.collect()

    def collect(self) -> None:
        epochs = self.pool.epochs
        while self.limbo and self.limbo[0][0] <= epochs.global_epoch - 2:
            _, kind, addr = self.limbo.popleft()
            self._release(kind, addr)

    def _release(self, kind: str, addr: int) -> None:
        self.pool.heap.lifetime_boundary(addr, self.pool.kinds[kind][0])
        self.free.setdefault(kind, []).append(addr)
        self.pool._shadow_move(addr, "limbo", "free")


class AllocatorPool:
    """One allocator per worker slot over a shared registry and epoch record."""

    def __init__(self, heap: PersistentHeap, n_threads: int, kinds: Dict[str, Tuple[int, int]], registry: AreaRegistry):
        self.heap = heap
        self.n_threads = n_threads
        self.kinds = kinds  # kind -> (slot_size, default area slot count)
        self.registry = registry
        self.epochs = EpochManager(n_threads)
        self.allocators = [ThreadAllocator(self, t) for t in range(n_threads)]
        self._shadow: Dict[int, str] = {}

    @classmethod
    def fresh(cls, heap: PersistentHeap, n_threads: int, kinds: Dict[str, Tuple[int, int]], thread: int = 0) -> "AllocatorPool":
        registry = AreaRegistry.create(heap, thread)
        return cls(heap, n_threads, kinds, registry)

    @classmethod
    def attach(cls, heap: PersistentHeap, n_threads: int, kinds: Dict[str, Tuple[int, int]]) -> "AllocatorPool":
        """Adopt the areas recorded in a recovered heap; free lists start empty."""
        registry = AreaRegistry.load(heap)
        pool = cls(heap, n_threads, kinds, registry)
        for area in registry.areas:
            area.bump = area.slot_count
            owner = area.owner % n_threads
            pool.allocators[owner]._open_areas.setdefault(area.kind, area)
        return pool

    def allocator(self, thread: int) -> ThreadAllocator:
        return self.allocators[thread]

    def alloc(self, thread: int, kind: str) -> int:
        return self.allocators[thread].alloc(kind, thread)

    def retire(self, thread: int, kind: str, addr: int) -> None:
        self.allocators[thread].retire(kind, addr)

    def rebuild_free_lists(self, kind: str, claimed: Set[int]) -> int:
        """After recovery claimed the live slots, everything else is free."""
        freed = 0
        for area in self.registry.areas_of(kind):
            owner = area.owner % self.n_threads
            allocator = self.allocators[owner]
            for addr in area.slots():
                if addr in claimed:
                    self._shadow.pop(addr, None)
                    self._shadow[addr] = "live"
                    continue
                self.heap.lifetime_boundary(addr, area.slot_size)
                allocator.free.setdefault(kind, []).append(addr)
                self._shadow[addr] = "free"
                freed += 1
        return freed

    def _shadow_move(self, addr: int, expect: Optional[str], state: str) -> None:
        cur = self._shadow.get(addr)
        if expect is not None and cur != expect:
            raise AllocError(f"slot {addr:#x} is {cur!r}, expected {expect!r} (double retire or aliasing)")
        if expect is None and cur is not None:
            raise AllocError(f"slot {addr:#x} already tracked as {cur!r}")
        self._shadow[addr] = state

    def shadow_state(self, addr: int) -> Optional[str]:
        return self._shadow.get(addr)
