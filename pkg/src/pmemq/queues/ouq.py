"""Durable unlinked queue with zero accesses to flushed cache lines.

Each queue node is split in two: a persistent record (item, index, linked
flag in one line) that is written, flushed once, and never touched again
until recovery, and a volatile companion (item/index copies, forward link,
pointer back to the record) that serves all normal-path reads.  Dequeues
persist progress by writing the dequeued node's index to a per-thread head
index with a non-temporal store plus one fence, so no flushed line is ever
re-read or re-written.  Recovery takes the maximum persisted per-thread head
index and resurrects every linked record with a larger index.
"""

from __future__ import annotations

from typing import List, Optional

from ..alloc import AllocatorPool, RecoveryError
from ..sim import VolatileCell
from .base import EMPTY, QueueConfig, check_item, fence_then_tail_cas, note_attempts

_KIND_PERS = "ouq.pers"
_KIND_CTL = "ouq.ctl"
_ITEM = 0
_INDEX = 8
_LINKED = 16


class _Vol:
    __slots__ = ("item", "index", "next", "paddr")

    def __init__(self, item: int, index: int, paddr: int):
        self.item = item
        self.index = index
        self.next = VolatileCell(None)
        self.paddr = paddr


class OptUnlinkedQueue:
    variant = "ouq"
    durable = True

    def __init__(self, heap, pool, n_threads: int, cfg: QueueConfig, local_base: int):
        self.heap = heap
        self.pool = pool
        self.n_threads = n_threads
        self.cfg = cfg
        self._local_base = local_base  # one line per thread: head index word
        self.head = VolatileCell(None)
        self.tail = VolatileCell(None)
        self.node_to_retire: List[Optional[_Vol]] = [None] * n_threads
        self.max_attempts = [0] * n_threads

    def _local(self, thread: int) -> int:
        return self._local_base + 64 * thread

    @classmethod
    def _kinds(cls, cfg: QueueConfig, n_threads: int):
        return {_KIND_PERS: (64, cfg.area_slots), _KIND_CTL: (64, n_threads)}

    @classmethod
    def create(cls, heap, n_threads: int, cfg: QueueConfig) -> "OptUnlinkedQueue":
        pool = AllocatorPool.fresh(heap, n_threads, cls._kinds(cfg, n_threads))
        with heap.suspend_attribution(0):
            ctl = pool.registry.create_area(_KIND_CTL, 64, n_threads, 0, 0)
            dummy_p = pool.alloc(0, _KIND_PERS)  # fresh slot: index 0, linked 0
        q = cls(heap, pool, n_threads, cfg, ctl.base)
        dummy = _Vol(0, 0, dummy_p)
        q.head = VolatileCell(dummy)
        q.tail = VolatileCell(dummy)
        return q

    # ------------------------------------------------------------------

    def enqueue(self, thread: int, value: int) -> None:
        check_item(value)
        h = self.heap
        vol = _Vol(value, 0, 0)
        paddr = self.pool.alloc(thread, _KIND_PERS)
        vol.paddr = paddr
        if self.cfg.has("linked_before_item"):
            h.store_word(paddr + _LINKED, 1, thread)
            h.store_word(paddr + _ITEM, value, thread)
        else:
            h.store_word(paddr + _ITEM, value, thread)
            h.store_word(paddr + _LINKED, 0, thread)
        attempts = 0
        while True:
            attempts += 1
            tail = self.tail.load()
            if tail.next.load() is None:
                index = tail.index + 1
                h.store_word(paddr + _INDEX, index, thread)
                vol.index = index
                if tail.next.cas(None, vol):
                    if not self.cfg.has("linked_before_item"):
                        h.store_word(paddr + _LINKED, 1, thread)
                    h.flush(paddr, thread)
                    if self.cfg.has("skip_enqueue_fence"):
                        self.tail.cas(tail, vol)
                    else:
                        fence_then_tail_cas(self, thread, self.tail, tail, vol)
                    note_attempts(self, thread, attempts)
                    return
            nxt = tail.next.load()
            self.tail.cas(tail, nxt)

    def dequeue(self, thread: int):
        h = self.heap
        attempts = 0
        while True:
            attempts += 1
            head = self.head.load()
            hnext = head.next.load()
            if hnext is None:
                h.nt_store_word(self._local(thread), head.index, thread)
                h.sfence(thread)
                note_attempts(self, thread, attempts)
                return EMPTY
            if self.head.cas(head, hnext):
                item = hnext.item
                h.nt_store_word(self._local(thread), hnext.index, thread)
                h.sfence(thread)
                pending = self.node_to_retire[thread]
                if pending is not None:
                    self.pool.retire(thread, _KIND_PERS, pending.paddr)
                self.node_to_retire[thread] = head
                note_attempts(self, thread, attempts)
                return item

    def thread_shutdown(self, thread: int) -> None:
        pending = self.node_to_retire[thread]
        if pending is not None:
            self.pool.retire(thread, _KIND_PERS, pending.paddr)
            self.node_to_retire[thread] = None

    # ------------------------------------------------------------------

    @classmethod
    def recover(cls, heap, n_threads: int, cfg: QueueConfig) -> "OptUnlinkedQueue":
        pool = AllocatorPool.attach(heap, n_threads, cls._kinds(cfg, n_threads))
        ctl_areas = pool.registry.areas_of(_KIND_CTL)
        if not ctl_areas:
            raise RecoveryError("per-thread head index area missing")
        if ctl_areas[0].slot_count < n_threads:
            raise RecoveryError("recovered head index area is smaller than the thread count")
        head_index = 0
        for area in ctl_areas:
            for addr in area.slots():
                head_index = max(head_index, heap.peek_word(addr))

        kept: List[tuple] = []
        by_index = {}
        flagged = []
        for addr, _ in pool.registry.scan(_KIND_PERS):
            linked = heap.peek_word(addr + _LINKED)
            index = heap.peek_word(addr + _INDEX)
            if linked and index > head_index:
                if index in by_index:
                    raise RecoveryError(f"duplicate live index {index} at {by_index[index]:#x} and {addr:#x}")
                by_index[index] = addr
                kept.append((index, addr))
            elif linked:
                flagged.append(addr)
        kept.sort()

        flushed = False
        for addr in flagged:
            heap.store_word(addr + _LINKED, 0, 0)
            heap.flush(addr, 0)
            flushed = True

        pool.rebuild_free_lists(_KIND_PERS, {addr for _, addr in kept})
        q = cls(heap, pool, n_threads, cfg, ctl_areas[0].base)
        dummy_p = pool.alloc(0, _KIND_PERS)
        heap.store_word(dummy_p + _INDEX, head_index, 0)
        dummy = _Vol(0, head_index, dummy_p)
        prev = dummy
        for index, addr in kept:
            vol = _Vol(heap.peek_word(addr + _ITEM), index, addr)
            prev.next.store(vol)
            prev = vol
        q.head = VolatileCell(dummy)
        q.tail = VolatileCell(prev)
        if flushed:
            heap.sfence(0)
        return q

    # ------------------------------------------------------------------

    def snapshot_items(self) -> List[int]:
        out = []
        node = self.head.peek().next.peek()
        while node is not None:
            out.append(node.item)
            node = node.next.peek()
        return out

    def live_nodes(self) -> List[dict]:
        nodes = []
        node = self.head.peek()
        while node is not None:
            nodes.append(
                {
                    "addr": node.paddr,
                    "index": node.index,
                    "persistent_index": self.heap.peek_word(node.paddr + _INDEX),
                    "linked": self.heap.peek_word(node.paddr + _LINKED),
                }
            )
            node = node.next.peek()
        return nodes
