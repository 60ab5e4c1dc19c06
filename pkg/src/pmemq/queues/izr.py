"""Durable baseline: the volatile queue with a persist after every shared access.

Every load, store, and CAS on shared memory is followed by a flush of the
touched line and a blocking fence.  That makes the entire structure (head,
tail, nodes, links) persistent at every step, so recovery is a plain walk,
but each operation pays several blocking persists and constantly re-touches
freshly flushed lines.
"""

from __future__ import annotations

from typing import List

from ..alloc import AllocatorPool, RecoveryError
from .base import EMPTY, QueueConfig, check_item, note_attempts

_KIND_NODE = "izr.node"
_KIND_CTL = "izr.ctl"
_ITEM = 0
_NEXT = 8


class PersistEachAccessQueue:
    variant = "izr"
    durable = True

    def __init__(self, heap, pool, n_threads: int, cfg: QueueConfig, head_addr: int, tail_addr: int):
        self.heap = heap
        self.pool = pool
        self.n_threads = n_threads
        self.cfg = cfg
        self.head_addr = head_addr
        self.tail_addr = tail_addr
        self.max_attempts = [0] * n_threads

    @classmethod
    def _kinds(cls, cfg: QueueConfig):
        return {_KIND_NODE: (64, cfg.area_slots), _KIND_CTL: (64, 2)}

    @classmethod
    def create(cls, heap, n_threads: int, cfg: QueueConfig) -> "PersistEachAccessQueue":
        pool = AllocatorPool.fresh(heap, n_threads, cls._kinds(cfg))
        with heap.suspend_attribution(0):
            head_addr = pool.alloc(0, _KIND_CTL)
            tail_addr = pool.alloc(0, _KIND_CTL)
            dummy = pool.alloc(0, _KIND_NODE)
            heap.store_word(head_addr, dummy, 0)
            heap.store_word(tail_addr, dummy, 0)
            heap.flush(head_addr, 0)
            heap.flush(tail_addr, 0)
            heap.flush(dummy, 0)
            heap.sfence(0)
        return cls(heap, pool, n_threads, cfg, head_addr, tail_addr)

    def _persist(self, addr: int, thread: int) -> None:
        self.heap.flush(addr, thread)
        self.heap.sfence(thread)

    def enqueue(self, thread: int, value: int) -> None:
        check_item(value)
        h = self.heap
        addr = self.pool.alloc(thread, _KIND_NODE)
        h.store_word(addr + _ITEM, value, thread)
        self._persist(addr + _ITEM, thread)
        h.store_word(addr + _NEXT, 0, thread)
        self._persist(addr + _NEXT, thread)
        attempts = 0
        while True:
            attempts += 1
            tail = h.load_word(self.tail_addr, thread)
            self._persist(self.tail_addr, thread)
            tnext = h.load_word(tail + _NEXT, thread)
            self._persist(tail + _NEXT, thread)
            if tnext == 0:
                linked = h.pcas_word(tail + _NEXT, 0, addr, thread)
                self._persist(tail + _NEXT, thread)
                if linked:
                    h.pcas_word(self.tail_addr, tail, addr, thread)
                    self._persist(self.tail_addr, thread)
                    note_attempts(self, thread, attempts)
                    return
            else:
                h.pcas_word(self.tail_addr, tail, tnext, thread)
                self._persist(self.tail_addr, thread)

    def dequeue(self, thread: int):
        h = self.heap
        attempts = 0
        while True:
            attempts += 1
            head = h.load_word(self.head_addr, thread)
            self._persist(self.head_addr, thread)
            hnext = h.load_word(head + _NEXT, thread)
            self._persist(head + _NEXT, thread)
            if hnext == 0:
                note_attempts(self, thread, attempts)
                return EMPTY
            advanced = h.pcas_word(self.head_addr, head, hnext, thread)
            self._persist(self.head_addr, thread)
            if advanced:
                item = h.load_word(hnext + _ITEM, thread)
                self._persist(hnext + _ITEM, thread)
                self.pool.retire(thread, _KIND_NODE, head)
                note_attempts(self, thread, attempts)
                return item

    def thread_shutdown(self, thread: int) -> None:
        pass

    @classmethod
    def recover(cls, heap, n_threads: int, cfg: QueueConfig) -> "PersistEachAccessQueue":
        pool = AllocatorPool.attach(heap, n_threads, cls._kinds(cfg))
        ctl = pool.registry.areas_of(_KIND_CTL)
        if len(ctl) != 1 or ctl[0].slot_count < 2:
            raise RecoveryError("persist-each-access queue control area missing")
        head_addr, tail_addr = ctl[0].addr(0), ctl[0].addr(1)
        slots = {addr for addr, _ in pool.registry.scan(_KIND_NODE)}
        head = heap.peek_word(head_addr)
        if head not in slots:
            raise RecoveryError(f"recovered head {head:#x} is not a node slot")
        claimed = {head}
        cur = head
        while True:
            nxt = heap.peek_word(cur + _NEXT)
            if nxt == 0:
                break
            if nxt not in slots or nxt in claimed:
                raise RecoveryError(f"broken next chain at {cur:#x} -> {nxt:#x}")
            claimed.add(nxt)
            cur = nxt
        heap.store_word(tail_addr, cur, 0)
        heap.flush(tail_addr, 0)
        heap.sfence(0)
        pool.rebuild_free_lists(_KIND_NODE, claimed)
        return cls(heap, pool, n_threads, cfg, head_addr, tail_addr)

    def snapshot_items(self) -> List[int]:
        out = []
        cur = self.heap.peek_word(self.head_addr)
        while True:
            nxt = self.heap.peek_word(cur + _NEXT)
            if nxt == 0:
                return out
            out.append(self.heap.peek_word(nxt + _ITEM))
            cur = nxt
