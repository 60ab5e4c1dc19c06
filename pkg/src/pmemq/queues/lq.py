"""Durable queue that persists its links and validates nodes on recovery.

Each node packs item, forward link, backward link, and an ``initialized``
flag into one cache line.  An enqueue writes the content before setting the
flag, so same-line write ordering guarantees the flag is never persistent
while the content is stale; nodes are always allocated with the flag
persistently clear (fresh areas are zeroed, and dequeues clear and flush the
flag of retired dummies, piggybacking on a later fence).  After linking, an
enqueue walks backward links flushing the not-yet-persistent suffix and
issues one fence, then severs its backward link to cap future walks.
Recovery keeps the chain of initialized nodes reachable from the persisted
head and reclaims everything else, clearing any stale flags it finds.
"""

from __future__ import annotations

from typing import List, Optional, Set

from ..alloc import AllocatorPool, RecoveryError
from ..sim import VolatileCell
from .base import EMPTY, QueueConfig, check_item, fence_then_tail_cas, note_attempts

_KIND_NODE = "lq.node"
_KIND_CTL = "lq.ctl"
_ITEM = 0
_NEXT = 8
_PRED = 16
_INIT = 24


class LinkedQueue:
    variant = "lq"
    durable = True

    def __init__(self, heap, pool, n_threads: int, cfg: QueueConfig, head_addr: int):
        self.heap = heap
        self.pool = pool
        self.n_threads = n_threads
        self.cfg = cfg
        self.head_addr = head_addr
        self.tail = VolatileCell(0)
        self.node_to_persist_and_retire: List[Optional[int]] = [None] * n_threads
        self.max_attempts = [0] * n_threads

    @classmethod
    def _kinds(cls, cfg: QueueConfig):
        return {_KIND_NODE: (64, cfg.area_slots), _KIND_CTL: (64, 1)}

    @classmethod
    def create(cls, heap, n_threads: int, cfg: QueueConfig) -> "LinkedQueue":
        pool = AllocatorPool.fresh(heap, n_threads, cls._kinds(cfg))
        with heap.suspend_attribution(0):
            head_addr = pool.alloc(0, _KIND_CTL)
            dummy = pool.alloc(0, _KIND_NODE)
            heap.store_word(dummy + _INIT, 1, 0)
            heap.store_word(head_addr, dummy, 0)
            heap.flush(dummy, 0)
            heap.flush(head_addr, 0)
            heap.sfence(0)
        q = cls(heap, pool, n_threads, cfg, head_addr)
        q.tail = VolatileCell(dummy)
        return q

    # ------------------------------------------------------------------

    def _flush_suffix(self, addr: int, thread: int) -> None:
        h = self.heap
        node = addr
        while True:
            h.flush(node, thread)
            node = h.load_word(node + _PRED, thread)
            if node == 0:
                return

    def enqueue(self, thread: int, value: int) -> None:
        check_item(value)
        h = self.heap
        addr = self.pool.alloc(thread, _KIND_NODE)  # initialized is persistently clear
        h.store_word(addr + _ITEM, value, thread)
        h.store_word(addr + _NEXT, 0, thread)
        h.store_word(addr + _INIT, 1, thread)
        attempts = 0
        while True:
            attempts += 1
            tail = self.tail.load()
            tnext = h.load_word(tail + _NEXT, thread)
            if tnext == 0:
                h.store_word(addr + _PRED, tail, thread)
                if h.pcas_word(tail + _NEXT, 0, addr, thread):
                    if not self.cfg.has("skip_suffix_flush"):
                        self._flush_suffix(addr, thread)
                    fence_then_tail_cas(self, thread, self.tail, tail, addr)
                    # everything up to and including this node is now persistent
                    h.store_word(addr + _PRED, 0, thread)
                    note_attempts(self, thread, attempts)
                    return
            nxt = h.load_word(tail + _NEXT, thread)
            self.tail.cas(tail, nxt)

    def dequeue(self, thread: int):
        h = self.heap
        attempts = 0
        while True:
            attempts += 1
            head = h.load_word(self.head_addr, thread)
            hnext = h.load_word(head + _NEXT, thread)
            if hnext == 0:
                h.flush(self.head_addr, thread)
                h.sfence(thread)
                note_attempts(self, thread, attempts)
                return EMPTY
            if h.pcas_word(self.head_addr, head, hnext, thread):
                item = h.load_word(hnext + _ITEM, thread)
                pending = self.node_to_persist_and_retire[thread]
                if pending is not None:
                    h.flush(pending + _INIT, thread)
                h.flush(self.head_addr, thread)
                h.sfence(thread)
                h.store_word(hnext + _PRED, 0, thread)
                if pending is not None:
                    self.pool.retire(thread, _KIND_NODE, pending)
                h.store_word(head + _INIT, 0, thread)
                self.node_to_persist_and_retire[thread] = head
                note_attempts(self, thread, attempts)
                return item

    def thread_shutdown(self, thread: int) -> None:
        pending = self.node_to_persist_and_retire[thread]
        if pending is None:
            return
        h = self.heap
        h.flush(pending + _INIT, thread)  # the clear was stored at dequeue time
        h.sfence(thread)
        self.pool.retire(thread, _KIND_NODE, pending)
        self.node_to_persist_and_retire[thread] = None

    # ------------------------------------------------------------------

    @classmethod
    def recover(cls, heap, n_threads: int, cfg: QueueConfig) -> "LinkedQueue":
        pool = AllocatorPool.attach(heap, n_threads, cls._kinds(cfg))
        ctl = pool.registry.areas_of(_KIND_CTL)
        if len(ctl) != 1:
            raise RecoveryError("linked queue control area missing")
        head_addr = ctl[0].addr(0)
        slots: Set[int] = {addr for addr, _ in pool.registry.scan(_KIND_NODE)}

        head = heap.peek_word(head_addr)
        if head not in slots:
            raise RecoveryError(f"recovered head {head:#x} is not a node slot")

        flushed = False
        claimed: Set[int] = {head}
        if heap.peek_word(head + _INIT) == 0:
            # empty queue; next must be cleared before the flag is set so a
            # crash inside this recovery is itself recoverable
            heap.store_word(head + _NEXT, 0, 0)
            heap.store_word(head + _INIT, 1, 0)
            tail = head
        else:
            cur = head
            while True:
                nxt = heap.peek_word(cur + _NEXT)
                if nxt == 0:
                    tail = cur
                    break
                if nxt not in slots or nxt in claimed:
                    raise RecoveryError(f"broken next chain at {cur:#x} -> {nxt:#x}")
                if heap.peek_word(nxt + _INIT) == 0:
                    heap.store_word(cur + _NEXT, 0, 0)
                    heap.flush(cur, 0)
                    flushed = True
                    tail = cur
                    break
                claimed.add(nxt)
                cur = nxt
        heap.store_word(tail + _PRED, 0, 0)

        for addr in sorted(slots - claimed):
            if heap.peek_word(addr + _INIT):
                heap.store_word(addr + _INIT, 0, 0)
                heap.flush(addr, 0)
                flushed = True
        if flushed:
            heap.sfence(0)

        pool.rebuild_free_lists(_KIND_NODE, claimed)
        q = cls(heap, pool, n_threads, cfg, head_addr)
        q.tail = VolatileCell(tail)
        return q

    # ------------------------------------------------------------------

    def snapshot_items(self) -> List[int]:
        out = []
        cur = self.heap.peek_word(self.head_addr)
        while True:
            nxt = self.heap.peek_word(cur + _NEXT)
            if nxt == 0:
                return out
            out.append(self.heap.peek_word(nxt + _ITEM))
            cur = nxt

    def live_nodes(self) -> List[dict]:
        nodes = []
        cur = self.heap.peek_word(self.head_addr)
        while cur != 0:
            nodes.append(
                {
                    "addr": cur,
                    "item": self.heap.peek_word(cur + _ITEM),
                    "next": self.heap.peek_word(cur + _NEXT),
                    "pred": self.heap.peek_word(cur + _PRED),
                    "initialized": self.heap.peek_word(cur + _INIT),
                }
            )
            cur = self.heap.peek_word(cur + _NEXT)
        return nodes
