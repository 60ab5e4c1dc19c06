"""Durable queue that recovers from node contents instead of links.

Nodes live in designated areas and carry an enqueue-order ``index`` plus a
``linked`` flag in one cache line; the forward links that speed up normal
operation are volatile and play no part in recovery.  The shared head is a
(pointer, index) pair in one line advanced by a double-width CAS; a dequeue
persists the head line before returning.  An enqueue writes the node's
content, links it, sets ``linked``, flushes the node line, and completes
with a single fence fused into the tail advance.  Recovery keeps every slot
whose ``linked`` flag is set and whose index exceeds the persisted head
index, ordered by index (gaps are abandoned in-flight enqueues).
"""

from __future__ import annotations

from typing import Dict, List, Optional

from ..alloc import AllocatorPool, RecoveryError
from ..sim import VolatileCell
from .base import EMPTY, QueueConfig, check_item, fence_then_tail_cas, note_attempts

_KIND_NODE = "uq.node"
_KIND_CTL = "uq.ctl"
_ITEM = 0
_INDEX = 8
_LINKED = 16
_HEAD_PTR = 0
_HEAD_IDX = 8


class _Wrap:
    """Volatile companion of a node slot: holds the transient forward link."""

    __slots__ = ("addr", "next")

    def __init__(self, addr: int):
        self.addr = addr
        self.next = VolatileCell(None)


class UnlinkedQueue:
    variant = "uq"
    durable = True

    def __init__(self, heap, pool, n_threads: int, cfg: QueueConfig, head_addr: int):
        self.heap = heap
        self.pool = pool
        self.n_threads = n_threads
        self.cfg = cfg
        self.head_addr = head_addr
        self.wrappers: Dict[int, _Wrap] = {}
        self.tail = VolatileCell(None)
        self.node_to_retire: List[Optional[_Wrap]] = [None] * n_threads
        self.max_attempts = [0] * n_threads

    @classmethod
    def _kinds(cls, cfg: QueueConfig):
        return {_KIND_NODE: (64, cfg.area_slots), _KIND_CTL: (64, 1)}

    @classmethod
    def create(cls, heap, n_threads: int, cfg: QueueConfig) -> "UnlinkedQueue":
        pool = AllocatorPool.fresh(heap, n_threads, cls._kinds(cfg))
        with heap.suspend_attribution(0):
            head_addr = pool.alloc(0, _KIND_CTL)
            dummy = pool.alloc(0, _KIND_NODE)  # fresh slot: index 0, linked 0
            q = cls(heap, pool, n_threads, cfg, head_addr)
            heap.pstore(head_addr, dummy.to_bytes(8, "little") + (0).to_bytes(8, "little"), 0)
            heap.flush(head_addr, 0)
            heap.sfence(0)
        wrap = _Wrap(dummy)
        q.wrappers[dummy] = wrap
        q.tail = VolatileCell(wrap)
        return q

    # ------------------------------------------------------------------

    def _read_head(self, thread: int):
        raw = self.heap.pload(self.head_addr, 16, thread)
        return int.from_bytes(raw[:8], "little"), int.from_bytes(raw[8:], "little")

    def enqueue(self, thread: int, value: int) -> None:
        check_item(value)
        h = self.heap
        addr = self.pool.alloc(thread, _KIND_NODE)
        wrap = _Wrap(addr)
        self.wrappers[addr] = wrap
        h.store_word(addr + _ITEM, value, thread)
        h.store_word(addr + _LINKED, 0, thread)
        attempts = 0
        while True:
            attempts += 1
            tail = self.tail.load()
            if tail.next.load() is None:
                tidx = h.load_word(tail.addr + _INDEX, thread)
                h.store_word(addr + _INDEX, tidx + 1, thread)
                if tail.next.cas(None, wrap):
                    h.store_word(addr + _LINKED, 1, thread)
                    h.flush(addr, thread)
                    fence_then_tail_cas(self, thread, self.tail, tail, wrap)
                    note_attempts(self, thread, attempts)
                    return
            nxt = tail.next.load()
            self.tail.cas(tail, nxt)

    def dequeue(self, thread: int):
        h = self.heap
        attempts = 0
        while True:
            attempts += 1
            hptr, hidx = self._read_head(thread)
            wrap = self.wrappers[hptr]
            nxt = wrap.next.load()
            if nxt is None:
                h.flush(self.head_addr, thread)
                h.sfence(thread)
                note_attempts(self, thread, attempts)
                return EMPTY
            nidx = h.load_word(nxt.addr + _INDEX, thread)
            if h.pcas_2words(self.head_addr, (hptr, hidx), (nxt.addr, nidx), thread):
                item = h.load_word(nxt.addr + _ITEM, thread)
                h.flush(self.head_addr, thread)
                h.sfence(thread)
                pending = self.node_to_retire[thread]
                if pending is not None:
                    self.pool.retire(thread, _KIND_NODE, pending.addr)
                self.node_to_retire[thread] = wrap
                note_attempts(self, thread, attempts)
                return item

    def thread_shutdown(self, thread: int) -> None:
        pending = self.node_to_retire[thread]
        if pending is not None:
            self.pool.retire(thread, _KIND_NODE, pending.addr)
            self.node_to_retire[thread] = None

    # ------------------------------------------------------------------

    @classmethod
    def recover(cls, heap, n_threads: int, cfg: QueueConfig) -> "UnlinkedQueue":
        pool = AllocatorPool.attach(heap, n_threads, cls._kinds(cfg))
        ctl = pool.registry.areas_of(_KIND_CTL)
        if len(ctl) != 1:
            raise RecoveryError("unlinked queue control area missing")
        head_addr = ctl[0].addr(0)
        head_index = heap.peek_word(head_addr + _HEAD_IDX)  # pointer half is stale

        kept: List[tuple] = []
        by_index: Dict[int, int] = {}
        flagged = []
        for addr, _ in pool.registry.scan(_KIND_NODE):
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
        for addr in flagged:  # neutralize stale flags before the slots are reissued
            heap.store_word(addr + _LINKED, 0, 0)
            heap.flush(addr, 0)
            flushed = True

        pool.rebuild_free_lists(_KIND_NODE, {addr for _, addr in kept})
        q = cls(heap, pool, n_threads, cfg, head_addr)
        dummy = pool.alloc(0, _KIND_NODE)
        heap.store_word(dummy + _ITEM, 0, 0)
        heap.store_word(dummy + _INDEX, head_index, 0)
        heap.store_word(dummy + _LINKED, 0, 0)
        heap.pstore(head_addr, dummy.to_bytes(8, "little") + head_index.to_bytes(8, "little"), 0)
        heap.flush(head_addr, 0)
        flushed = True

        prev = _Wrap(dummy)
        q.wrappers[dummy] = prev
        for _, addr in kept:
            wrap = _Wrap(addr)
            q.wrappers[addr] = wrap
            prev.next.store(wrap)
            prev = wrap
        q.tail = VolatileCell(prev)
        if flushed:
            heap.sfence(0)
        return q

    # ------------------------------------------------------------------

    def snapshot_items(self) -> List[int]:
        out = []
        hptr = self.heap.peek_word(self.head_addr + _HEAD_PTR)
        wrap = self.wrappers[hptr]
        nxt = wrap.next.peek()
        while nxt is not None:
            out.append(self.heap.peek_word(nxt.addr + _ITEM))
            nxt = nxt.next.peek()
        return out

    def live_nodes(self) -> List[dict]:
        nodes = []
        hptr = self.heap.peek_word(self.head_addr + _HEAD_PTR)
        wrap = self.wrappers[hptr]
        while wrap is not None:
            nodes.append(
                {
                    "addr": wrap.addr,
                    "index": self.heap.peek_word(wrap.addr + _INDEX),
                    "linked": self.heap.peek_word(wrap.addr + _LINKED),
                }
            )
            wrap = wrap.next.peek()
        return nodes
