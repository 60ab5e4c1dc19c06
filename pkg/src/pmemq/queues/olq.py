"""Durable linked queue with zero accesses to flushed cache lines.

Nodes are split into a persistent record (item, backward link, index -- the
index written last so a persisted index vouches for the rest of the line)
and a volatile companion carrying the forward link.  An enqueue links, advances
the tail, flushes the backward suffix of not-yet-persistent records, records
the new node in one of two per-thread last-enqueue cells with non-temporal
stores (a valid bit spliced into both the pointer's low bit and the index's
top bit guards against the pair tearing), and issues its single fence.
Dequeues persist a per-thread head index non-temporally, exactly like the
unlinked optimized variant.  Recovery walks backward from the best valid
last-enqueue record through strictly consecutive indices down to the head
index, falling back to older records when it meets stale data.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Tuple

from ..alloc import AllocatorPool, RecoveryError
from ..sim import VolatileCell
from .base import EMPTY, QueueConfig, check_item, note_attempts

_KIND_PERS = "olq.pers"
_KIND_CTL = "olq.ctl"
_ITEM = 0
_PRED = 8
_INDEX = 16

# per-thread line: head index plus two (pointer, index) last-enqueue cells
_HEAD_IDX = 0
_CELL = (8, 24)  # byte offset of each cell's pointer word; index word follows
_TOP_BIT = 1 << 63


class _Vol:
    __slots__ = ("item", "index", "next", "pred", "paddr")

    def __init__(self, item: int, index: int, paddr: int):
        self.item = item
        self.index = index
        self.next = VolatileCell(None)
        self.pred = VolatileCell(None)
        self.paddr = paddr


class OptLinkedQueue:
    variant = "olq"
    durable = True

    def __init__(self, heap, pool, n_threads: int, cfg: QueueConfig, local_base: int):
        self.heap = heap
        self.pool = pool
        self.n_threads = n_threads
        self.cfg = cfg
        self._local_base = local_base
        self.head = VolatileCell(None)
        self.tail = VolatileCell(None)
        self.node_to_retire: List[Optional[_Vol]] = [None] * n_threads
        self.last_enqueues_index: List[int] = [0] * n_threads
        self.valid_bit: List[int] = [1] * n_threads
        self.max_attempts = [0] * n_threads

    def _local(self, thread: int) -> int:
        return self._local_base + 64 * thread

    @classmethod
    def _kinds(cls, cfg: QueueConfig, n_threads: int):
        return {_KIND_PERS: (64, cfg.area_slots), _KIND_CTL: (64, n_threads)}

    @classmethod
    def create(cls, heap, n_threads: int, cfg: QueueConfig) -> "OptLinkedQueue":
        pool = AllocatorPool.fresh(heap, n_threads, cls._kinds(cfg, n_threads))
        with heap.suspend_attribution(0):
            ctl = pool.registry.create_area(_KIND_CTL, 64, n_threads, 0, 0)
            dummy_p = pool.alloc(0, _KIND_PERS)
        q = cls(heap, pool, n_threads, cfg, ctl.base)
        dummy = _Vol(0, 0, dummy_p)
        q.head = VolatileCell(dummy)
        q.tail = VolatileCell(dummy)
        return q

    # ------------------------------------------------------------------

    def _flush_suffix(self, vol: _Vol, thread: int) -> None:
        h = self.heap
        node = vol
        while True:
            pred = node.pred.load()
            if pred is None:
                return
            h.flush(node.paddr, thread)
            node = pred

    def _record_last_enqueue(self, vol: _Vol, thread: int) -> None:
        h = self.heap
        cell = self.last_enqueues_index[thread]
        bit = self.valid_bit[thread]
        base = self._local(thread) + _CELL[cell]
        h.nt_store_word(base, vol.paddr | bit, thread)
        h.nt_store_word(base + 8, vol.index | (bit << 63), thread)
        self.valid_bit[thread] ^= cell  # flips after the second cell
        self.last_enqueues_index[thread] ^= 1

    def enqueue(self, thread: int, value: int) -> None:
        check_item(value)
        h = self.heap
        vol = _Vol(value, 0, 0)
        paddr = self.pool.alloc(thread, _KIND_PERS)
        vol.paddr = paddr
        h.store_word(paddr + _ITEM, value, thread)
        attempts = 0
        while True:
            attempts += 1
            tail = self.tail.load()
            if tail.next.load() is None:
                vol.pred.store(tail)
                vol.index = tail.index + 1
                h.store_word(paddr + _PRED, tail.paddr, thread)
                h.store_word(paddr + _INDEX, vol.index, thread)  # index last
                if tail.next.cas(None, vol):
                    self.tail.cas(tail, vol)
                    self._flush_suffix(vol, thread)
                    self._record_last_enqueue(vol, thread)
                    h.sfence(thread)
                    vol.pred.store(None)
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
                h.nt_store_word(self._local(thread) + _HEAD_IDX, head.index, thread)
                h.sfence(thread)
                note_attempts(self, thread, attempts)
                return EMPTY
            if self.head.cas(head, hnext):
                item = hnext.item
                h.nt_store_word(self._local(thread) + _HEAD_IDX, hnext.index, thread)
                h.sfence(thread)
                hnext.pred.store(None)
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
    def recover(cls, heap, n_threads: int, cfg: QueueConfig) -> "OptLinkedQueue":
        pool = AllocatorPool.attach(heap, n_threads, cls._kinds(cfg, n_threads))
        ctl_areas = pool.registry.areas_of(_KIND_CTL)
        if not ctl_areas:
            raise RecoveryError("per-thread local data area missing")
        if ctl_areas[0].slot_count < n_threads:
            raise RecoveryError("recovered local data area is smaller than the thread count")

        local_lines: List[int] = [addr for area in ctl_areas for addr in area.slots()]
        head_index = max(heap.peek_word(addr + _HEAD_IDX) for addr in local_lines)

        slots: Dict[int, Tuple[int, int, int]] = {}
        for addr, _ in pool.registry.scan(_KIND_PERS):
            slots[addr] = (
                heap.peek_word(addr + _ITEM),
                heap.peek_word(addr + _PRED),
                heap.peek_word(addr + _INDEX),
            )

        candidates = []
        for pos, line in enumerate(local_lines):
            for cell in (0, 1):
                raw_ptr = heap.peek_word(line + _CELL[cell])
                raw_idx = heap.peek_word(line + _CELL[cell] + 8)
                ptr_bit = raw_ptr & 1
                idx_bit = raw_idx >> 63
                ptr = raw_ptr & ~1
                idx = raw_idx & ~_TOP_BIT
                if ptr_bit != idx_bit and not cfg.has("skip_valid_bit_check"):
                    continue
                if ptr == 0 or idx <= head_index:
                    continue
                candidates.append((idx, pos, cell, ptr, line))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

        winner: Optional[Tuple[int, int]] = None  # (local line, cell)
        chain: List[int] = []
        for idx, pos, cell, ptr, line in candidates:
            if ptr not in slots or slots[ptr][2] != idx:
                continue  # stale record
            walk = [ptr]
            cur, cur_idx, ok = ptr, idx, True
            while cur_idx > head_index + 1:
                pred = slots[cur][1]
                if pred not in slots or slots[pred][2] != cur_idx - 1:
                    ok = False  # nonconsecutive: a stale node, try the next candidate
                    break
                walk.append(pred)
                cur, cur_idx = pred, cur_idx - 1
            if ok:
                winner = (line, cell)
                chain = list(reversed(walk))
                break

        claimed = set(chain)
        flushed = False
        for addr, (_, _, index) in slots.items():
            if addr in claimed:
                continue
            if index > head_index:  # an in-flight enqueue's record: wipe its stale index
                heap.store_word(addr + _INDEX, 0, 0)
                heap.flush(addr, 0)
                flushed = True

        pool.rebuild_free_lists(_KIND_PERS, claimed)
        q = cls(heap, pool, n_threads, cfg, ctl_areas[0].base)
        dummy_p = pool.alloc(0, _KIND_PERS)
        heap.store_word(dummy_p + _INDEX, head_index, 0)
        dummy = _Vol(0, head_index, dummy_p)
        prev = dummy
        vols = [dummy]
        for addr in chain:
            vol = _Vol(slots[addr][0], slots[addr][2], addr)
            prev.next.store(vol)
            vol.pred.store(prev)
            vols.append(vol)
            prev = vol
        vols[-1].pred.store(None)  # the recovered chain is fully persistent
        dummy.pred.store(None)
        q.head = VolatileCell(dummy)
        q.tail = VolatileCell(vols[-1])

        for pos, line in enumerate(local_lines):
            if winner is not None and line == winner[0]:
                wcell = winner[1]
                other = 1 - wcell
                bit = heap.peek_word(line + _CELL[wcell]) & 1
                heap.nt_store_word(line + _CELL[other], 0, 0)
                heap.nt_store_word(line + _CELL[other] + 8, 0, 0)
                if pos < n_threads:
                    q.last_enqueues_index[pos] = other
                    q.valid_bit[pos] = bit ^ (1 if other == 0 else 0)
            else:
                for cell in (0, 1):
                    heap.nt_store_word(line + _CELL[cell], 0, 0)
                    heap.nt_store_word(line + _CELL[cell] + 8, 0, 0)
                if pos < n_threads:
                    q.last_enqueues_index[pos] = 0
                    q.valid_bit[pos] = 1
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
                    "persistent_pred": self.heap.peek_word(node.paddr + _PRED),
                }
            )
            node = node.next.peek()
        return nodes
