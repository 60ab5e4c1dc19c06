"""Volatile lock-free FIFO queue (the non-durable baseline).

A singly-linked list with head and tail pointers; the head points at a
dummy node whose successor holds the oldest item.  Nothing touches the
persistent heap, so the variant reports zero fences and has no recovery.
"""

from __future__ import annotations

from typing import List, Optional

from ..sim import VolatileCell
from .base import EMPTY, QueueConfig, check_item, note_attempts


class _Node:
    __slots__ = ("value", "next")

    def __init__(self, value: int):
        self.value = value
        self.next = VolatileCell(None)


class MSQueue:
    variant = "msq"
    durable = False

    def __init__(self, heap, pool, n_threads: int, cfg: QueueConfig):
        self.heap = heap
        self.pool = pool
        self.n_threads = n_threads
        self.cfg = cfg
        self.max_attempts = [0] * n_threads
        dummy = _Node(0)
        self.head = VolatileCell(dummy)
        self.tail = VolatileCell(dummy)

    @classmethod
    def create(cls, heap, n_threads: int, cfg: QueueConfig) -> "MSQueue":
        from ..alloc import AllocatorPool

        pool = AllocatorPool.fresh(heap, n_threads, {})
        return cls(heap, pool, n_threads, cfg)

    def enqueue(self, thread: int, value: int) -> None:
        check_item(value)
        node = _Node(value)
        attempts = 0
        while True:
            attempts += 1
            tail = self.tail.load()
            if tail.next.load() is None:
                if tail.next.cas(None, node):
                    self.tail.cas(tail, node)
                    note_attempts(self, thread, attempts)
                    return
            nxt = tail.next.load()
            self.tail.cas(tail, nxt)

    def dequeue(self, thread: int):
        attempts = 0
        while True:
            attempts += 1
            head = self.head.load()
            nxt = head.next.load()
            if nxt is None:
                note_attempts(self, thread, attempts)
                return EMPTY
            if self.head.cas(head, nxt):
                note_attempts(self, thread, attempts)
                return nxt.value

    def thread_shutdown(self, thread: int) -> None:
        pass

    def snapshot_items(self) -> List[int]:
        out = []
        node = self.head.peek().next.peek()
        while node is not None:
            out.append(node.value)
            node = node.next.peek()
        return out
