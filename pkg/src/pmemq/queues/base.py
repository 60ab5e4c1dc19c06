"""Shared interface bits for the queue variants.

Every variant exposes ``enqueue(thread, value)`` and ``dequeue(thread)``
(returning ``EMPTY`` when nothing is there), a classmethod ``create`` that
lays the queue out on a fresh heap, and -- for the durable variants -- a
classmethod ``recover`` that rebuilds a working queue from a crash image
heap.  Items are nonzero unsigned words so recovery scans can treat zero as
unoccupied.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import FrozenSet

from .. import sim
from ..pmem import PersistentHeap

MAX_ITEM = (1 << 63) - 1


class _Empty:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "EMPTY"

    def __bool__(self):
        return False


EMPTY = _Empty()

#: recognized single-edit fault injections, used by the mutation-sensitivity suite
MUTANTS = frozenset(
    {
        "skip_enqueue_fence",
        "linked_before_item",
        "skip_suffix_flush",
        "skip_valid_bit_check",
    }
)


@dataclass(frozen=True)
class QueueConfig:
    """Build-time knobs shared by all variants.

    absorb_fence_into_cas keeps the fence that immediately precedes a tail
    CAS fused with that CAS (the x86 elimination); turning it off issues the
    fence as its own access boundary.  Either way the pair counts as one
    blocking persist.
    """

    absorb_fence_into_cas: bool = True
    area_slots: int = 128
    mutants: FrozenSet[str] = frozenset()

    def __post_init__(self):
        unknown = set(self.mutants) - MUTANTS
        if unknown:
            raise ValueError(f"unknown mutants: {sorted(unknown)}")

    def has(self, mutant: str) -> bool:
        return mutant in self.mutants


def check_item(value: int) -> None:
    if not isinstance(value, int) or not 0 < value <= MAX_ITEM:
        raise ValueError(f"items must be nonzero unsigned words, got {value!r}")


def fence_then_tail_cas(queue, thread: int, cell: sim.VolatileCell, expected, new) -> bool:
    """The enqueue-completing fence, fused with the tail advance when configured."""
    if queue.cfg.absorb_fence_into_cas:
        return sim.fence_and_cas(queue.heap, thread, cell, expected, new)
    queue.heap.sfence(thread)
    return cell.cas(expected, new)


def note_attempts(queue, thread: int, attempts: int) -> None:
    """Track the worst loop-iteration count per thread (progress diagnostics)."""
    if attempts > queue.max_attempts[thread]:
        queue.max_attempts[thread] = attempts


class StructuralViolation(AssertionError):
    """A quiescent structure walk found a broken variant invariant."""
