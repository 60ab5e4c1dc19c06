"""The six queue variants behind one interface."""

from __future__ import annotations

from typing import Dict, Type

from .base import EMPTY, MUTANTS, QueueConfig, StructuralViolation
from .izr import PersistEachAccessQueue
from .lq import LinkedQueue
from .msq import MSQueue
from .olq import OptLinkedQueue
from .ouq import OptUnlinkedQueue
from .uq import UnlinkedQueue

VARIANTS: Dict[str, type] = {
    "msq": MSQueue,
    "izr": PersistEachAccessQueue,
    "uq": UnlinkedQueue,
    "lq": LinkedQueue,
    "ouq": OptUnlinkedQueue,
    "olq": OptLinkedQueue,
}

DURABLE_VARIANTS = ("izr", "uq", "lq", "ouq", "olq")
SINGLE_FENCE_VARIANTS = ("uq", "lq", "ouq", "olq")
POST_FLUSH_FREE_VARIANTS = ("ouq", "olq")


def create_queue(variant: str, heap, n_threads: int, cfg: QueueConfig = QueueConfig()):
    return VARIANTS[variant].create(heap, n_threads, cfg)


def recover_queue(variant: str, heap, n_threads: int, cfg: QueueConfig = QueueConfig()):
    cls = VARIANTS[variant]
    if not cls.durable:
        raise ValueError(f"variant {variant!r} has no recovery procedure")
    return cls.recover(heap, n_threads, cfg)


__all__ = [
    "EMPTY",
    "MUTANTS",
    "QueueConfig",
    "StructuralViolation",
    "VARIANTS",
    "DURABLE_VARIANTS",
    "SINGLE_FENCE_VARIANTS",
    "POST_FLUSH_FREE_VARIANTS",
    "create_queue",
    "recover_queue",
    "MSQueue",
    "PersistEachAccessQueue",
    "UnlinkedQueue",
    "LinkedQueue",
    "OptUnlinkedQueue",
    "OptLinkedQueue",
]
