"""Durable lock-free FIFO queues over a simulated persistent-memory model.

The package bundles: a crash-image-accurate persistent heap simulator
(``pmem``), a deterministic cooperative scheduler (``sim``), an epoch-based
persistent allocator (``alloc``), six queue variants (``queues``), a
durable-linearizability checker (``checker``), a crash-injection harness
(``harness``), and a benchmark driver (``bench``).
"""

from .alloc import AllocatorPool, RecoveryError
from .checker import Event, Verdict, check, check_oracle, structural_audit
from .harness import TrialConfig, TrialResult, run_audit, run_exhaustive_small, run_progress_monitor, run_trial
from .pmem import LINE_SIZE, CrashImage, OpAudit, PersistentHeap
from .queues import (
    DURABLE_VARIANTS,
    EMPTY,
    POST_FLUSH_FREE_VARIANTS,
    SINGLE_FENCE_VARIANTS,
    VARIANTS,
    QueueConfig,
    create_queue,
    recover_queue,
)

__version__ = "0.1.0"

__all__ = [
    "AllocatorPool",
    "CrashImage",
    "DURABLE_VARIANTS",
    "EMPTY",
    "Event",
    "LINE_SIZE",
    "OpAudit",
    "PersistentHeap",
    "POST_FLUSH_FREE_VARIANTS",
    "QueueConfig",
    "RecoveryError",
    "SINGLE_FENCE_VARIANTS",
    "TrialConfig",
    "TrialResult",
    "VARIANTS",
    "Verdict",
    "check",
    "check_oracle",
    "create_queue",
    "recover_queue",
    "run_audit",
    "run_exhaustive_small",
    "run_progress_monitor",
    "run_trial",
    "structural_audit",
]
