"""Deterministic cooperative execution of simulated worker threads.

Workers run as greenlets multiplexed onto one OS thread.  Every shared
access (heap operations and volatile atomic cells) passes through
``checkpoint``, which hands control back to the scheduler hub; the hub picks
the next runnable worker by a pluggable policy.  Exactly one worker runs
between checkpoints, so shared accesses are serialized, schedules are
reproducible from a seed, and a crash flag raised at a boundary is observed
before the next access executes.

When no scheduler is active (recovery code, single-threaded tests, or the
benchmark's free-running real threads), ``checkpoint`` is a no-op and the
atomic cells fall back to their internal locks.
"""

from __future__ import annotations

import random
import threading
from typing import Callable, Dict, List, Optional

from greenlet import greenlet

_active: Optional["Scheduler"] = None


class SimError(Exception):
    pass


class Interrupted(Exception):
    """Base for control-flow unwinds injected at a checkpoint."""


class Abandoned(Interrupted):
    """The crash flag was observed: abandon the in-flight operation."""


class Stopped(Interrupted):
    """The scheduler was asked to wind the run down."""


def checkpoint() -> None:
    sched = _active
    if sched is not None:
        sched._worker_checkpoint()


def active_scheduler() -> Optional["Scheduler"]:
    return _active


class VolatileCell:
    """An atomic word of volatile shared memory (pointer or integer).

    load/store/cas are scheduler checkpoints, mirroring the granularity of
    the heap's persistent accesses; the lock only matters in free-running
    mode.
    """

    __slots__ = ("_value", "_lock")

    def __init__(self, value=None):
        self._value = value
        self._lock = threading.Lock()

    def load(self):
        checkpoint()
        with self._lock:
            return self._value

    def store(self, value) -> None:
        checkpoint()
        with self._lock:
            self._value = value

    def cas(self, expected, new) -> bool:
        checkpoint()
        return self._cas_raw(expected, new)

    def _cas_raw(self, expected, new) -> bool:
        with self._lock:
            if self._value is expected or self._value == expected:
                self._value = new
                return True
            return False

    def peek(self):
        """Read without a checkpoint (quiescent inspection only)."""
        return self._value


def fence_and_cas(heap, thread: int, cell: VolatileCell, expected, new) -> bool:
    """Store fence absorbed into an immediately following CAS.

    Models the x86 idiom where the CAS's lock semantics complete earlier
    flushes: the pin and the CAS happen at one access boundary, and the pair
    is accounted as a single blocking persist.
    """
    checkpoint()
    with heap._lock:
        heap._sfence_locked(thread)
    return cell._cas_raw(expected, new)


# ----------------------------------------------------------------------
# scheduling policies


class SeededPolicy:
    def __init__(self, seed: int):
        self._rng = random.Random(seed)

    def choose(self, runnable: List[int], step: int) -> int:
        return runnable[self._rng.randrange(len(runnable))]


class RoundRobinPolicy:
    def __init__(self):
        self._last = -1

    def choose(self, runnable: List[int], step: int) -> int:
        for tid in runnable:
            if tid > self._last:
                self._last = tid
                return tid
        self._last = runnable[0]
        return runnable[0]


class ScriptedPolicy:
    """Follow an explicit tid script, then fall back to round-robin."""

    def __init__(self, script: List[int]):
        self._script = list(script)
        self._pos = 0
        self._fallback = RoundRobinPolicy()

    def choose(self, runnable: List[int], step: int) -> int:
        while self._pos < len(self._script):
            tid = self._script[self._pos]
            self._pos += 1
            if tid in runnable:
                return tid
        return self._fallback.choose(runnable, step)


# ----------------------------------------------------------------------
# the scheduler


class _Worker:
    __slots__ = ("tid", "fn", "glet", "state", "checkpoints", "pause_at", "error")

    def __init__(self, tid, fn):
        self.tid = tid
        self.fn = fn
        self.glet: Optional[greenlet] = None
        self.state = "new"  # new | parked | running | done | crashed
        self.checkpoints = 0
        self.pause_at: Optional[int] = None
        self.error: Optional[BaseException] = None


class Scheduler:
    """Lockstep scheduler: grants one shared access at a time.

    ``run`` drives workers until they all finish, a crash triggers, a stop
    condition holds, or the step budget runs out; the return value names
    which.  ``crash_at`` counts grants: a value of k crashes before the
    (k+1)-th shared access executes.
    """

    def __init__(
        self,
        policy=None,
        crash_at: Optional[int] = None,
        max_steps: Optional[int] = None,
        on_step: Optional[Callable[[int], None]] = None,
    ):
        self.policy = policy or RoundRobinPolicy()
        self.crash_at = crash_at
        self.max_steps = max_steps
        self.on_step = on_step
        self.step_count = 0
        self.crashed = False
        self._stopping = False
        self._workers: Dict[int, _Worker] = {}
        self._paused: set = set()
        self._hub: Optional[greenlet] = None
        self.current: Optional[int] = None

    # -- worker side ---------------------------------------------------

    def _worker_checkpoint(self) -> None:
        w = self._workers[self.current]
        w.checkpoints += 1
        w.state = "parked"
        self._hub.switch()
        if self.crashed:
            raise Abandoned()
        if self._stopping:
            raise Stopped()
        w.state = "running"

    # -- controller side -------------------------------------------------

    def spawn(self, tid: int, fn: Callable[[], None]) -> None:
        if tid in self._workers:
            raise SimError(f"duplicate worker tid {tid}")
        self._workers[tid] = _Worker(tid, fn)

    def pause(self, tid: int) -> None:
        self._paused.add(tid)

    def pause_after(self, tid: int, checkpoints: int) -> None:
        """Pause a worker once it has passed its n-th checkpoint."""
        self._workers[tid].pause_at = checkpoints

    def resume(self, tid: int) -> None:
        self._paused.discard(tid)

    def trigger_crash(self) -> None:
        self.crashed = True

    @property
    def stopping(self) -> bool:
        return self._stopping

    def _runnable(self) -> List[int]:
        out = []
        for tid in sorted(self._workers):
            w = self._workers[tid]
            if w.state in ("new", "parked") and tid not in self._paused:
                if w.pause_at is not None and w.checkpoints >= w.pause_at:
                    self._paused.add(tid)
                    continue
                out.append(tid)
        return out

    def _switch_into(self, w: _Worker) -> None:
        self.current = w.tid
        if w.glet is None:
            scheduler = self

            def body():
                try:
                    if not (scheduler.crashed or scheduler._stopping):
                        w.fn()
                    w.state = "done"
                except Abandoned:
                    w.state = "crashed"
                except Stopped:
                    w.state = "done"
                except BaseException as exc:  # surfaced by run()
                    w.state = "done"
                    w.error = exc

            w.glet = greenlet(body)
        w.glet.switch()
        self.current = None

    def _drain_all(self) -> None:
        # wake every live worker so it observes the crash/stop flag
        for tid in sorted(self._workers):
            w = self._workers[tid]
            if w.state in ("new", "parked"):
                self._switch_into(w)

    def run(self, until: Optional[Callable[[], bool]] = None) -> str:
        global _active
        if _active is not None:
            raise SimError("a scheduler is already active")
        self._hub = greenlet.getcurrent()
        _active = self
        try:
            while True:
                for w in self._workers.values():
                    if w.error is not None:
                        raise w.error
                if self.crashed:
                    self._drain_all()
                    return "crashed"
                if self._stopping or (until is not None and until()):
                    self._stopping = True
                    self._drain_all()
                    return "stopped"
                runnable = self._runnable()
                if not runnable:
                    if any(w.state in ("new", "parked") for w in self._workers.values()):
                        return "stalled"  # everyone left is paused
                    return "completed"
                if self.crash_at is not None and self.step_count >= self.crash_at:
                    self.crashed = True
                    continue
                if self.max_steps is not None and self.step_count >= self.max_steps:
                    self._stopping = True
                    self._drain_all()
                    return "budget"
                tid = self.policy.choose(runnable, self.step_count)
                self.step_count += 1
                self._switch_into(self._workers[tid])
                if self.on_step is not None:
                    self.on_step(self.step_count)
        finally:
            _active = None

    def statuses(self) -> Dict[int, str]:
        return {tid: w.state for tid, w in self._workers.items()}
