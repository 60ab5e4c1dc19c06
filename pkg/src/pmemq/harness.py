"""Seeded crash-injection trials over the simulated heap.

A trial runs concurrent randomized workers against one queue variant under
the deterministic cooperative scheduler, raises a crash flag at a chosen
access boundary (workers abandon their in-flight operation there),
materializes a crash image, recovers single-threaded, continues with fresh
worker identities, and finally hands the crash-segmented history to the
durable-linearizability checker.  The module also hosts the exhaustive
small-trial sweep (every crash point x every image the model permits), the
per-operation fence/post-flush audits, and the lock-freedom progress
monitor.
"""

from __future__ import annotations

import argparse
import os
import random
import statistics
import sys
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from . import checker as chk
from . import pmem, sim
from .alloc import RecoveryError
from .checker import CRASH, DEQ, ENQ, Event, Verdict, check, structural_audit
from .queues import DURABLE_VARIANTS, EMPTY, VARIANTS, QueueConfig, create_queue, recover_queue

# rough shared-access count per queue operation, used to spread crash points
_STEP_FACTOR = {"msq": 8, "uq": 16, "lq": 16, "ouq": 14, "olq": 18, "izr": 45}

_GEN_STRIDE = 1000  # history thread id = generation * stride + worker slot


class HarnessError(Exception):
    pass


@dataclass(frozen=True)
class TrialConfig:
    variant: str
    threads: int = 3
    ops_per_thread: int = 6
    crash_count: int = 1
    image_selector: str = "seeded"  # minimal | maximal | seeded | exhaustive
    selector_seed: int = 0
    evict_probability: float = 0.0
    scheduler_seed: int = 0
    value_base: Optional[int] = None
    post_crash_ops: int = 0
    heap_capacity: int = 1 << 21
    area_slots: int = 96
    absorb_fence_into_cas: bool = True
    mutants: frozenset = frozenset()
    checker_budget: int = 500_000

    def queue_config(self) -> QueueConfig:
        return QueueConfig(
            absorb_fence_into_cas=self.absorb_fence_into_cas,
            area_slots=self.area_slots,
            mutants=self.mutants,
        )

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise HarnessError(f"unknown variant {self.variant!r}")
        if self.crash_count and self.variant not in DURABLE_VARIANTS:
            raise HarnessError(f"variant {self.variant!r} cannot take crashes (no recovery)")
        if not 0 <= self.crash_count <= 3:
            raise HarnessError("crash_count must be within 0..3")
        if self.image_selector not in ("minimal", "maximal", "seeded", "exhaustive"):
            raise HarnessError(f"unknown image selector {self.image_selector!r}")


@dataclass
class TrialResult:
    config: TrialConfig
    verdict: Verdict
    history: List[Event]
    audits: List[pmem.OpAudit]
    image_digests: List[str] = field(default_factory=list)
    crash_steps: List[Optional[int]] = field(default_factory=list)
    needs_retry: bool = False

    @property
    def ok(self) -> bool:
        return self.verdict.ok is True

    def audit_summary(self) -> Dict[str, float]:
        if not self.audits:
            return {"max_sfence": 0, "mean_sfence": 0.0, "post_flush": 0}
        fences = [a.sfence_count for a in self.audits]
        return {
            "max_sfence": max(fences),
            "mean_sfence": statistics.fmean(fences),
            "post_flush": sum(a.post_flush_access_count for a in self.audits),
        }


class Recorder:
    """Seq-stamped event log; single-writer under the cooperative scheduler."""

    def __init__(self):
        self.events: List[Event] = []
        self._seq = 0

    def _stamp(self) -> int:
        self._seq += 1
        return self._seq

    def invoke(self, thread: int, op: str, value=None) -> None:
        self.events.append(Event(self._stamp(), thread, chk.INV, op, value))

    def ret(self, thread: int, op: str, value=None) -> None:
        self.events.append(Event(self._stamp(), thread, chk.RET, op, value))

    def crash(self) -> None:
        self.events.append(Event(self._stamp(), None, CRASH))

    def fork(self) -> "Recorder":
        clone = Recorder()
        clone.events = list(self.events)
        clone._seq = self._seq
        return clone


class OpCounter:
    """Counting stand-in for Recorder where full histories are not needed."""

    def __init__(self):
        self.completed: Dict[int, int] = {}

    def invoke(self, thread, op, value=None):
        pass

    def ret(self, thread, op, value=None):
        self.completed[thread] = self.completed.get(thread, 0) + 1

    def total(self, exclude: Optional[int] = None) -> int:
        return sum(v for t, v in self.completed.items() if t != exclude)


# ----------------------------------------------------------------------
# programs and worker bodies


def _value(cfg: TrialConfig, gen: int, slot: int, k: int) -> int:
    base = cfg.value_base if cfg.value_base is not None else 1_000_000
    return (gen * 64 + slot + 1) * base + k


def _mixed_program(cfg: TrialConfig, gen: int, slot: int, n_ops: int) -> List[Tuple[str, Optional[int]]]:
    rng = random.Random(cfg.scheduler_seed * 1_000_003 + gen * 101 + slot)
    prog: List[Tuple[str, Optional[int]]] = []
    for k in range(n_ops):
        if rng.random() < 0.5:
            prog.append(("E", _value(cfg, gen, slot, k + 1)))
        else:
            prog.append(("D", None))
    return prog


def _worker_body(queue, recorder, scheduler, slot: int, hist_tid: int, program, audits, drain_first: bool = False, drain_last: bool = False):
    heap, pool = queue.heap, queue.pool

    def one_op(kind: str, value) -> object:
        pool.epochs.enter(slot)
        heap.begin_op(slot, "enq" if kind == "E" else "deq")
        try:
            if kind == "E":
                queue.enqueue(slot, value)
                result = None
            else:
                result = queue.dequeue(slot)
        finally:
            audit = heap.end_op(slot)
            pool.epochs.exit(slot)
        recorder.ret(hist_tid, ENQ if kind == "E" else DEQ, result)
        if audits is not None:
            audits.append(audit)
        return result

    def drain() -> None:
        guard = 0
        while True:
            guard += 1
            if guard > 1_000_000:
                raise HarnessError("drain did not reach EMPTY")
            recorder.invoke(hist_tid, DEQ, None)
            if one_op("D", None) is EMPTY:
                return

    if drain_first:
        drain()
    for kind, value in program:
        if scheduler is not None and (scheduler.crashed or scheduler.stopping):
            break
        recorder.invoke(hist_tid, ENQ if kind == "E" else DEQ, value)
        one_op(kind, value)
    if drain_last:
        drain()
    queue.thread_shutdown(slot)


def _endless_body(queue, counter, slot: int, value_iter):
    heap, pool = queue.heap, queue.pool
    rng = random.Random(slot * 7919 + 17)
    while True:
        kind = "E" if rng.random() < 0.5 else "D"
        counter.invoke(slot, ENQ if kind == "E" else DEQ, None)
        pool.epochs.enter(slot)
        heap.begin_op(slot, kind)
        try:
            if kind == "E":
                queue.enqueue(slot, next(value_iter))
            else:
                queue.dequeue(slot)
        finally:
            heap.end_op(slot)
            pool.epochs.exit(slot)
        counter.ret(slot, ENQ if kind == "E" else DEQ, None)


def _evict_hook(cfg: TrialConfig, heap, gen: int) -> Optional[Callable[[int], None]]:
    if cfg.evict_probability <= 0:
        return None
    rng = random.Random(cfg.scheduler_seed * 31 + cfg.selector_seed * 7 + gen)

    def hook(step: int) -> None:
        if rng.random() < cfg.evict_probability:
            lines = heap.touched_lines()
            if lines:
                heap.evict(lines[rng.randrange(len(lines))])

    return hook


def _run_segment(
    cfg,
    queue,
    recorder,
    audits,
    gen: int,
    programs,
    crash_at: Optional[int],
    drain_first: bool = False,
    drain_last: bool = False,
) -> sim.Scheduler:
    sched = sim.Scheduler(
        policy=sim.SeededPolicy(cfg.scheduler_seed + gen * 7717),
        crash_at=crash_at,
        on_step=_evict_hook(cfg, queue.heap, gen),
    )
    for slot, program in enumerate(programs):
        hist_tid = gen * _GEN_STRIDE + slot
        sched.spawn(
            slot,
            lambda q=queue, s=slot, t=hist_tid, p=program: _worker_body(
                q, recorder, sched, s, t, p, audits, drain_first=drain_first, drain_last=drain_last
            ),
        )
    sched.run()
    return sched


def _sequential_drain(queue, recorder, gen: int, slot: int = 0) -> None:
    """Drain with direct calls (single recovery-side thread, no scheduler)."""
    hist_tid = gen * _GEN_STRIDE + slot
    heap, pool = queue.heap, queue.pool
    guard = 0
    while True:
        guard += 1
        if guard > 1_000_000:
            raise HarnessError("drain did not reach EMPTY")
        recorder.invoke(hist_tid, DEQ, None)
        pool.epochs.enter(slot)
        heap.begin_op(slot, "deq")
        try:
            result = queue.dequeue(slot)
        finally:
            heap.end_op(slot)
            pool.epochs.exit(slot)
        recorder.ret(hist_tid, DEQ, result)
        if result is EMPTY:
            break
    queue.thread_shutdown(slot)


# ----------------------------------------------------------------------
# single trials


def _pending_enqueue_values(events: Sequence[Event]) -> set:
    open_enq: Dict[int, int] = {}
    pending = set()
    for ev in events:
        if ev.kind == chk.INV and ev.op == ENQ:
            open_enq[ev.thread] = ev.value
        elif ev.kind == chk.RET and ev.op == ENQ:
            open_enq.pop(ev.thread, None)
        elif ev.kind == CRASH:
            pending.update(open_enq.values())
            open_enq.clear()
    pending.update(open_enq.values())
    return pending


def _is_subsequence(sub: Sequence, seq: Sequence) -> bool:
    it = iter(seq)
    return all(any(x == y for y in it) for x in sub)


def run_trial(cfg: TrialConfig) -> TrialResult:
    """One seeded crash-injection trial; deterministic in its config."""
    cfg.validate()
    if cfg.image_selector == "exhaustive":
        return _run_trial_exhaustive(cfg)
    rng = random.Random(cfg.scheduler_seed ^ 0x5EED)
    heap = pmem.PersistentHeap(cfg.heap_capacity)
    queue = create_queue(cfg.variant, heap, cfg.threads, cfg.queue_config())
    recorder = Recorder()
    audits: List[pmem.OpAudit] = []
    digests: List[str] = []
    crash_steps: List[Optional[int]] = []

    gen = 0
    remaining = cfg.crash_count
    while True:
        final = remaining == 0
        n_ops = cfg.ops_per_thread if gen == 0 else cfg.post_crash_ops
        programs = [_mixed_program(cfg, gen, slot, n_ops) for slot in range(cfg.threads)]
        crash_at = None
        if not final:
            horizon = max(2, cfg.threads * max(1, n_ops + (4 if gen else 0)) * _STEP_FACTOR[cfg.variant])
            crash_at = rng.randrange(1, horizon)
        # post-crash generations drain what survived before running more ops
        _run_segment(
            cfg, queue, recorder, audits, gen, programs, crash_at,
            drain_first=gen > 0, drain_last=final and (gen == 0 or n_ops > 0),
        )
        if final:
            break
        crash_steps.append(crash_at)
        recorder.crash()
        selector = pmem.make_selector(
            {"minimal": "minimal", "maximal": "maximal", "seeded": "seeded"}[cfg.image_selector],
            seed=cfg.selector_seed + gen * 7919,
        )
        snapshot = queue.snapshot_items() if cfg.image_selector == "maximal" else None
        image = heap.crash(selector)
        digests.append(image.digest())
        heap = pmem.PersistentHeap.from_image(image)
        queue = recover_queue(cfg.variant, heap, cfg.threads, cfg.queue_config())
        if snapshot is not None:
            recovered = queue.snapshot_items()
            missing = [v for v in snapshot if v not in recovered]
            allowed = _pending_enqueue_values(recorder.events)
            if not _is_subsequence(recovered, snapshot) or any(v not in allowed for v in missing):
                raise HarnessError(
                    f"maximal-image recovery diverged from the coherent snapshot: "
                    f"snapshot={snapshot} recovered={recovered}"
                )
        gen += 1
        remaining -= 1

    verdict = check(recorder.events, state_budget=cfg.checker_budget)
    return TrialResult(
        config=cfg,
        verdict=verdict,
        history=recorder.events,
        audits=audits,
        image_digests=digests,
        crash_steps=crash_steps,
        needs_retry=verdict.ok is None,
    )


# ----------------------------------------------------------------------
# exhaustive small trials


@dataclass
class ViolationRecord:
    config: TrialConfig
    crash_step: int
    image: pmem.CrashImage
    history: List[Event]
    reason: str

    def dump(self, directory: str, tag: str) -> None:
        os.makedirs(directory, exist_ok=True)
        chk.write_history(self.history, os.path.join(directory, f"{tag}.history"))
        self.image.dump(os.path.join(directory, f"{tag}.image"))
        with open(os.path.join(directory, f"{tag}.reason"), "w") as fh:
            fh.write(self.reason + "\n")


@dataclass
class ExhaustiveResult:
    config: TrialConfig
    crash_points: int
    combinations: int
    violations: List[ViolationRecord]

    @property
    def ok(self) -> bool:
        return not self.violations


def _fresh_run(cfg: TrialConfig, programs, crash_at: Optional[int]):
    heap = pmem.PersistentHeap(cfg.heap_capacity)
    queue = create_queue(cfg.variant, heap, cfg.threads, cfg.queue_config())
    recorder = Recorder()
    sched = _run_segment(cfg, queue, recorder, None, 0, programs, crash_at, drain=False)
    return heap, queue, recorder, sched


def _check_image(cfg: TrialConfig, image: pmem.CrashImage, recorder: Recorder) -> Tuple[Verdict, List[Event]]:
    branch = recorder.fork()
    heap2 = pmem.PersistentHeap.from_image(image)
    try:
        queue2 = recover_queue(cfg.variant, heap2, cfg.threads, cfg.queue_config())
    except RecoveryError as exc:
        return Verdict(ok=False, violation=f"recovery rejected the image: {exc}"), branch.events
    report = structural_audit(queue2)
    if not report.ok:
        return Verdict(ok=False, violation="; ".join(report.failures)), branch.events
    _sequential_drain(queue2, branch, gen=1)
    return check(branch.events, state_budget=cfg.checker_budget), branch.events


def run_exhaustive_small(
    cfg: TrialConfig,
    programs: Optional[List[List[Tuple[str, Optional[int]]]]] = None,
    dump_dir: Optional[str] = None,
    image_budget: int = 100_000,
) -> ExhaustiveResult:
    """Sweep the crash point over every access boundary and, at each, every
    crash image the per-line prefix rule (plus free non-temporal stores)
    permits; recover, drain, and check each combination."""
    cfg.validate()
    if programs is None:
        programs = [_mixed_program(cfg, 0, slot, cfg.ops_per_thread) for slot in range(cfg.threads)]
    # calibration: how many access boundaries does the uncrashed run have?
    _, _, recorder, sched = _fresh_run(cfg, programs, crash_at=None)
    total_steps = sched.step_count
    base_verdict = check(recorder.events, state_budget=cfg.checker_budget)
    violations: List[ViolationRecord] = []
    combos = 0
    if base_verdict.ok is False:
        violations.append(
            ViolationRecord(cfg, -1, pmem.CrashImage(b"", 0, pmem.LINE_SIZE), recorder.events, f"crash-free run: {base_verdict.violation}")
        )

    for crash_step in range(total_steps):
        heap, queue, recorder, sched = _fresh_run(cfg, programs, crash_at=crash_step)
        recorder.crash()
        for image in pmem.enumerate_images(heap, budget=image_budget):
            combos += 1
            verdict, events = _check_image(cfg, image, recorder)
            if verdict.ok is not True:
                reason = verdict.violation or "indeterminate"
                record = ViolationRecord(cfg, crash_step, image, events, reason)
                violations.append(record)
                if dump_dir:
                    record.dump(dump_dir, f"{cfg.variant}-s{cfg.scheduler_seed}-k{crash_step}-{combos}")
    return ExhaustiveResult(cfg, total_steps, combos, violations)


def _run_trial_exhaustive(cfg: TrialConfig) -> TrialResult:
    if cfg.crash_count != 1:
        raise HarnessError("the exhaustive selector supports exactly one crash")
    if cfg.threads * cfg.ops_per_thread > 16:
        raise HarnessError("exhaustive selector budget: at most 16 pre-crash operations")
    rng = random.Random(cfg.scheduler_seed ^ 0x5EED)
    programs = [_mixed_program(cfg, 0, slot, cfg.ops_per_thread) for slot in range(cfg.threads)]
    horizon = max(2, cfg.threads * cfg.ops_per_thread * _STEP_FACTOR[cfg.variant])
    crash_at = rng.randrange(1, horizon)
    heap, queue, recorder, sched = _fresh_run(cfg, programs, crash_at=crash_at)
    recorder.crash()
    last_events: List[Event] = recorder.events
    digests = []
    for image in pmem.enumerate_images(heap):
        digests.append(image.digest())
        verdict, events = _check_image(cfg, image, recorder)
        last_events = events
        if verdict.ok is not True:
            return TrialResult(cfg, verdict, events, [], digests, [crash_at], verdict.ok is None)
    return TrialResult(cfg, Verdict(ok=True, witness=None), last_events, [], digests, [crash_at])


# ----------------------------------------------------------------------
# crash during recovery


def run_recovery_crash_sweep(cfg: TrialConfig, dump_dir: Optional[str] = None) -> ExhaustiveResult:
    """Crash once mid-run, then crash again at every boundary of the recovery
    procedure itself, recover from the second image, and check the history."""
    cfg.validate()
    if cfg.variant not in DURABLE_VARIANTS:
        raise HarnessError("recovery crash sweep needs a durable variant")
    programs = [_mixed_program(cfg, 0, slot, cfg.ops_per_thread) for slot in range(cfg.threads)]
    rng = random.Random(cfg.scheduler_seed ^ 0xC0FFEE)
    horizon = max(2, cfg.threads * cfg.ops_per_thread * _STEP_FACTOR[cfg.variant])
    crash_at = rng.randrange(1, horizon)

    heap, queue, recorder, _ = _fresh_run(cfg, programs, crash_at=crash_at)
    recorder.crash()
    first_image = heap.crash(pmem.SeededSelector(cfg.selector_seed))

    def recovery_steps(crash_step: Optional[int]):
        heap2 = pmem.PersistentHeap.from_image(first_image)
        box = {}

        def body():
            box["queue"] = recover_queue(cfg.variant, heap2, cfg.threads, cfg.queue_config())

        sched = sim.Scheduler(policy=sim.RoundRobinPolicy(), crash_at=crash_step)
        sched.spawn(0, body)
        sched.run()
        return heap2, box.get("queue"), sched.step_count

    _, _, total = recovery_steps(None)
    violations: List[ViolationRecord] = []
    combos = 0
    for k in range(total):
        heap2, queue2, _ = recovery_steps(k)
        if queue2 is not None:  # the crash point fell past the end of recovery
            continue
        branch0 = recorder.fork()
        branch0.crash()
        for image2 in pmem.enumerate_images(heap2):
            combos += 1
            verdict, events = _check_image(cfg, image2, branch0)
            if verdict.ok is not True:
                record = ViolationRecord(cfg, k, image2, events, verdict.violation or "indeterminate")
                violations.append(record)
                if dump_dir:
                    record.dump(dump_dir, f"{cfg.variant}-recrash-k{k}-{combos}")
    return ExhaustiveResult(cfg, total, combos, violations)


# ----------------------------------------------------------------------
# audits


@dataclass
class AuditReport:
    variant: str
    threads: int
    op_count: int
    max_sfence: int
    min_sfence: int
    mean_sfence: float
    post_flush_total: int
    violations: List[str]
    elapsed: float

    @property
    def ok(self) -> bool:
        return not self.violations


def audit_bounds_violations(variant: str, audits: List[pmem.OpAudit]) -> List[str]:
    out = []
    for a in audits:
        if variant in ("uq", "lq", "ouq", "olq"):
            if a.sfence_count != 1:
                out.append(f"{variant} {a.label} on thread {a.thread}: sfence_count={a.sfence_count} (want 1)")
            if variant in ("ouq", "olq") and a.post_flush_access_count:
                out.append(
                    f"{variant} {a.label} on thread {a.thread}: "
                    f"post_flush_access_count={a.post_flush_access_count} (want 0)"
                )
        elif variant == "msq":
            if a.sfence_count or a.flush_count or a.nt_store_count or a.post_flush_access_count:
                out.append(f"msq {a.label}: nonzero persistence counters")
        elif variant == "izr":
            if a.sfence_count <= 1:
                out.append(f"izr {a.label}: sfence_count={a.sfence_count} (want > 1)")
    return out


def run_audit(
    variant: str,
    threads: int,
    total_ops: int,
    seed: int = 0,
    queue_config: Optional[QueueConfig] = None,
    heap_capacity: int = 1 << 23,
) -> AuditReport:
    """Crash-free instrumented run asserting the per-operation persistence bounds."""
    t0 = time.monotonic()
    qcfg = queue_config or QueueConfig(area_slots=4096)
    heap = pmem.PersistentHeap(heap_capacity, compact_above=64)
    queue = create_queue(variant, heap, threads, qcfg)
    cfg = TrialConfig(variant=variant, threads=threads, scheduler_seed=seed, area_slots=qcfg.area_slots)
    per_thread = max(1, total_ops // threads)
    programs = [_mixed_program(cfg, 0, slot, per_thread) for slot in range(threads)]
    audits: List[pmem.OpAudit] = []
    recorder = OpCounter()
    sched = sim.Scheduler(policy=sim.SeededPolicy(seed))
    for slot, program in enumerate(programs):
        sched.spawn(
            slot,
            lambda q=queue, s=slot, p=program: _worker_body(q, recorder, sched, s, s, p, audits, False),
        )
    status = sched.run()
    if status != "completed":
        raise HarnessError(f"audit run ended with status {status!r}")
    fences = [a.sfence_count for a in audits]
    return AuditReport(
        variant=variant,
        threads=threads,
        op_count=len(audits),
        max_sfence=max(fences),
        min_sfence=min(fences),
        mean_sfence=statistics.fmean(fences),
        post_flush_total=sum(a.post_flush_access_count for a in audits),
        violations=audit_bounds_violations(variant, audits),
        elapsed=time.monotonic() - t0,
    )


# ----------------------------------------------------------------------
# progress monitor


@dataclass
class ProgressPoint:
    paused_thread: int
    pause_checkpoint: int
    completed_ops: int
    steps_used: int
    max_loop_attempts: int
    ok: bool
    resumed_completed: bool


@dataclass
class ProgressReport:
    variant: str
    threads: int
    points: List[ProgressPoint]
    steps_per_op_max: float

    @property
    def ok(self) -> bool:
        return all(p.ok and p.resumed_completed for p in self.points)

    @property
    def max_loop_attempts(self) -> int:
        """Worst retry-loop length seen; informational against the n+1 bound."""
        return max((p.max_loop_attempts for p in self.points), default=0)


def _single_op_checkpoints(variant: str) -> int:
    heap = pmem.PersistentHeap(1 << 20)
    queue = create_queue(variant, heap, 1, QueueConfig())

    def body():
        queue.enqueue(0, 7)
        queue.dequeue(0)

    sched = sim.Scheduler(policy=sim.RoundRobinPolicy())
    sched.spawn(0, body)
    sched.run()
    return sched.step_count


def run_progress_monitor(
    variant: str,
    threads: int = 3,
    target_ops: int = 1000,
    positions: Optional[Sequence[int]] = None,
    seed: int = 0,
    step_budget_per_op: int = 400,
) -> ProgressReport:
    """Suspend one thread at each access boundary of its first operations and
    require the remaining threads to keep completing operations; then resume
    the suspended thread and require its operation to finish."""
    if positions is None:
        positions = range(1, _single_op_checkpoints(variant) + 1)
    points: List[ProgressPoint] = []
    worst_rate = 0.0
    for pos in positions:
        heap = pmem.PersistentHeap(1 << 23)
        qcfg = QueueConfig(area_slots=2048)
        queue = create_queue(variant, heap, threads, qcfg)
        counter = OpCounter()
        sched = sim.Scheduler(policy=sim.SeededPolicy(seed + pos), max_steps=target_ops * step_budget_per_op)
        state = {"resumed": False, "resume_floor": 0}

        def make_values(slot):
            k = 0
            while True:
                k += 1
                yield (slot + 1) * 1_000_000 + k

        for slot in range(threads):
            sched.spawn(slot, lambda q=queue, s=slot: _endless_body(q, counter, s, make_values(s)))
        sched.pause_after(0, pos)

        def until() -> bool:
            others = counter.total(exclude=0)
            if not state["resumed"]:
                if others >= target_ops:
                    state["resumed"] = True
                    state["resume_floor"] = counter.completed.get(0, 0)
                    sched.resume(0)
                return False
            return counter.completed.get(0, 0) > state["resume_floor"]

        status = sched.run(until=until)
        others_done = counter.total(exclude=0)
        ok = state["resumed"] and others_done >= target_ops
        resumed_ok = status == "stopped" and counter.completed.get(0, 0) > state["resume_floor"]
        if others_done:
            worst_rate = max(worst_rate, sched.step_count / others_done)
        points.append(
            ProgressPoint(
                paused_thread=0,
                pause_checkpoint=pos,
                completed_ops=others_done,
                steps_used=sched.step_count,
                max_loop_attempts=max(queue.max_attempts),
                ok=ok,
                resumed_completed=resumed_ok,
            )
        )
    return ProgressReport(variant=variant, threads=threads, points=points, steps_per_op_max=worst_rate)


# ----------------------------------------------------------------------
# command line


def _parse_seeds(spec: str) -> range:
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        return range(int(lo), int(hi) + 1)
    seed = int(spec)
    return range(seed, seed + 1)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="pmemq-crash", description="Seeded crash-injection trials for the durable queues.")
    parser.add_argument("--variant", required=True, choices=sorted(VARIANTS))
    parser.add_argument("--threads", type=int, default=3)
    parser.add_argument("--ops", type=int, default=6, help="operations per thread before each crash")
    parser.add_argument("--crashes", type=int, default=1)
    parser.add_argument("--seeds", default="0", help="single seed or inclusive range A..B")
    parser.add_argument("--selector", default="seed", choices=["min", "max", "seed", "exhaustive"])
    parser.add_argument("--evict-prob", type=float, default=0.0)
    parser.add_argument("--dump-on-fail", metavar="DIR", default=None)
    parser.add_argument("--post-crash-ops", type=int, default=0)
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    selector = {"min": "minimal", "max": "maximal", "seed": "seeded", "exhaustive": "exhaustive"}[args.selector]
    failures = 0
    trials = 0
    for seed in _parse_seeds(args.seeds):
        cfg = TrialConfig(
            variant=args.variant,
            threads=args.threads,
            ops_per_thread=args.ops,
            crash_count=args.crashes,
            image_selector=selector,
            selector_seed=seed,
            scheduler_seed=seed,
            evict_probability=args.evict_prob,
            post_crash_ops=args.post_crash_ops,
        )
        result = run_trial(cfg)
        trials += 1
        if result.verdict.ok is None:
            retry = replace(cfg, ops_per_thread=max(1, cfg.ops_per_thread - 2), scheduler_seed=seed + 1_000_000)
            result = run_trial(retry)
        if not result.ok:
            failures += 1
            print(f"[FAIL] variant={args.variant} seed={seed}: {result.verdict.violation}")
            if args.dump_on_fail:
                os.makedirs(args.dump_on_fail, exist_ok=True)
                tag = f"{args.variant}-seed{seed}"
                chk.write_history(result.history, os.path.join(args.dump_on_fail, f"{tag}.history"))
        elif not args.quiet:
            summary = result.audit_summary()
            print(
                f"[ ok ] variant={args.variant} seed={seed} ops={len(result.audits)} "
                f"max_sfence={summary['max_sfence']} post_flush={summary['post_flush']}"
            )
    print(f"{trials - failures}/{trials} trials passed")
    return 0 if failures == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
