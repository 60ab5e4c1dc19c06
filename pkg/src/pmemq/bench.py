"""Benchmark workloads over the simulated heap, with CSV output.

Five workloads: uniformly random enqueue/dequeue (rand5050), back-to-back
enqueue-dequeue pairs, producers only, consumers only on a prefilled queue,
and a mixed producer-consumer run where a quarter of the threads dequeue
then enqueue fixed op budgets while the rest do the opposite.  Workers are
real threads with a start barrier.  Throughput numbers reflect the simulator,
not any hardware; the CSV exists for instrumentation trends (fences per op,
post-flush accesses) and regression tracking.  An uninstrumented mode swaps
in a passthrough heap whose flush/fence are no-ops to measure pure
algorithmic overhead; it is not durable.
"""

from __future__ import annotations

import argparse
import csv
import random
import statistics
import sys
import threading
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from . import sim
from .pmem import WORD, AddressError, PersistStats, PersistentHeap
from .queues import EMPTY, VARIANTS, QueueConfig, create_queue

WORKLOAD_KINDS = ("rand5050", "pairs", "producers", "consumers", "mixedpc")

CSV_HEADER = [
    "variant",
    "workload",
    "threads",
    "seed",
    "total_ops",
    "wall_seconds",
    "throughput",
    "mean_sfence",
    "post_flush",
]


class BenchError(Exception):
    pass


@dataclass(frozen=True)
class Workload:
    kind: str
    threads: int
    seconds: float = 1.0
    ops: int = 10_000  # per-phase budget for mixedpc
    init_size: int = 10

    def __post_init__(self):
        if self.kind not in WORKLOAD_KINDS:
            raise BenchError(f"unknown workload {self.kind!r}")
        if self.kind == "consumers" and self.init_size <= 0:
            raise BenchError("consumers workload needs a prefilled queue")


@dataclass
class BenchResult:
    variant: str
    workload: str
    threads: int
    seed: int
    total_ops: int
    wall_seconds: float
    throughput: float
    mean_sfence: float
    post_flush: int


class PlainHeap:
    """Passthrough heap: coherent bytes, atomic CAS, no persistence model.

    flush/fence/non-temporal stores only bump counters so the CSV columns
    stay comparable.  There is no crash image; use free-running mode only.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.line_size = 64
        self._mem = bytearray(capacity)
        self._lock = threading.RLock()
        self.stats = PersistStats()

    def _check(self, offset: int, length: int) -> None:
        if offset < 0 or offset + length > self.capacity:
            raise AddressError(f"range [{offset}, {offset}+{length}) out of bounds")

    def pload(self, offset, length, thread):
        with self._lock:
            self._check(offset, length)
            return bytes(self._mem[offset : offset + length])

    def pstore(self, offset, data, thread):
        with self._lock:
            self._check(offset, len(data))
            self._mem[offset : offset + len(data)] = data

    def load_word(self, offset, thread):
        with self._lock:
            return int.from_bytes(self._mem[offset : offset + WORD], "little")

    def store_word(self, offset, value, thread):
        with self._lock:
            self._mem[offset : offset + WORD] = value.to_bytes(WORD, "little")

    def pcas_word(self, offset, expected, new, thread):
        with self._lock:
            cur = int.from_bytes(self._mem[offset : offset + WORD], "little")
            if cur != expected:
                return False
            self._mem[offset : offset + WORD] = new.to_bytes(WORD, "little")
            return True

    def pcas_2words(self, offset, expected, new, thread):
        with self._lock:
            cur = (
                int.from_bytes(self._mem[offset : offset + WORD], "little"),
                int.from_bytes(self._mem[offset + WORD : offset + 2 * WORD], "little"),
            )
            if cur != expected:
                return False
            self._mem[offset : offset + WORD] = new[0].to_bytes(WORD, "little")
            self._mem[offset + WORD : offset + 2 * WORD] = new[1].to_bytes(WORD, "little")
            return True

    def nt_store_word(self, offset, value, thread):
        self.store_word(offset, value, thread)
        self.stats.bump(thread, "nt_store_count")

    def flush(self, offset, thread):
        self.stats.bump(thread, "flush_count")

    def sfence(self, thread):
        self.stats.bump(thread, "sfence_count")

    def _sfence_locked(self, thread):
        self.stats.bump(thread, "sfence_count")

    def evict(self, line):
        pass

    def lifetime_boundary(self, offset, length):
        pass

    def begin_op(self, thread, label=""):
        from .pmem import OpAudit

        self.stats.push(thread, OpAudit(label=label, thread=thread))

    def end_op(self, thread):
        return self.stats.pop(thread)

    def suspend_attribution(self, thread):
        return PersistentHeap._Suspend(self, thread)

    def peek(self, offset, length):
        return bytes(self._mem[offset : offset + length])

    def peek_word(self, offset):
        return int.from_bytes(self._mem[offset : offset + WORD], "little")


# ----------------------------------------------------------------------
# worker bodies (free-running threads)


def _run_op(queue, slot: int, kind: str, value: Optional[int]):
    heap, pool = queue.heap, queue.pool
    pool.epochs.enter(slot)
    heap.begin_op(slot, kind)
    try:
        if kind == "E":
            queue.enqueue(slot, value)
            return None
        return queue.dequeue(slot)
    finally:
        heap.end_op(slot)
        pool.epochs.exit(slot)


def _timed_body(queue, slot, seconds, barrier, counts, op_picker):
    values = iter(range((slot + 1) * 1_000_000_000 + 1, (slot + 2) * 1_000_000_000))
    rng = random.Random(slot * 65537 + 11)
    barrier.wait()
    deadline = time.monotonic() + seconds
    done = 0
    while time.monotonic() < deadline:
        kind = op_picker(rng, done)
        _run_op(queue, slot, kind, next(values) if kind == "E" else None)
        done += 1
    counts[slot] = done


def _mixedpc_body(queue, slot, deq_first, ops, barrier, counts, results):
    values = iter(range((slot + 1) * 1_000_000_000 + 1, (slot + 2) * 1_000_000_000))
    barrier.wait()
    done = 0
    successes = 0
    phases = ("D", "E") if deq_first else ("E", "D")
    for kind in phases:
        for _ in range(ops):
            out = _run_op(queue, slot, kind, next(values) if kind == "E" else None)
            if kind == "D" and out is not EMPTY:
                successes += 1
            done += 1
    counts[slot] = done
    results[slot] = successes


def _prefill(queue, count: int) -> None:
    for i in range(count):
        _run_op(queue, 0, "E", 900_000_000_000 + i + 1)
    queue.thread_shutdown(0)


# ----------------------------------------------------------------------


def _one_run(variant: str, workload: Workload, seed: int, uninstrumented: bool, heap_capacity: int) -> BenchResult:
    if uninstrumented:
        heap = PlainHeap(heap_capacity)
    else:
        heap = PersistentHeap(heap_capacity, compact_above=64)
    qcfg = QueueConfig(area_slots=8192)
    queue = create_queue(variant, heap, workload.threads, qcfg)
    if workload.init_size:
        _prefill(queue, workload.init_size)

    counts: Dict[int, int] = {}
    successes: Dict[int, int] = {}
    barrier = threading.Barrier(workload.threads + 1)
    threads: List[threading.Thread] = []

    if workload.kind == "mixedpc":
        n_deq_first = workload.threads // 4
        for slot in range(workload.threads):
            threads.append(
                threading.Thread(
                    target=_mixedpc_body,
                    args=(queue, slot, slot < n_deq_first, workload.ops, barrier, counts, successes),
                )
            )
    else:
        pickers = {
            "rand5050": lambda rng, done: "E" if rng.random() < 0.5 else "D",
            "pairs": lambda rng, done: "E" if done % 2 == 0 else "D",
            "producers": lambda rng, done: "E",
            "consumers": lambda rng, done: "D",
        }
        picker = pickers[workload.kind]
        for slot in range(workload.threads):
            threads.append(
                threading.Thread(
                    target=_timed_body,
                    args=(queue, slot, workload.seconds, barrier, counts, picker),
                )
            )

    for t in threads:
        t.start()
    barrier.wait()
    t0 = time.monotonic()
    for t in threads:
        t.join()
    wall = time.monotonic() - t0

    total_ops = sum(counts.values())
    if workload.kind == "mixedpc":
        # conservation: a final drain recovers exactly the enqueue surplus
        enq_total = workload.threads * workload.ops
        deq_successes = sum(successes.values())
        if deq_successes > enq_total:
            raise BenchError("more successful dequeues than enqueues")
        drained = 0
        while _run_op(queue, 0, "D", None) is not EMPTY:
            drained += 1
        if drained != enq_total - deq_successes + workload.init_size:
            raise BenchError(
                f"conservation breach: drained {drained}, expected "
                f"{enq_total - deq_successes + workload.init_size}"
            )
    ops_scoped = heap.stats.op_totals
    mean_sfence = ops_scoped.sfence_count / total_ops if total_ops else 0.0
    return BenchResult(
        variant=variant,
        workload=workload.kind,
        threads=workload.threads,
        seed=seed,
        total_ops=total_ops,
        wall_seconds=wall,
        throughput=total_ops / wall if wall > 0 else 0.0,
        mean_sfence=mean_sfence,
        post_flush=ops_scoped.post_flush_access_count,
    )


def run_bench(
    variant: str,
    workload: Workload,
    repeats: int = 10,
    seed: int = 0,
    uninstrumented: bool = False,
    heap_capacity: int = 1 << 27,
) -> List[BenchResult]:
    """Run one (variant, workload) cell ``repeats`` times (paper methodology:
    each reported point averages ten runs)."""
    if variant not in VARIANTS:
        raise BenchError(f"unknown variant {variant!r}")
    out = []
    for r in range(repeats):
        out.append(_one_run(variant, workload, seed + r, uninstrumented, heap_capacity))
    return out


def summarize(results: Sequence[BenchResult]) -> Dict[Tuple[str, str, int], float]:
    """Mean throughput per (variant, workload, threads) cell."""
    cells: Dict[Tuple[str, str, int], List[float]] = {}
    for r in results:
        cells.setdefault((r.variant, r.workload, r.threads), []).append(r.throughput)
    return {key: statistics.fmean(vals) for key, vals in cells.items()}


def emit_csv(results: Sequence[BenchResult], path: str, baseline: Optional[str] = None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in results:
            writer.writerow(
                [
                    r.variant,
                    r.workload,
                    r.threads,
                    r.seed,
                    r.total_ops,
                    f"{r.wall_seconds:.6f}",
                    f"{r.throughput:.3f}",
                    f"{r.mean_sfence:.4f}",
                    r.post_flush,
                ]
            )
    if baseline is None:
        return
    means = summarize(results)
    ratio_path = path + ".ratios.csv" if not path.endswith(".csv") else path[:-4] + ".ratios.csv"
    with open(ratio_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "workload", "threads", f"throughput_ratio_vs_{baseline}"])
        for (variant, workload, threads), mean in sorted(means.items()):
            base = means.get((baseline, workload, threads))
            if base:
                writer.writerow([variant, workload, threads, f"{mean / base:.4f}"])


# ----------------------------------------------------------------------


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="pmemq-bench", description="Workload benchmarks over the simulated heap.")
    parser.add_argument("--variant", action="append", required=True, help="variant key or 'all'; repeatable")
    parser.add_argument("--workload", action="append", required=True, choices=WORKLOAD_KINDS)
    parser.add_argument("--threads", type=int, default=4)
    parser.add_argument("--seconds", type=float, default=1.0)
    parser.add_argument("--ops", type=int, default=10_000, help="per-phase op budget for mixedpc")
    parser.add_argument("--init", type=int, default=None, help="initial queue size (default 10; 100000 for consumers)")
    parser.add_argument("--repeats", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--csv", default=None)
    parser.add_argument("--baseline", default=None)
    parser.add_argument("--uninstrumented", action="store_true", help="no-op flush/fence passthrough heap (not durable)")
    args = parser.parse_args(argv)

    variants: List[str] = []
    for v in args.variant:
        variants.extend(sorted(VARIANTS) if v == "all" else [v])
    for v in variants:
        if v not in VARIANTS:
            parser.error(f"unknown variant {v!r}")

    results: List[BenchResult] = []
    for variant in variants:
        for kind in args.workload:
            init = args.init
            if init is None:
                init = 100_000 if kind == "consumers" else (0 if kind == "producers" else 10)
            wl = Workload(kind=kind, threads=args.threads, seconds=args.seconds, ops=args.ops, init_size=init)
            runs = run_bench(variant, wl, repeats=args.repeats, seed=args.seed, uninstrumented=args.uninstrumented)
            results.extend(runs)
            mean_tp = statistics.fmean(r.throughput for r in runs)
            mean_f = statistics.fmean(r.mean_sfence for r in runs)
            print(
                f"{variant:>4} {kind:<10} threads={args.threads} "
                f"throughput={mean_tp:,.0f} ops/s mean_sfence={mean_f:.3f} "
                f"post_flush={sum(r.post_flush for r in runs)}"
            )
    if args.csv:
        emit_csv(results, args.csv, baseline=args.baseline)
        print(f"wrote {args.csv}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
