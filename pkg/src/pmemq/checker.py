"""Durable-linearizability verdicts for crash-segmented FIFO histories.

A history is a sequence of invoke/return events, possibly split by crash
events.  With the crashes deleted, the history must be linearizable against
the sequential FIFO specification: every completed operation takes effect at
some instant between its invocation and response, and an operation that was
pending when a crash killed its thread either takes effect at some instant
before that crash or is dropped entirely.

``check`` decides this by a depth-first search over frontier states that
fires pending operations lazily (only when a response or a crash forces
commitment), memoizing on (position, unfired set, queue contents).
``check_oracle`` decides the same question by brute-force enumeration of
kept-pending subsets and linearization orders; it exists so the two can be
tested against each other.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .queues.base import EMPTY

INV, RET, CRASH = "INV", "RET", "CRASH"
ENQ, DEQ = "ENQ", "DEQ"


class MalformedHistory(Exception):
    pass


class CheckerError(Exception):
    pass


@dataclass(frozen=True)
class Event:
    seq: int
    thread: Optional[int]
    kind: str  # INV | RET | CRASH
    op: Optional[str] = None  # ENQ | DEQ
    value: object = None  # enq argument on INV, result on RET (int or EMPTY)

    def __str__(self):
        return format_event(self)


@dataclass
class Verdict:
    ok: Optional[bool]  # None means indeterminate (budget exceeded)
    witness: Optional[List[str]] = None
    violation: Optional[str] = None
    states: int = 0

    def __bool__(self):
        return self.ok is True


class _Op:
    __slots__ = ("idx", "thread", "kind", "value", "result", "completed", "label")

    def __init__(self, idx, thread, kind, value):
        self.idx = idx
        self.thread = thread
        self.kind = kind  # 'E' | 'D'
        self.value = value
        self.result = None
        self.completed = False
        self.label = ""


# ----------------------------------------------------------------------
# history file format: one event per line, tab separated


def format_event(ev: Event) -> str:
    thread = "-" if ev.thread is None else str(ev.thread)
    op = ev.op or "-"
    if ev.value is None:
        value = "-"
    elif ev.value is EMPTY:
        value = "EMPTY"
    else:
        value = str(ev.value)
    return f"{ev.seq}\t{thread}\t{ev.kind}\t{op}\t{value}"


def format_history(events: Sequence[Event]) -> str:
    return "\n".join(format_event(e) for e in events) + "\n"


def parse_history(text: str) -> List[Event]:
    events = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise MalformedHistory(f"line {lineno}: expected 5 tab-separated fields")
        seq_s, thread_s, kind, op_s, value_s = parts
        if kind not in (INV, RET, CRASH):
            raise MalformedHistory(f"line {lineno}: bad kind {kind!r}")
        thread = None if thread_s == "-" else int(thread_s)
        op = None if op_s == "-" else op_s
        if op not in (None, ENQ, DEQ):
            raise MalformedHistory(f"line {lineno}: bad op {op_s!r}")
        if value_s == "-":
            value = None
        elif value_s == "EMPTY":
            value = EMPTY
        else:
            value = int(value_s)
        events.append(Event(int(seq_s), thread, kind, op, value))
    return events


def write_history(events: Sequence[Event], path) -> None:
    with open(path, "w") as fh:
        fh.write(format_history(events))


def read_history(path) -> List[Event]:
    with open(path) as fh:
        return parse_history(fh.read())


# ----------------------------------------------------------------------
# normalization


def _extract(events: Sequence[Event]) -> Tuple[List[_Op], List[Tuple[str, Optional[_Op]]]]:
    ops: List[_Op] = []
    stream: List[Tuple[str, Optional[_Op]]] = []
    open_ops: Dict[int, _Op] = {}
    dead_threads: Set[int] = set()
    seen_threads: Set[int] = set()
    enq_values: Set[object] = set()
    last_seq = None
    for ev in events:
        if last_seq is not None and ev.seq <= last_seq:
            raise MalformedHistory(f"event seq {ev.seq} is not increasing")
        last_seq = ev.seq
        if ev.kind == CRASH:
            # every thread alive at the crash dies with it; open ops stay pending
            dead_threads.update(seen_threads)
            open_ops.clear()
            stream.append(("C", None))
            continue
        if ev.thread is None:
            raise MalformedHistory("invoke/return events need a thread")
        if ev.thread in dead_threads:
            raise MalformedHistory(f"thread {ev.thread} was reused across a crash")
        seen_threads.add(ev.thread)
        if ev.kind == INV:
            if ev.thread in open_ops:
                raise MalformedHistory(f"thread {ev.thread} invoked while an op is open")
            if ev.op == ENQ:
                if not isinstance(ev.value, int):
                    raise MalformedHistory("enqueue invocation needs an integer value")
                if ev.value in enq_values:
                    raise MalformedHistory(f"enqueued value {ev.value} is not unique")
                enq_values.add(ev.value)
                op = _Op(len(ops), ev.thread, "E", ev.value)
                op.label = f"enq({ev.value})"
            elif ev.op == DEQ:
                op = _Op(len(ops), ev.thread, "D", None)
                op.label = "deq"
            else:
                raise MalformedHistory(f"invocation with op {ev.op!r}")
            ops.append(op)
            open_ops[ev.thread] = op
            stream.append(("I", op))
        else:  # RET
            op = open_ops.pop(ev.thread, None)
            if op is None:
                raise MalformedHistory(f"thread {ev.thread} returned with no open op")
            if (op.kind == "E") != (ev.op == ENQ):
                raise MalformedHistory(f"return kind mismatch on thread {ev.thread}")
            op.completed = True
            if op.kind == "D":
                if not (ev.value is EMPTY or isinstance(ev.value, int)):
                    raise MalformedHistory("dequeue return needs a value or EMPTY")
                op.result = ev.value
                op.label = "deq->EMPTY" if ev.value is EMPTY else f"deq->{ev.value}"
            stream.append(("R", op))
    return ops, stream


def _fire(op: _Op, queue: Tuple) -> Optional[Tuple]:
    """Queue contents after op takes effect now, or None if it cannot."""
    if op.kind == "E":
        return queue + (op.value,)
    if op.completed:
        if op.result is EMPTY:
            return queue if not queue else None
        return queue[1:] if queue and queue[0] == op.result else None
    # a pending dequeue that takes effect removes the oldest item
    return queue[1:] if queue else None


# ----------------------------------------------------------------------
# the checker


class _Budget(Exception):
    pass


def check(history: Sequence[Event], state_budget: int = 500_000) -> Verdict:
    """Decide durable linearizability of a crash-segmented FIFO history."""
    ops, stream = _extract(history)
    seen: Set[Tuple] = set()
    states = 0
    n = len(stream)
    sys.setrecursionlimit(max(sys.getrecursionlimit(), 4 * (n + len(ops)) + 100))
    best_i = 0

    def dfs(i: int, pending: frozenset, queue: Tuple) -> Optional[List[_Op]]:
        nonlocal states, best_i
        key = (i, pending, queue)
        if key in seen:
            return None
        seen.add(key)
        states += 1
        if states > state_budget:
            raise _Budget()
        best_i = max(best_i, i)
        if i == n:
            return []  # ops still pending at the end may simply never take effect
        what, op = stream[i]
        if what == "I":
            return dfs(i + 1, pending | {op.idx}, queue)
        if what == "R":
            if op.idx not in pending:
                return dfs(i + 1, pending, queue)
        elif what == "C":
            rest = dfs(i + 1, frozenset(), queue)  # drop every unfired pending op
            if rest is not None:
                return rest
        # fire some pending operation and revisit this position
        for pidx in sorted(pending):
            cand = ops[pidx]
            nq = _fire(cand, queue)
            if nq is None:
                continue
            rest = dfs(i, pending - {pidx}, nq)
            if rest is not None:
                return [cand] + rest
        return None

    try:
        witness = dfs(0, frozenset(), ())
    except _Budget:
        return Verdict(ok=None, violation="state budget exceeded", states=states)
    if witness is None:
        culprit = format_event(history[best_i]) if best_i < len(history) else "the end"
        return Verdict(
            ok=False,
            violation=f"no linearization extends past event {best_i} ({culprit})",
            states=states,
        )
    return Verdict(ok=True, witness=[op.label for op in witness], states=states)


# ----------------------------------------------------------------------
# the brute-force oracle


def check_oracle(history: Sequence[Event], max_ops: int = 12) -> Verdict:
    """Exhaustive-search twin of ``check`` for small histories."""
    ops, stream = _extract(history)
    if len(ops) > max_ops:
        raise CheckerError(f"oracle limited to {max_ops} operations, got {len(ops)}")

    # linearization windows as open intervals over stream positions
    start = {}
    end = {}
    pos_of_crash_after: List[int] = []
    for i, (what, op) in enumerate(stream):
        if what == "I":
            start[op.idx] = i
        elif what == "R":
            end[op.idx] = i
        else:
            pos_of_crash_after.append(i)
    for op in ops:
        if op.idx not in end:
            crash = next((c for c in pos_of_crash_after if c > start[op.idx]), None)
            end[op.idx] = crash if crash is not None else len(stream)

    completed = [op for op in ops if op.completed]
    pendings = [op for op in ops if not op.completed]

    def search(chosen: List[_Op]) -> Optional[List[_Op]]:
        order: List[_Op] = []
        used = [False] * len(chosen)

        def rec(cur: int, queue: Tuple) -> bool:
            if len(order) == len(chosen):
                return True
            for j, op in enumerate(chosen):
                if used[j]:
                    continue
                point = max(cur, start[op.idx])
                if point >= end[op.idx]:
                    continue
                nq = _fire(op, queue)
                if nq is None:
                    continue
                used[j] = True
                order.append(op)
                if rec(point, nq):
                    return True
                order.pop()
                used[j] = False
            return False

        return list(order) if rec(-1, ()) else None

    for mask in range(1 << len(pendings)):
        kept = [p for b, p in enumerate(pendings) if mask >> b & 1]
        witness = search(completed + kept)
        if witness is not None:
            return Verdict(ok=True, witness=[op.label for op in witness])
    return Verdict(ok=False, violation="no kept-subset and ordering satisfies FIFO")


# ----------------------------------------------------------------------
# quiescent structure audit


@dataclass
class StructureReport:
    variant: str
    ok: bool
    node_count: int
    failures: List[str] = field(default_factory=list)


def structural_audit(queue) -> StructureReport:
    """Walk a quiescent queue and assert its variant's structural invariants."""
    failures: List[str] = []
    variant = queue.variant
    if variant in ("uq", "ouq", "olq"):
        nodes = queue.live_nodes()
        indices = [n["index"] for n in nodes]
        for a, b in zip(indices, indices[1:]):
            if variant == "olq":
                if b != a + 1:
                    failures.append(f"indices not consecutive: {a} then {b}")
            elif b <= a:
                failures.append(f"indices not increasing: {a} then {b}")
        if variant in ("ouq", "olq"):
            for n in nodes[1:]:
                if n["persistent_index"] != n["index"]:
                    failures.append(
                        f"volatile/persistent index mismatch at {n['addr']:#x}: "
                        f"{n['index']} vs {n['persistent_index']}"
                    )
        if variant == "uq":
            for n in nodes[1:]:
                if not n["linked"]:
                    failures.append(f"live node {n['addr']:#x} has linked unset")
    elif variant == "lq":
        nodes = queue.live_nodes()
        heap = queue.heap
        for i, n in enumerate(nodes):
            if n["next"] == 0 and i != len(nodes) - 1:
                failures.append(f"interior node {n['addr']:#x} has null next")
        # whenever a node's backward link is null, every live node before it
        # must be pinned: item, set flag, and its forward link
        for i, n in enumerate(nodes):
            if n["pred"] != 0:
                continue
            for m in nodes[:i]:
                view = heap.guaranteed_view(m["addr"], 64)
                g_item = int.from_bytes(view[0:8], "little")
                g_next = int.from_bytes(view[8:16], "little")
                g_init = int.from_bytes(view[24:32], "little")
                if g_init != 1 or g_item != m["item"] or g_next != m["next"]:
                    failures.append(
                        f"node {m['addr']:#x} precedes null-pred node {n['addr']:#x} "
                        f"but is not pinned (init={g_init} item={g_item} next={g_next:#x})"
                    )
    elif variant in ("msq", "izr"):
        nodes = []
    else:
        raise CheckerError(f"unknown variant {variant!r}")

    items = queue.snapshot_items()
    if not items:
        tail = queue.tail.peek() if hasattr(queue, "tail") else None
        head = queue.head.peek() if hasattr(queue, "head") else None
        if variant in ("ouq", "olq", "msq") and head is not None and tail is not None:
            if head is not tail or head.next.peek() is not None:
                failures.append("empty queue but head/tail disagree")
    count = len(nodes) if variant in ("uq", "lq", "ouq", "olq") else len(items)
    return StructureReport(variant=variant, ok=not failures, node_count=count, failures=failures)
