"""Simulated persistent main memory with cache-line writeback semantics.

Models a two-level memory: a coherent volatile view that every thread reads
and writes immediately, plus per-cache-line persistence state that decides
what survives a crash.  Stores append to per-line logs.  An asynchronous
``flush`` snapshots a line's log length into the issuing thread's pending
set; the next ``sfence`` by that thread pins those prefixes, making them
mandatory in every crash image.  Cache lines write back atomically, so a
crash image reflects, per line, a prefix of the cached stores no shorter
than the pinned prefix.  Non-temporal stores bypass the cache: they become
mandatory at the issuing thread's next fence but are otherwise free to be
present or absent in an image independently of each other and of the
cached-store prefix.

The heap also keeps instrumentation: fence/flush/non-temporal counts and a
count of accesses to lines that were explicitly flushed earlier in the same
allocation lifetime, all attributable to operation scopes via
``begin_op``/``end_op``.
"""

from __future__ import annotations

import hashlib
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Set, Tuple

from . import sim

LINE_SIZE = 64
WORD = 8

_IMAGE_MAGIC = b"PMQI"
_IMAGE_VERSION = 1
_IMAGE_HEADER = struct.Struct("<4sIQI")


class PmemError(Exception):
    """Base error for the persistent-memory model."""


class AddressError(PmemError):
    """Out-of-bounds, cross-line, or misaligned access."""


class NestingError(PmemError):
    """begin_op/end_op scopes were not properly nested."""


@dataclass
class OpAudit:
    """Instruction counters accumulated within one operation scope."""

    label: str = ""
    thread: int = -1
    sfence_count: int = 0
    flush_count: int = 0
    nt_store_count: int = 0
    post_flush_access_count: int = 0
    trace: Optional[List[Tuple[str, int]]] = None

    def add(self, other: "OpAudit") -> None:
        self.sfence_count += other.sfence_count
        self.flush_count += other.flush_count
        self.nt_store_count += other.nt_store_count
        self.post_flush_access_count += other.post_flush_access_count


class StoreRecord:
    """One store to a single cache line."""

    __slots__ = ("seq", "thread", "offset", "data", "non_temporal")

    def __init__(self, seq, thread, offset, data, non_temporal=False):
        self.seq = seq
        self.thread = thread
        self.offset = offset
        self.data = data
        self.non_temporal = non_temporal

    def __repr__(self):
        kind = "nt" if self.non_temporal else "st"
        return f"<{kind} #{self.seq} t{self.thread} @{self.offset}+{len(self.data)}>"


class LineState:
    """Persistence bookkeeping for one cache line.

    ``base`` holds the line content as of log truncation; replaying the full
    log over it yields the coherent view.  ``pinned`` counts log entries
    (absolute, including ``base_count`` folded ones) guaranteed to be in
    every crash image.  ``nt_pinned`` holds absolute positions of
    non-temporal records individually pinned by a fence.
    """

    __slots__ = ("base", "base_count", "log", "pinned", "nt_pinned", "flushed")

    def __init__(self, base: bytes):
        self.base = base
        self.base_count = 0
        self.log: List[StoreRecord] = []
        self.pinned = 0
        self.nt_pinned: Set[int] = set()
        self.flushed = False  # explicitly flushed since last lifetime boundary

    def total(self) -> int:
        return self.base_count + len(self.log)


@dataclass
class CrashImage:
    """One byte-exact post-crash snapshot of the heap."""

    data: bytes
    capacity: int
    line_size: int
    chosen: Dict[int, Tuple[int, Tuple[int, ...]]] = field(default_factory=dict)

    def digest(self) -> str:
        return hashlib.sha256(self.data).hexdigest()

    def line_bytes(self, line: int) -> bytes:
        lo = line * self.line_size
        return self.data[lo : lo + self.line_size]

    def dump(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_IMAGE_HEADER.pack(_IMAGE_MAGIC, _IMAGE_VERSION, self.capacity, self.line_size))
            fh.write(self.data)

    @classmethod
    def load(cls, path) -> "CrashImage":
        with open(path, "rb") as fh:
            raw = fh.read()
        magic, version, capacity, line_size = _IMAGE_HEADER.unpack_from(raw, 0)
        if magic != _IMAGE_MAGIC or version != _IMAGE_VERSION:
            raise PmemError(f"bad image header: {magic!r} v{version}")
        data = raw[_IMAGE_HEADER.size :]
        if len(data) != capacity:
            raise PmemError(f"image length {len(data)} != capacity {capacity}")
        return cls(data=data, capacity=capacity, line_size=line_size)


class PersistStats:
    """Per-thread scope stacks plus whole-run counter totals."""

    def __init__(self):
        self.scopes: Dict[int, List[Optional[OpAudit]]] = {}
        self.totals = OpAudit(label="totals")
        self.op_totals = OpAudit(label="op-scoped totals")

    def push(self, thread: int, audit: Optional[OpAudit]) -> None:
        self.scopes.setdefault(thread, []).append(audit)

    def pop(self, thread: int) -> Optional[OpAudit]:
        stack = self.scopes.get(thread)
        if not stack:
            raise NestingError(f"end_op without begin_op on thread {thread}")
        return stack.pop()

    def current(self, thread: int) -> Optional[OpAudit]:
        stack = self.scopes.get(thread)
        return stack[-1] if stack else None

    def bump(self, thread: int, counter: str, amount: int = 1) -> None:
        setattr(self.totals, counter, getattr(self.totals, counter) + amount)
        audit = self.current(thread)
        if audit is not None:
            setattr(audit, counter, getattr(audit, counter) + amount)
            setattr(self.op_totals, counter, getattr(self.op_totals, counter) + amount)


class PersistentHeap:
    """Byte-addressable simulated NVRAM plus the volatile coherent view.

    All mutating entry points are serialized by one internal lock, so the
    heap may be driven by real threads; under the cooperative scheduler the
    lock is uncontended.  Every public load/store/flush/fence entry point is
    also a scheduler checkpoint, which is what gives the crash injector its
    access-boundary granularity.
    """

    def __init__(self, capacity: int, line_size: int = LINE_SIZE, compact_above: Optional[int] = None):
        if capacity % line_size:
            raise PmemError("capacity must be a multiple of the line size")
        self.capacity = capacity
        self.line_size = line_size
        self._mem = bytearray(capacity)  # coherent (cache) view
        self._lines: Dict[int, LineState] = {}
        self._seq = 0
        self._pending_flush: Dict[int, List[Tuple[int, int]]] = {}
        self._pending_nt: Dict[int, List[Tuple[int, int]]] = {}
        self._compact_above = compact_above
        self.stats = PersistStats()
        self.trace = False
        self._lock = threading.RLock()

    # ------------------------------------------------------------------
    # construction from a crash image

    @classmethod
    def from_image(cls, image: CrashImage, compact_above: Optional[int] = None) -> "PersistentHeap":
        heap = cls(image.capacity, image.line_size, compact_above=compact_above)
        heap._mem[:] = image.data
        return heap

    # ------------------------------------------------------------------
    # internals

    def _line_index(self, offset: int) -> int:
        return offset // self.line_size

    def _check_range(self, offset: int, length: int) -> int:
        if offset < 0 or length <= 0 or offset + length > self.capacity:
            raise AddressError(f"range [{offset}, {offset}+{length}) out of bounds")
        line = offset // self.line_size
        if (offset + length - 1) // self.line_size != line:
            raise AddressError(f"range [{offset}, {offset}+{length}) crosses a line boundary")
        return line

    def _state(self, line: int) -> LineState:
        st = self._lines.get(line)
        if st is None:
            lo = line * self.line_size
            st = LineState(bytes(self._mem[lo : lo + self.line_size]))
            self._lines[line] = st
        return st

    def _note_access(self, line: int, thread: int, kind: str, offset: int) -> None:
        st = self._lines.get(line)
        if st is not None and st.flushed:
            self.stats.bump(thread, "post_flush_access_count")
        if self.trace:
            audit = self.stats.current(thread)
            if audit is not None:
                if audit.trace is None:
                    audit.trace = []
                audit.trace.append((kind, offset))

    def _append(self, line: int, thread: int, offset: int, data: bytes, non_temporal: bool) -> None:
        st = self._state(line)
        self._seq += 1
        st.log.append(StoreRecord(self._seq, thread, offset, data, non_temporal))
        self._mem[offset : offset + len(data)] = data

    def _maybe_compact(self, st: LineState) -> None:
        if self._compact_above is None:
            return
        if len(st.log) < self._compact_above or st.pinned <= st.base_count:
            return
        keep_from = st.pinned - st.base_count
        base = bytearray(st.base)
        rel = 0
        for rec in st.log[:keep_from]:
            lo = rec.offset % self.line_size
            base[lo : lo + len(rec.data)] = rec.data
            rel += 1
        st.base = bytes(base)
        st.log = st.log[keep_from:]
        st.base_count = st.pinned
        st.nt_pinned = {p for p in st.nt_pinned if p >= st.pinned}

    # ------------------------------------------------------------------
    # loads and stores

    def pload(self, offset: int, length: int, thread: int) -> bytes:
        sim.checkpoint()
        with self._lock:
            line = self._check_range(offset, length)
            self._note_access(line, thread, "load", offset)
            return bytes(self._mem[offset : offset + length])

    def pstore(self, offset: int, data: bytes, thread: int) -> None:
        sim.checkpoint()
        with self._lock:
            line = self._check_range(offset, len(data))
            self._note_access(line, thread, "store", offset)
            self._append(line, thread, offset, bytes(data), non_temporal=False)

    def load_word(self, offset: int, thread: int) -> int:
        return int.from_bytes(self.pload(offset, WORD, thread), "little")

    def store_word(self, offset: int, value: int, thread: int) -> None:
        self.pstore(offset, value.to_bytes(WORD, "little"), thread)

    def pcas_word(self, offset: int, expected: int, new: int, thread: int) -> bool:
        sim.checkpoint()
        with self._lock:
            if offset % WORD:
                raise AddressError(f"pcas offset {offset} not word aligned")
            line = self._check_range(offset, WORD)
            self._note_access(line, thread, "cas", offset)
            cur = int.from_bytes(self._mem[offset : offset + WORD], "little")
            if cur != expected:
                return False
            self._append(line, thread, offset, new.to_bytes(WORD, "little"), non_temporal=False)
            return True

    def pcas_2words(self, offset: int, expected: Tuple[int, int], new: Tuple[int, int], thread: int) -> bool:
        sim.checkpoint()
        with self._lock:
            if offset % (2 * WORD):
                raise AddressError(f"wide pcas offset {offset} not 16-byte aligned")
            line = self._check_range(offset, 2 * WORD)
            self._note_access(line, thread, "cas2", offset)
            cur = (
                int.from_bytes(self._mem[offset : offset + WORD], "little"),
                int.from_bytes(self._mem[offset + WORD : offset + 2 * WORD], "little"),
            )
            if cur != expected:
                return False
            data = new[0].to_bytes(WORD, "little") + new[1].to_bytes(WORD, "little")
            self._append(line, thread, offset, data, non_temporal=False)
            return True

    def nt_store_word(self, offset: int, value: int, thread: int) -> None:
        sim.checkpoint()
        with self._lock:
            if offset % WORD:
                raise AddressError(f"nt store offset {offset} not word aligned")
            line = self._check_range(offset, WORD)
            # bypasses the cache: neither sets nor trips the post-flush metric
            if self.trace:
                audit = self.stats.current(thread)
                if audit is not None:
                    if audit.trace is None:
                        audit.trace = []
                    audit.trace.append(("nt", offset))
            st = self._state(line)
            self._append(line, thread, offset, value.to_bytes(WORD, "little"), non_temporal=True)
            pos = st.total() - 1
            self._pending_nt.setdefault(thread, []).append((line, pos))
            self.stats.bump(thread, "nt_store_count")

    # ------------------------------------------------------------------
    # flushes and fences

    def flush(self, offset: int, thread: int) -> None:
        sim.checkpoint()
        with self._lock:
            line = self._check_range(offset, 1)
            st = self._state(line)
            st.flushed = True
            self._pending_flush.setdefault(thread, []).append((line, st.total()))
            self.stats.bump(thread, "flush_count")

    def sfence(self, thread: int) -> None:
        sim.checkpoint()
        with self._lock:
            self._sfence_locked(thread)

    def _sfence_locked(self, thread: int) -> None:
        for line, upto in self._pending_flush.pop(thread, ()):  # pin flushed prefixes
            st = self._lines[line]
            if upto > st.pinned:
                st.pinned = upto
                st.nt_pinned = {p for p in st.nt_pinned if p >= upto}
                self._maybe_compact(st)
        for line, pos in self._pending_nt.pop(thread, ()):  # pin nt stores individually
            st = self._lines[line]
            if pos >= st.pinned:
                st.nt_pinned.add(pos)
        self.stats.bump(thread, "sfence_count")

    def fence_pending(self, thread: int) -> bool:
        with self._lock:
            return bool(self._pending_flush.get(thread) or self._pending_nt.get(thread))

    def evict(self, line: int) -> None:
        """Spontaneous full writeback of one line (adversarial event)."""
        with self._lock:
            st = self._lines.get(line)
            if st is None:
                return
            st.pinned = st.total()
            st.nt_pinned.clear()
            self._maybe_compact(st)

    def touched_lines(self) -> List[int]:
        with self._lock:
            return sorted(self._lines)

    # ------------------------------------------------------------------
    # lifetimes and operation scopes

    def lifetime_boundary(self, offset: int, length: int) -> None:
        """Reset the post-flush metric for the lines of a (re)allocated slot."""
        with self._lock:
            first = offset // self.line_size
            last = (offset + length - 1) // self.line_size
            for line in range(first, last + 1):
                st = self._lines.get(line)
                if st is not None:
                    st.flushed = False

    def begin_op(self, thread: int, label: str = "") -> None:
        self.stats.push(thread, OpAudit(label=label, thread=thread))

    def end_op(self, thread: int) -> OpAudit:
        audit = self.stats.pop(thread)
        if audit is None:
            raise NestingError(f"end_op closed a suspended scope on thread {thread}")
        return audit

    class _Suspend:
        def __init__(self, heap, thread):
            self.heap, self.thread = heap, thread

        def __enter__(self):
            self.heap.stats.push(self.thread, None)

        def __exit__(self, *exc):
            stack = self.heap.stats.scopes.get(self.thread)
            if not stack or stack[-1] is not None:
                raise NestingError("suspended scope was closed out of order")
            stack.pop()
            return False

    def suspend_attribution(self, thread: int) -> "PersistentHeap._Suspend":
        """Scope whose instruction counts attribute to setup, not to any op."""
        return self._Suspend(self, thread)

    # ------------------------------------------------------------------
    # crash-image materialization

    def _line_image(self, line: int, k: int, nt_extra: Set[int]) -> bytes:
        st = self._lines[line]
        if k < st.pinned or k > st.total():
            raise PmemError(f"selector chose k={k} outside [{st.pinned}, {st.total()}] for line {line}")
        out = bytearray(st.base)
        for rel, rec in enumerate(st.log):
            pos = st.base_count + rel
            if rec.non_temporal:
                keep = pos < st.pinned or pos in st.nt_pinned or pos in nt_extra
            else:
                keep = pos < k
            if keep:
                lo = rec.offset % self.line_size
                out[lo : lo + len(rec.data)] = rec.data
        return bytes(out)

    def line_choices(self, line: int) -> Tuple[List[int], List[int]]:
        """Distinct cached-prefix cuts and free non-temporal positions for a line."""
        st = self._lines[line]
        cuts = [st.pinned]
        for rel, rec in enumerate(st.log):
            pos = st.base_count + rel
            if pos >= st.pinned and not rec.non_temporal:
                cuts.append(pos + 1)
        free_nt = [
            st.base_count + rel
            for rel, rec in enumerate(st.log)
            if rec.non_temporal and st.base_count + rel >= st.pinned and st.base_count + rel not in st.nt_pinned
        ]
        return cuts, free_nt

    def crash(self, selector: "Selector") -> CrashImage:
        """Materialize one crash image.  Requires external quiescence."""
        with self._lock:
            data = bytearray(self._mem)  # start from coherent, overwrite touched lines
            chosen: Dict[int, Tuple[int, Tuple[int, ...]]] = {}
            for line in sorted(self._lines):
                st = self._lines[line]
                k, nt_extra = selector.choose(line, st, self)
                img = self._line_image(line, k, set(nt_extra))
                lo = line * self.line_size
                data[lo : lo + self.line_size] = img
                chosen[line] = (k, tuple(sorted(nt_extra)))
            return CrashImage(bytes(data), self.capacity, self.line_size, chosen)

    def coherent_snapshot(self) -> bytes:
        with self._lock:
            return bytes(self._mem)

    # ------------------------------------------------------------------
    # quiescent inspection (no instrumentation, no checkpoint)

    def peek(self, offset: int, length: int) -> bytes:
        return bytes(self._mem[offset : offset + length])

    def peek_word(self, offset: int) -> int:
        return int.from_bytes(self._mem[offset : offset + WORD], "little")

    def guaranteed_view(self, offset: int, length: int) -> bytes:
        """Bytes guaranteed to appear in every crash image for this range."""
        with self._lock:
            line = self._check_range(offset, length)
            st = self._lines.get(line)
            if st is None:
                return bytes(self._mem[offset : offset + length])
            img = self._line_image(line, st.pinned, set())
            lo = offset % self.line_size
            return img[lo : lo + length]


# ----------------------------------------------------------------------
# selectors


class Selector:
    def choose(self, line: int, st: LineState, heap: PersistentHeap) -> Tuple[int, Set[int]]:
        raise NotImplementedError


class MinimalSelector(Selector):
    """Keep only what is pinned: the weakest image the model permits."""

    def choose(self, line, st, heap):
        return st.pinned, set()


class MaximalSelector(Selector):
    """Keep everything: the image equals the coherent view."""

    def choose(self, line, st, heap):
        cuts, free_nt = heap.line_choices(line)
        return st.total(), set(free_nt)


class SeededSelector(Selector):
    """Independent per-line random choice, reproducible from one seed."""

    def __init__(self, seed: int):
        import random

        self._rng = random.Random(seed)

    def choose(self, line, st, heap):
        cuts, free_nt = heap.line_choices(line)
        k = self._rng.choice(cuts)
        nt_extra = {p for p in free_nt if self._rng.random() < 0.5}
        return k, nt_extra


class ExplicitSelector(Selector):
    """Replay a fixed per-line choice map; lines not listed stay minimal."""

    def __init__(self, chosen: Dict[int, Tuple[int, Tuple[int, ...]]]):
        self.chosen = chosen

    def choose(self, line, st, heap):
        k, nt = self.chosen.get(line, (st.pinned, ()))
        return k, set(nt)


def enumerate_images(heap: PersistentHeap, budget: int = 250_000) -> Iterator[CrashImage]:
    """Yield every crash image the model permits for the heap's current state.

    The image count is the product over lines of (distinct cached-prefix
    cuts) x 2^(free non-temporal stores); a budget guards against blowups.
    """
    lines = heap.touched_lines()
    per_line: List[Tuple[int, List[Tuple[int, Tuple[int, ...]]]]] = []
    count = 1
    for line in lines:
        cuts, free_nt = heap.line_choices(line)
        choices: List[Tuple[int, Tuple[int, ...]]] = []
        for k in cuts:
            for mask in range(1 << len(free_nt)):
                nt = tuple(free_nt[i] for i in range(len(free_nt)) if mask >> i & 1)
                choices.append((k, nt))
        if len(choices) > 1:
            per_line.append((line, choices))
        count *= len(choices)
        if count > budget:
            raise PmemError(f"image enumeration exceeds budget ({count} > {budget})")

    def rec(idx: int, acc: Dict[int, Tuple[int, Tuple[int, ...]]]) -> Iterator[CrashImage]:
        if idx == len(per_line):
            yield heap.crash(ExplicitSelector(dict(acc)))
            return
        line, choices = per_line[idx]
        for choice in choices:
            acc[line] = choice
            yield from rec(idx + 1, acc)
        del acc[line]

    yield from rec(0, {})


def count_images(heap: PersistentHeap) -> int:
    total = 1
    for line in heap.touched_lines():
        cuts, free_nt = heap.line_choices(line)
        total *= len(cuts) * (1 << len(free_nt))
    return total


def make_selector(kind: str, seed: int = 0) -> Selector:
    if kind == "minimal":
        return MinimalSelector()
    if kind == "maximal":
        return MaximalSelector()
    if kind == "seeded":
        return SeededSelector(seed)
    raise PmemError(f"unknown selector kind {kind!r}")
