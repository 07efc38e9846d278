"""Span records and assembly of spans into rooted span trees.

Spans arrive as JSON lines (one span object per line) possibly interleaved
across trace ids.  :func:`assemble_traces` groups them per trace id, builds
the span tree and yields immutable :class:`Trace` values in root start order.
"""
from __future__ import annotations

import heapq
import json
import logging
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import CyclicParentage, DuplicateSpanId, ParseError, TraceRejected

log = logging.getLogger(__name__)

SPAN_FIELDS = (
    "trace_id",
    "span_id",
    "parent_span_id",
    "service",
    "operation",
    "start_us",
    "duration_us",
    "status",
)

DEFAULT_TIMEOUT_US = 30_000_000


@dataclass(frozen=True, slots=True)
class SpanRecord:
    trace_id: str
    span_id: str
    parent_span_id: str | None
    service: str
    operation: str
    start_us: int
    duration_us: int
    status: str | None = None
    # original input line, kept so sampled traces can be copied verbatim
    raw: str | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.span_id:
            raise ValueError("span_id must be non-empty")
        if self.duration_us < 0:
            raise ValueError(f"negative duration_us {self.duration_us}")

    @property
    def span_type(self) -> str:
        return span_type(self)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in SPAN_FIELDS}

    def to_json(self) -> str:
        """Verbatim input line when available, canonical JSON otherwise."""
        if self.raw is not None:
            return self.raw
        return json.dumps(self.to_dict(), separators=(",", ":"))


def span_type(record: SpanRecord) -> str:
    return f"{record.service}:{record.operation}"


def _as_int(obj: dict, name: str) -> int:
    value = obj.get(name)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"field {name!r} must be an integer, got {value!r}")
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError(f"field {name!r} must be an integer, got {value!r}")
        value = int(value)
    return value


def _as_str(obj: dict, name: str, optional: bool = False) -> str | None:
    value = obj.get(name)
    if value is None:
        if optional:
            return None
        raise ValueError(f"missing field {name!r}")
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return str(value)
    if not isinstance(value, str):
        raise ValueError(f"field {name!r} must be a string, got {value!r}")
    return value


def span_from_dict(obj: dict, raw: str | None = None) -> SpanRecord:
    """Build a SpanRecord from a decoded JSON object; unknown keys are ignored."""
    if not isinstance(obj, dict):
        raise ValueError("span line must be a JSON object")
    parent = obj.get("parent_span_id")
    if parent == "":
        parent = None
    return SpanRecord(
        trace_id=_as_str(obj, "trace_id"),
        span_id=_as_str(obj, "span_id"),
        parent_span_id=None if parent is None else _as_str(obj, "parent_span_id"),
        service=_as_str(obj, "service"),
        operation=_as_str(obj, "operation"),
        start_us=_as_int(obj, "start_us"),
        duration_us=_as_int(obj, "duration_us"),
        status=_as_str(obj, "status", optional=True),
        raw=raw,
    )


def parse_span_lines(lines: Iterable[str], source=None) -> Iterator[SpanRecord]:
    for line_no, line in enumerate(lines, start=1):
        text = line.rstrip("\r\n")
        if not text.strip():
            continue
        try:
            obj = json.loads(text)
            yield span_from_dict(obj, raw=text)
        except (json.JSONDecodeError, ValueError) as exc:
            raise ParseError(str(exc), path=source, line_no=line_no) from None


def read_spans(path) -> Iterator[SpanRecord]:
    """Stream SpanRecords from a JSON-lines file."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        yield from parse_span_lines(fh, source=path)


def write_spans(records: Iterable[SpanRecord], fh) -> int:
    n = 0
    for rec in records:
        fh.write(rec.to_json())
        fh.write("\n")
        n += 1
    return n


@dataclass(frozen=True, slots=True)
class SpanNode:
    span_id: str
    span_type: str
    start_us: int
    duration_us: int
    children: tuple["SpanNode", ...]
    record: SpanRecord = field(compare=False, repr=False)
    adopted: bool = False


@dataclass(frozen=True, slots=True)
class Trace:
    trace_id: str
    root: SpanNode
    # breadth-first order, root first
    nodes: tuple[SpanNode, ...]
    adopted: int = 0

    @property
    def start_us(self) -> int:
        return self.root.start_us

    def __len__(self) -> int:
        return len(self.nodes)

    def records(self) -> list[SpanRecord]:
        return [n.record for n in self.nodes]


def _child_key(rec: SpanRecord):
    return (span_type(rec), rec.start_us, rec.span_id)


def build_trace(trace_id: str, records: list[SpanRecord]) -> Trace:
    """Assemble one trace's spans into a rooted tree.

    Orphans (parent id not in the trace) and extra parentless spans are
    adopted under the root, which is the earliest parentless span.  If every
    span has a parent the earliest orphan becomes the root.
    """
    by_id: dict[str, SpanRecord] = {}
    for rec in records:
        if rec.span_id in by_id:
            raise DuplicateSpanId(trace_id, f"duplicate span id {rec.span_id!r}")
        by_id[rec.span_id] = rec

    def start_key(rec):
        return (rec.start_us, rec.span_id)

    parentless = sorted((r for r in records if r.parent_span_id is None), key=start_key)
    orphans = sorted(
        (r for r in records if r.parent_span_id is not None and r.parent_span_id not in by_id),
        key=start_key,
    )
    if parentless:
        root = parentless[0]
        adopt = parentless[1:] + orphans
    elif orphans:
        root = orphans[0]
        adopt = orphans[1:]
    else:
        raise CyclicParentage(trace_id, "no root span; parent links form a cycle")
    adopted_ids = {r.span_id for r in adopt}
    if root.parent_span_id is not None:
        adopted_ids.add(root.span_id)

    children: dict[str, list[SpanRecord]] = {}
    for rec in records:
        if rec is root:
            continue
        parent = root.span_id if rec.span_id in adopted_ids else rec.parent_span_id
        children.setdefault(parent, []).append(rec)
    for kids in children.values():
        kids.sort(key=_child_key)

    # breadth-first walk; anything unreachable sits on a cycle
    order = [root]
    queue = deque([root])
    while queue:
        rec = queue.popleft()
        for kid in children.get(rec.span_id, ()):
            order.append(kid)
            queue.append(kid)
    if len(order) != len(records):
        raise CyclicParentage(trace_id, f"{len(records) - len(order)} spans on a parent cycle")

    built: dict[str, SpanNode] = {}
    for rec in reversed(order):
        built[rec.span_id] = SpanNode(
            span_id=rec.span_id,
            span_type=span_type(rec),
            start_us=rec.start_us,
            duration_us=rec.duration_us,
            children=tuple(built[k.span_id] for k in children.get(rec.span_id, ())),
            record=rec,
            adopted=rec.span_id in adopted_ids,
        )
    nodes = tuple(built[rec.span_id] for rec in order)
    return Trace(trace_id=trace_id, root=nodes[0], nodes=nodes, adopted=len(adopted_ids))


@dataclass
class AssemblyStats:
    spans: int = 0
    traces: int = 0
    rejected: int = 0
    adopted_spans: int = 0
    rejected_ids: list[str] = field(default_factory=list)

    @property
    def warnings(self) -> int:
        return self.rejected + self.adopted_spans


class _Buffer:
    __slots__ = ("seq", "records", "min_start", "last_seen")

    def __init__(self, seq: int):
        self.seq = seq
        self.records: list[SpanRecord] = []
        self.min_start: int | None = None
        self.last_seen = 0


class TraceAssembler:
    """Incremental span-to-trace assembler.

    A trace is complete once the stream clock (max span start seen) has moved
    ``timeout_us`` past the last span received for it.  Completed traces are
    held back until no still-open trace could start earlier, so output is in
    root start order.  ``timeout_us=None`` buffers everything until
    :meth:`flush` (offline files).
    """

    def __init__(self, timeout_us: int | None = DEFAULT_TIMEOUT_US, stats: AssemblyStats | None = None):
        self.timeout_us = timeout_us
        self.stats = stats if stats is not None else AssemblyStats()
        self._open: OrderedDict[str, _Buffer] = OrderedDict()
        self._open_starts: list[tuple[int, int, str]] = []
        self._ready: list[tuple[int, int, Trace]] = []
        self._seq = 0
        self._clock: int | None = None

    def __len__(self) -> int:
        return len(self._open)

    def add(self, rec: SpanRecord) -> list[Trace]:
        self.stats.spans += 1
        if self._clock is None or rec.start_us > self._clock:
            self._clock = rec.start_us
        buf = self._open.get(rec.trace_id)
        if buf is None:
            buf = self._open[rec.trace_id] = _Buffer(self._seq)
            self._seq += 1
        else:
            self._open.move_to_end(rec.trace_id)
        buf.records.append(rec)
        buf.last_seen = self._clock
        if buf.min_start is None or rec.start_us < buf.min_start:
            buf.min_start = rec.start_us
            heapq.heappush(self._open_starts, (rec.start_us, buf.seq, rec.trace_id))
        if self.timeout_us is None:
            return []
        horizon = self._clock - self.timeout_us
        while self._open:
            tid, oldest = next(iter(self._open.items()))
            if oldest.last_seen >= horizon:
                break
            self._close(tid)
        return self._drain()

    def flush(self) -> list[Trace]:
        for tid in list(self._open):
            self._close(tid)
        return self._drain()

    def _close(self, trace_id: str) -> None:
        buf = self._open.pop(trace_id)
        try:
            trace = build_trace(trace_id, buf.records)
        except TraceRejected as exc:
            self.stats.rejected += 1
            self.stats.rejected_ids.append(trace_id)
            log.warning("rejected %s", exc)
            return
        if trace.adopted:
            self.stats.adopted_spans += trace.adopted
            log.warning("trace %s: %d span(s) adopted under root", trace_id, trace.adopted)
        heapq.heappush(self._ready, (trace.start_us, buf.seq, trace))

    def _open_floor(self):
        heap = self._open_starts
        while heap:
            start, seq, tid = heap[0]
            buf = self._open.get(tid)
            if buf is not None and buf.seq == seq and buf.min_start == start:
                return (start, seq)
            heapq.heappop(heap)
        return None

    def _drain(self) -> list[Trace]:
        out = []
        floor = self._open_floor()
        while self._ready and (floor is None or self._ready[0][:2] < floor):
            out.append(heapq.heappop(self._ready)[2])
        self.stats.traces += len(out)
        return out


def assemble_traces(
    spans: Iterable[SpanRecord],
    timeout_us: int | None = DEFAULT_TIMEOUT_US,
    stats: AssemblyStats | None = None,
) -> Iterator[Trace]:
    """Group a span stream into traces, yielded in root ``start_us`` order."""
    asm = TraceAssembler(timeout_us=timeout_us, stats=stats)
    for rec in spans:
        yield from asm.add(rec)
    yield from asm.flush()
