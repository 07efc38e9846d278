"""Call-path / duration encoding of a trace.

Every span contributes the path of span types from the root down to it.
The value stored for a path is the decade of the span's duration, shifted by
one so that a present path never encodes as zero.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .errors import IllegalSpanType
from .trace_model import Trace

PATH_SEP = "→"


@dataclass(frozen=True, slots=True)
class CallPath:
    components: tuple[str, ...]

    def __post_init__(self):
        if not self.components:
            raise ValueError("a call path needs at least one component")

    @property
    def key(self) -> str:
        return PATH_SEP.join(self.components)

    @classmethod
    def from_key(cls, key: str) -> "CallPath":
        return cls(tuple(key.split(PATH_SEP)))

    def __len__(self) -> int:
        return len(self.components)

    def __str__(self) -> str:
        return self.key


@dataclass(frozen=True, slots=True)
class SparseTraceVector:
    """Map from call-path key to duration bucket; missing keys mean 0."""

    trace_id: str
    entries: dict[str, int]

    def __len__(self) -> int:
        return len(self.entries)

    def items(self):
        return self.entries.items()


def bucket_duration(duration_us: int) -> int:
    # exact integer decade, avoids float log10 trouble at 999, 1000, ...
    d = max(int(duration_us), 1)
    return len(str(d))


def extract_call_paths(trace: Trace) -> list[tuple[CallPath, int]]:
    """One (path, bucket) pair per span, breadth-first from the root."""
    out = []
    queue = deque([(trace.root, ())])
    while queue:
        node, prefix = queue.popleft()
        if PATH_SEP in node.span_type:
            raise IllegalSpanType(f"span type {node.span_type!r} contains {PATH_SEP!r}")
        comps = prefix + (node.span_type,)
        out.append((CallPath(comps), bucket_duration(node.duration_us)))
        for kid in node.children:
            queue.append((kid, comps))
    return out


def encode_trace(trace: Trace) -> SparseTraceVector:
    entries: dict[str, int] = {}
    for path, bucket in extract_call_paths(trace):
        key = path.key
        # same-typed siblings share a path: keep the slowest
        if bucket > entries.get(key, 0):
            entries[key] = bucket
    return SparseTraceVector(trace.trace_id, entries)
