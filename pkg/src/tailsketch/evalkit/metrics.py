"""Coverage / sampling-rate evaluation and the uniform baseline."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from ..clustering import Decision
from ..errors import ParseError


@dataclass
class LabelSet:
    """Trace ids that a good sampler should keep, with the reason for each."""

    kinds: dict[str, str] = field(default_factory=dict)
    source: str = ""

    @property
    def ids(self) -> set[str]:
        return set(self.kinds)

    def __len__(self):
        return len(self.kinds)

    def __contains__(self, trace_id):
        return trace_id in self.kinds

    def add(self, trace_id: str, kind: str):
        if trace_id in self.kinds:
            raise ValueError(f"duplicate label for {trace_id}")
        self.kinds[trace_id] = kind

    @classmethod
    def from_ids(cls, ids: Iterable[str], kind: str = "labeled", source: str = "") -> "LabelSet":
        out = cls(source=source)
        for tid in ids:
            out.add(tid, kind)
        return out

    def count_by_kind(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for kind in self.kinds.values():
            out[kind] = out.get(kind, 0) + 1
        return dict(sorted(out.items()))


def write_labels(labels: LabelSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tid, kind in labels.kinds.items():
            fh.write(json.dumps({"trace_id": tid, "kind": kind}, separators=(",", ":")) + "\n")


def read_labels(path) -> LabelSet:
    labels = LabelSet(source=str(path))
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                labels.add(str(obj["trace_id"]), str(obj.get("kind", "labeled")))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(str(exc), path=path, line_no=line_no) from None
    return labels


def read_decisions(path) -> list[Decision]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(Decision.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(str(exc), path=path, line_no=line_no) from None
    return out


@dataclass
class EvalReport:
    coverage: float
    sampling_rate: float
    observed: int
    sampled: int
    labeled: int
    labeled_sampled: int
    by_reason: dict[str, dict[str, int]] = field(default_factory=dict)
    coverage_by_kind: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate(decisions: Iterable[Decision | dict], labels: LabelSet) -> EvalReport:
    """Coverage (labeled traces kept / labeled traces) and sampling rate."""
    observed = 0
    sampled_ids: set[str] = set()
    by_reason: dict[str, dict[str, int]] = {}
    for d in decisions:
        if isinstance(d, dict):
            d = Decision.from_dict(d)
        observed += 1
        slot = by_reason.setdefault(d.reason.value, {"observed": 0, "sampled": 0})
        slot["observed"] += 1
        if d.sampled:
            slot["sampled"] += 1
            sampled_ids.add(d.trace_id)
    hit = labels.ids & sampled_ids
    per_kind_total: dict[str, int] = {}
    per_kind_hit: dict[str, int] = {}
    for tid, kind in labels.kinds.items():
        per_kind_total[kind] = per_kind_total.get(kind, 0) + 1
        if tid in sampled_ids:
            per_kind_hit[kind] = per_kind_hit.get(kind, 0) + 1
    return EvalReport(
        # vacuous success when nothing is labeled
        coverage=len(hit) / len(labels) if len(labels) else 1.0,
        sampling_rate=len(sampled_ids) / observed if observed else 0.0,
        observed=observed,
        sampled=len(sampled_ids),
        labeled=len(labels),
        labeled_sampled=len(hit),
        by_reason=dict(sorted(by_reason.items())),
        coverage_by_kind={k: per_kind_hit.get(k, 0) / n for k, n in sorted(per_kind_total.items())},
    )


def evaluate_files(decisions_path, labels_path) -> EvalReport:
    return evaluate(read_decisions(decisions_path), read_labels(labels_path))


def uniform_baseline(trace_ids: list[str], budget: float, seed: int = 0) -> set[str]:
    """Keep each id independently with probability ``budget`` (head sampling)."""
    if not 0.0 <= budget <= 1.0:
        raise ValueError(f"budget must lie in [0, 1], got {budget}")
    keep = np.random.default_rng(seed).random(len(trace_ids)) < budget
    return {tid for tid, k in zip(trace_ids, keep) if k}


def uniform_decisions(trace_ids: list[str], budget: float, seed: int = 0) -> list[dict]:
    """Uniform baseline rendered as decision-log records, for :func:`evaluate`."""
    kept = uniform_baseline(trace_ids, budget, seed)
    return [
        {"trace_id": tid, "sampled": tid in kept, "reason": "PMC_BUDGET",
         "probability": budget, "cluster_id": -1, "tick": float(i)}
        for i, tid in enumerate(trace_ids)
    ]


def save_report(report: EvalReport, path) -> None:
    Path(path).write_text(report.to_json() + "\n", encoding="utf-8")
