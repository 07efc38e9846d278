"""Seeded synthetic microservice traces with labeled anomalies.

Normal traffic is a weighted mix of request topologies (span trees) with
lognormal per-span durations.  A fixed quota of test traces is corrupted
with one of three faults:

* ``latency_spike``: one span's duration times 100 (two decades slower)
* ``structure_new``: a never-seen span type inserted under some span
* ``truncation``: one non-root subtree dropped

Every anomalous trace is labeled, and so is the first test occurrence of
any topology that the training split never showed (``new_topology``).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from ..errors import InvalidSpec
from .metrics import LabelSet, write_labels

ANOMALY_KINDS = ("latency_spike", "structure_new", "truncation")
SPIKE_FACTOR = 100


@dataclass(frozen=True)
class Node:
    span_type: str
    median_us: float
    children: tuple["Node", ...] = ()


def N(span_type: str, median_us: float, *children: Node) -> Node:
    return Node(span_type, median_us, tuple(children))


@dataclass(frozen=True)
class Template:
    name: str
    weight: float
    root: Node
    # fraction of the test stream after which this topology appears;
    # None means it is part of the mix from the start (training included)
    appears_at: float | None = None


def _size(node: Node) -> int:
    return 1 + sum(_size(c) for c in node.children)


# Durations are centred inside a decade (about 10**(k + 0.5)) so that normal
# jitter rarely moves a span into a neighbouring log bucket.
DEFAULT_CATALOG: tuple[Template, ...] = (
    Template("search", 0.27, N(
        "gateway:/travel/query", 31_000,
        N("travel:queryInfo", 3_500,
          N("route:getRoute", 310),
          N("train:queryTrainType", 290),
          N("price:queryPrice", 330),
          N("seat:getLeftTicket", 3_100,
            N("order:getSoldTickets", 320),
            N("config:queryConfig", 31))),
        N("station:queryByName", 300),
    )),
    Template("preserve", 0.14, N(
        "gateway:/preserve", 35_000,
        N("preserve:preserve", 31_000,
          N("security:check", 3_200,
            N("order:getOrderInfo", 310),
            N("order-other:getOrderInfo", 300)),
          N("contacts:getContacts", 290),
          N("travel:getTripAllDetail", 3_000,
            N("route:getRoute", 300),
            N("train:queryTrainType", 310),
            N("seat:getLeftTicket", 3_000,
              N("order:getSoldTickets", 300),
              N("config:queryConfig", 30))),
          N("seat:distributeSeat", 350),
          N("order:create", 3_100),
          N("assurance:create", 310),
          N("food:createFoodOrder", 330),
          N("consign:insertConsign", 320),
          N("user:findByUserId", 300)),
        N("auth:verifyToken", 35),
    )),
    Template("login", 0.15, N(
        "gateway:/users/login", 3_800,
        N("auth:login", 3_100,
          N("verification:verifyCode", 310),
          N("user:findByUserName", 300),
          N("auth:issueToken", 35)),
    )),
    Template("pay", 0.12, N(
        "gateway:/inside_pay", 30_000,
        N("inside-payment:pay", 3_500,
          N("order:getById", 310),
          N("payment:pay", 3_000,
            N("bank:charge", 350)),
          N("order:modifyOrderStatus", 320),
          N("notification:send", 290)),
        N("auth:verifyToken", 35),
    )),
    Template("cancel", 0.10, N(
        "gateway:/cancel", 31_000,
        N("cancel:cancelTicket", 3_500,
          N("order:getById", 300),
          N("order-other:getById", 310),
          N("inside-payment:drawBack", 3_100,
            N("payment:refund", 350)),
          N("order:modifyOrderStatus", 300),
          N("user:findByUserId", 290),
          N("notification:send", 310)),
        N("auth:verifyToken", 35),
    )),
    Template("food", 0.10, N(
        "gateway:/foodservice", 3_500,
        N("food:getAllFood", 3_000,
          N("food-map:getTrainFood", 320),
          N("food-map:getStoreFood", 310),
          N("travel:getRouteByTripId", 300),
          N("station:queryByIdBatch", 290)),
    )),
    Template("consign", 0.09, N(
        "gateway:/consign", 3_800,
        N("consign:queryByAccount", 3_100,
          N("consign-price:getPrice", 310),
          N("consign:findByOrder", 300)),
        N("auth:verifyToken", 35),
        N("contacts:findContacts", 300),
        N("station:queryById", 31),
    )),
    Template("admin-report", 0.03, N(
        "gateway:/admin/report", 35_000,
        N("admin-basic:getAll", 31_000,
          N("station:queryAll", 3_000),
          N("train:queryAll", 3_100),
          N("config:queryAll", 350),
          N("price:queryAll", 3_200),
          N("contacts:queryAll", 3_000)),
        N("admin-order:getAll", 30_000,
          N("order:findAll", 3_500),
          N("order-other:findAll", 3_800)),
        N("auth:verifyToken", 35),
        N("admin-user:getAll", 3_100),
    )),
    Template("rebook", 0.05, N(
        "gateway:/rebook", 31_000,
        N("rebook:rebook", 3_500,
          N("order:getById", 300),
          N("travel:getTripAllDetail", 3_100,
            N("seat:getLeftTicket", 350)),
          N("inside-payment:payDifference", 3_000),
          N("order:update", 310)),
        N("auth:verifyToken", 35),
    ), appears_at=0.25),
    Template("voucher", 0.03, N(
        "gateway:/voucher", 3_500,
        N("voucher:getVoucher", 3_100,
          N("order:getById", 310),
          N("voucher:render", 350)),
    ), appears_at=0.6),
)

NEW_SPAN_POOL = tuple(f"fault:{op}" for op in (
    "retryHandler", "circuitOpen", "fallbackCache", "timeoutGuard", "dlqPublish",
    "rateLimited", "staleRead", "failover", "compensate", "deadlockRetry",
))


@dataclass(frozen=True)
class SynthConfig:
    n_train: int = 1000
    n_test: int = 50_000
    anomaly_fraction: float = 0.01
    anomaly_kinds: tuple[str, ...] = ANOMALY_KINDS
    # lognormal sigma (natural log) of every span duration
    duration_sigma: float = 0.3
    # mean gap between consecutive trace starts
    spacing_us: int = 20_000
    start_us: int = 1_700_000_000_000_000
    catalog: tuple[Template, ...] = DEFAULT_CATALOG

    def validate(self):
        if self.n_train < 0 or self.n_test < 0:
            raise InvalidSpec("split sizes must be non-negative")
        if not 0.0 <= self.anomaly_fraction <= 1.0:
            raise InvalidSpec(f"anomaly_fraction must lie in [0, 1], got {self.anomaly_fraction}")
        bad = set(self.anomaly_kinds) - set(ANOMALY_KINDS)
        if bad or (self.anomaly_fraction > 0 and not self.anomaly_kinds):
            raise InvalidSpec(f"unknown or missing anomaly kinds: {sorted(bad)}")
        if self.duration_sigma < 0 or self.spacing_us <= 0:
            raise InvalidSpec("duration_sigma must be >= 0 and spacing_us > 0")
        if not self.catalog or not any(t.appears_at is None for t in self.catalog):
            raise InvalidSpec("catalog needs at least one template present from the start")
        for t in self.catalog:
            if t.weight <= 0:
                raise InvalidSpec(f"template {t.name} has non-positive weight")
            if t.appears_at is not None and not 0.0 <= t.appears_at <= 1.0:
                raise InvalidSpec(f"template {t.name}: appears_at outside [0, 1]")
            _check_unique_siblings(t.root, t.name)
        if self.anomaly_fraction > 0 and "truncation" in self.anomaly_kinds:
            if any(_size(t.root) < 2 for t in self.catalog):
                raise InvalidSpec("truncation needs templates with at least two spans")

    def scaled(self, **kw) -> "SynthConfig":
        return replace(self, **kw)


def _check_unique_siblings(node: Node, name: str):
    types = [c.span_type for c in node.children]
    if len(types) != len(set(types)):
        raise InvalidSpec(f"template {name}: repeated sibling span type under {node.span_type}")
    for c in node.children:
        _check_unique_siblings(c, name)


@dataclass
class _Span:
    span_type: str
    duration_us: int
    parent: int | None  # index into the trace's span list
    offset_us: int


@dataclass
class SynthTrace:
    split: str
    trace_id: str
    start_us: int
    template: str
    spans: list[_Span]
    label: str | None = None

    def topology(self) -> frozenset[str]:
        paths: list[str] = []
        for s in self.spans:
            paths.append(s.span_type if s.parent is None else paths[s.parent] + "→" + s.span_type)
        return frozenset(paths)

    def records(self) -> list[dict]:
        out = []
        for i, s in enumerate(self.spans):
            service, _, op = s.span_type.partition(":")
            out.append({
                "trace_id": self.trace_id,
                "span_id": f"{self.trace_id}.{i}",
                "parent_span_id": None if s.parent is None else f"{self.trace_id}.{s.parent}",
                "service": service,
                "operation": op,
                "start_us": self.start_us + s.offset_us,
                "duration_us": s.duration_us,
                "status": "200",
            })
        return out

    def lines(self) -> list[str]:
        return [json.dumps(r, separators=(",", ":")) for r in self.records()]


def _draw_spans(root: Node, rng: np.random.Generator, sigma: float) -> list[_Span]:
    spans: list[_Span] = []
    stack = [(root, None, 0)]
    while stack:
        node, parent, offset = stack.pop()
        dur = int(round(node.median_us * math.exp(sigma * rng.standard_normal())))
        idx = len(spans)
        spans.append(_Span(node.span_type, max(dur, 0), parent, offset))
        child_offset = offset + 10
        for child in reversed(node.children):
            stack.append((child, idx, child_offset))
            child_offset += 5
    return spans


def _spike(spans, rng):
    i = int(rng.integers(len(spans)))
    spans[i].duration_us = max(spans[i].duration_us, 1) * SPIKE_FACTOR
    return spans


def _insert_new(spans, rng, sigma):
    parent = int(rng.integers(len(spans)))
    kind = NEW_SPAN_POOL[int(rng.integers(len(NEW_SPAN_POOL)))]
    dur = int(round(350 * math.exp(sigma * rng.standard_normal())))
    spans.append(_Span(kind, dur, parent, spans[parent].offset_us + 1))
    return spans


def _truncate(spans, rng):
    cut = int(rng.integers(1, len(spans)))
    dropped = {cut}
    for i in range(cut + 1, len(spans)):
        if spans[i].parent in dropped:
            dropped.add(i)
    remap, kept = {}, []
    for i, s in enumerate(spans):
        if i in dropped:
            continue
        remap[i] = len(kept)
        kept.append(_Span(s.span_type, s.duration_us, None if s.parent is None else remap[s.parent], s.offset_us))
    return kept


def iter_synthetic(config: SynthConfig = SynthConfig(), seed: int = 0) -> Iterator[SynthTrace]:
    """Yield training traces then test traces, each in start-time order."""
    config.validate()
    rng = np.random.default_rng(seed)
    sigma = config.duration_sigma
    catalog = config.catalog

    n_anom = int(round(config.anomaly_fraction * config.n_test))
    anomalous: dict[int, str] = {}
    if n_anom:
        where = rng.choice(config.n_test, size=n_anom, replace=False)
        kinds = np.resize(np.asarray(config.anomaly_kinds), n_anom)
        rng.shuffle(kinds)
        anomalous = {int(i): str(k) for i, k in zip(where, kinds)}

    def mix(frac: float | None):
        live = [t for t in catalog if t.appears_at is None or (frac is not None and frac >= t.appears_at)]
        w = np.array([t.weight for t in live])
        return live, w / w.sum()

    base_live, base_p = mix(None)
    seen_topologies: set[frozenset] = set()
    clock = config.start_us
    for split, n in (("train", config.n_train), ("test", config.n_test)):
        for i in range(n):
            if split == "train":
                live, p = base_live, base_p
            else:
                live, p = mix(i / max(config.n_test, 1))
            tpl = live[int(rng.choice(len(live), p=p))]
            spans = _draw_spans(tpl.root, rng, sigma)
            label = None
            if split == "test" and i in anomalous:
                label = anomalous[i]
                if label == "latency_spike":
                    spans = _spike(spans, rng)
                elif label == "structure_new":
                    spans = _insert_new(spans, rng, sigma)
                else:
                    spans = _truncate(spans, rng)
            clock += max(1, int(round(rng.exponential(config.spacing_us))))
            tr = SynthTrace(split, f"{split}-{seed}-{i:07d}", clock, tpl.name, spans, label)
            topo = tr.topology()
            if split == "test" and label is None and topo not in seen_topologies:
                tr.label = "new_topology"
            seen_topologies.add(topo)
            yield tr


@dataclass
class SyntheticFiles:
    train: Path
    test: Path
    labels_path: Path
    labels: LabelSet
    counts: dict[str, int] = field(default_factory=dict)


def generate_synthetic(config: SynthConfig = SynthConfig(), seed: int = 0, out_dir=".") -> SyntheticFiles:
    """Write ``train.jsonl``, ``test.jsonl`` and ``labels.jsonl`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"train": out / "train.jsonl", "test": out / "test.jsonl"}
    labels = LabelSet(source=f"synthetic seed={seed}")
    counts = {"train": 0, "test": 0, "spans": 0}
    handles = {k: open(p, "w", encoding="utf-8") for k, p in paths.items()}
    try:
        for tr in iter_synthetic(config, seed):
            lines = tr.lines()
            handles[tr.split].write("\n".join(lines) + "\n")
            counts[tr.split] += 1
            counts["spans"] += len(lines)
            if tr.label is not None:
                labels.add(tr.trace_id, tr.label)
    finally:
        for fh in handles.values():
            fh.close()
    labels_path = out / "labels.jsonl"
    write_labels(labels, labels_path)
    return SyntheticFiles(paths["train"], paths["test"], labels_path, labels, counts)
