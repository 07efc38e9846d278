"""Replay helpers for desk-scale experiments."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Iterable

from ..clustering import Decision, SamplerParams, bootstrap
from ..encoding import SparseTraceVector, encode_trace
from ..pipeline import TraceSampler
from ..sketch import SketchHasher
from ..clustering import EvolvingSampler
from ..trace_model import assemble_traces, read_spans
from .metrics import EvalReport, LabelSet, evaluate


@dataclass(frozen=True)
class EncodedTrace:
    trace_id: str
    start_us: int
    vector: SparseTraceVector


def encode_file(path) -> list[EncodedTrace]:
    return [EncodedTrace(t.trace_id, t.start_us, encode_trace(t))
            for t in assemble_traces(read_spans(path))]


@dataclass
class ReplayResult:
    decisions: list[Decision]
    report: EvalReport | None
    seconds: float
    n_pmc: int
    n_omc: int


def replay_vectors(
    train: Iterable[EncodedTrace],
    test: Iterable[EncodedTrace],
    labels: LabelSet | None = None,
    params: SamplerParams | None = None,
    L: int = 100,
    p_max: int = 64,
    hash_seed: int = 0,
    **hasher_kw,
) -> ReplayResult:
    """Bootstrap on ``train`` and stream ``test`` through a fresh sampler."""
    hasher = SketchHasher(L=L, p_max=p_max, seed=hash_seed, **hasher_kw)
    sketches, origin = [], None
    for et in train:
        sketches.append(hasher.sketch(et.vector))
        origin = et.start_us if origin is None else max(origin, et.start_us)
    sampler: EvolvingSampler = bootstrap(sketches, params, origin_us=origin, L=L)
    t0 = time.perf_counter()
    decisions = [sampler.observe(hasher.sketch(et.vector), et.start_us, et.trace_id) for et in test]
    secs = time.perf_counter() - t0
    report = evaluate(decisions, labels) if labels is not None else None
    return ReplayResult(decisions, report, secs, sampler.n_pmc, sampler.n_omc)


def replay_files(train_path, test_path, labels: LabelSet | None = None,
                 params: SamplerParams | None = None, L: int = 100, p_max: int = 64,
                 hash_seed: int = 0) -> ReplayResult:
    """Full pipeline from span files: parse, assemble, encode, sketch, decide."""
    ts = TraceSampler.bootstrapped(assemble_traces(read_spans(train_path)), params,
                                   L=L, p_max=p_max, seed=hash_seed)
    t0 = time.perf_counter()
    decisions = [ts.process(t) for t in assemble_traces(read_spans(test_path))]
    secs = time.perf_counter() - t0
    report = evaluate(decisions, labels) if labels is not None else None
    return ReplayResult(decisions, report, secs, ts.sampler.n_pmc, ts.sampler.n_omc)
