"""End-to-end streaming: spans -> traces -> vectors -> sketches -> decisions."""
from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .clustering import Decision, EvolvingSampler, SamplerParams, bootstrap
from .encoding import encode_trace
from .errors import StateVersionMismatch
from .sketch import SketchHasher
from .trace_model import DEFAULT_TIMEOUT_US, AssemblyStats, Trace, assemble_traces, read_spans

log = logging.getLogger(__name__)

STATE_FORMAT = "tailsketch-state"
STATE_VERSION = 1


class TraceSampler:
    """Hasher and evolving sampler bundled behind a per-trace interface."""

    def __init__(self, hasher: SketchHasher, sampler: EvolvingSampler):
        self.hasher = hasher
        self.sampler = sampler

    @classmethod
    def fresh(cls, params: SamplerParams | None = None, L: int = 100, p_max: int = 64,
              seed: int = 0, **hasher_kw) -> "TraceSampler":
        return cls(SketchHasher(L=L, p_max=p_max, seed=seed, **hasher_kw), EvolvingSampler(params, L=L))

    @classmethod
    def bootstrapped(cls, training: Iterable[Trace], params: SamplerParams | None = None,
                     L: int = 100, p_max: int = 64, seed: int = 0, dbscan_eps: float | None = None,
                     min_pts: int = 3, **hasher_kw) -> "TraceSampler":
        hasher = SketchHasher(L=L, p_max=p_max, seed=seed, **hasher_kw)
        sketches, origin = [], None
        for trace in training:
            sketches.append(hasher.sketch(encode_trace(trace)))
            origin = trace.start_us if origin is None else max(origin, trace.start_us)
        sampler = bootstrap(sketches, params, dbscan_eps=dbscan_eps, min_pts=min_pts,
                            origin_us=origin, L=L)
        return cls(hasher, sampler)

    def process(self, trace: Trace) -> Decision:
        sk = self.hasher.sketch(encode_trace(trace))
        return self.sampler.observe(sk, trace.start_us, trace.trace_id)

    def to_dict(self) -> dict:
        return {
            "format": STATE_FORMAT,
            "version": STATE_VERSION,
            "hasher": self.hasher.to_dict(),
            "sampler": self.sampler.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TraceSampler":
        if data.get("format") != STATE_FORMAT or data.get("version") != STATE_VERSION:
            raise StateVersionMismatch(
                f"unsupported state document {data.get('format')!r} v{data.get('version')!r}"
            )
        return cls(SketchHasher.from_dict(data["hasher"]), EvolvingSampler.from_dict(data["sampler"]))

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "TraceSampler":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def decision_line(d: Decision) -> str:
    return json.dumps(d.to_dict(), separators=(",", ":"))


@dataclass
class RunConfig:
    train_path: Path | None = None
    test_path: Path | None = None
    decisions_path: Path | None = None
    sampled_path: Path | None = None
    state_path: Path | None = None
    params: SamplerParams = field(default_factory=SamplerParams)
    L: int = 100
    p_max: int = 64
    hash_seed: int = 0
    hash_bit: str = "mix"
    skip_first_token: bool = False
    dbscan_eps: float | None = None
    min_pts: int = 3
    timeout_us: int | None = DEFAULT_TIMEOUT_US
    empty_state: bool = False
    vectors_path: Path | None = None

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")
        for name in ("train_path", "test_path", "decisions_path", "sampled_path", "state_path", "vectors_path"):
            value = getattr(self, name)
            if value is not None:
                setattr(self, name, Path(value))


def _traces(path, timeout_us, stats: AssemblyStats) -> Iterator[Trace]:
    return assemble_traces(read_spans(path), timeout_us=timeout_us, stats=stats)


def run_bootstrap(config: RunConfig) -> TraceSampler:
    """Build the hasher, sketch the training traces, cluster them and persist."""
    if config.train_path is None or config.state_path is None:
        raise ValueError("bootstrap needs train_path and state_path")
    stats = AssemblyStats()
    ts = TraceSampler.bootstrapped(
        _traces(config.train_path, config.timeout_us, stats),
        config.params,
        L=config.L,
        p_max=config.p_max,
        seed=config.hash_seed,
        bit=config.hash_bit,
        skip_first_token=config.skip_first_token,
        dbscan_eps=config.dbscan_eps,
        min_pts=config.min_pts,
    )
    if stats.traces == 0:
        log.warning("training file %s holds no traces; state starts empty", config.train_path)
    log.info("bootstrap: %d traces -> %d PMC, %d OMC", stats.traces, ts.sampler.n_pmc, ts.sampler.n_omc)
    ts.save(config.state_path)
    return ts


@dataclass
class StreamSummary:
    traces: int
    sampled: int
    spans: int
    rejected: int
    adopted_spans: int
    n_pmc: int
    n_omc: int


def run_stream(config: RunConfig, sampler: TraceSampler | None = None) -> StreamSummary:
    """Replay the test file through the sampler, writing decisions and sampled spans."""
    if config.test_path is None or config.decisions_path is None:
        raise ValueError("run needs test_path and decisions_path")
    if sampler is None:
        if config.state_path is not None and config.state_path.exists():
            sampler = TraceSampler.load(config.state_path)
        elif config.empty_state:
            sampler = TraceSampler.fresh(config.params, L=config.L, p_max=config.p_max, seed=config.hash_seed,
                                         bit=config.hash_bit, skip_first_token=config.skip_first_token)
        else:
            raise FileNotFoundError(f"no sampler state at {config.state_path}; bootstrap first or use an empty state")

    stats = AssemblyStats()
    n = n_sampled = 0
    config.decisions_path.parent.mkdir(parents=True, exist_ok=True)
    dec_fh = open(config.decisions_path, "w", encoding="utf-8")
    out_fh = open(config.sampled_path, "w", encoding="utf-8") if config.sampled_path else None
    vec_fh = open(config.vectors_path, "w", encoding="utf-8") if config.vectors_path else None
    try:
        for trace in _traces(config.test_path, config.timeout_us, stats):
            if vec_fh is not None:
                vec = encode_trace(trace)
                vec_fh.write(json.dumps({"trace_id": trace.trace_id, "vector": vec.entries},
                                        ensure_ascii=False) + "\n")
            d = sampler.process(trace)
            dec_fh.write(decision_line(d) + "\n")
            n += 1
            if d.sampled:
                n_sampled += 1
                if out_fh is not None:
                    for rec in trace.records():
                        out_fh.write(rec.to_json() + "\n")
            if n % 10000 == 0:
                log.info("processed %d traces, sampled %d", n, n_sampled)
    finally:
        dec_fh.close()
        if out_fh is not None:
            out_fh.close()
        if vec_fh is not None:
            vec_fh.close()
    if config.state_path is not None:
        sampler.save(config.state_path)
    return StreamSummary(n, n_sampled, stats.spans, stats.rejected, stats.adopted_spans,
                         sampler.sampler.n_pmc, sampler.sampler.n_omc)
