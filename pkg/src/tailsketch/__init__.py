"""Streaming tail-based trace sampling.

Traces are encoded as sparse call-path/duration vectors, compressed into
L-bit streaming LSH sketches and fed to an evolving micro-cluster sampler
that keeps rare traces and budget-samples common ones.
"""
from .clustering import (
    Decision,
    EvolvingSampler,
    MicroCluster,
    Reason,
    Role,
    SamplerParams,
    bootstrap,
    prune_interval,
)
from .encoding import CallPath, SparseTraceVector, bucket_duration, encode_trace, extract_call_paths
from .pipeline import RunConfig, TraceSampler, run_bootstrap, run_stream
from .sketch import Sketch, SketchHasher, chunk_path, estimate_similarity, unit_embed
from .trace_model import SpanRecord, Trace, TraceAssembler, assemble_traces, read_spans, span_type

__version__ = "0.1.0"

__all__ = [
    "CallPath",
    "Decision",
    "EvolvingSampler",
    "MicroCluster",
    "Reason",
    "Role",
    "RunConfig",
    "SamplerParams",
    "Sketch",
    "SketchHasher",
    "SpanRecord",
    "SparseTraceVector",
    "Trace",
    "TraceAssembler",
    "TraceSampler",
    "assemble_traces",
    "bootstrap",
    "bucket_duration",
    "chunk_path",
    "encode_trace",
    "estimate_similarity",
    "extract_call_paths",
    "prune_interval",
    "read_spans",
    "run_bootstrap",
    "run_stream",
    "span_type",
    "unit_embed",
]
