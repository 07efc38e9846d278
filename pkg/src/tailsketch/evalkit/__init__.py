from .experiment import EncodedTrace, ReplayResult, encode_file, replay_files, replay_vectors
from .metrics import (
    EvalReport,
    LabelSet,
    evaluate,
    evaluate_files,
    read_decisions,
    read_labels,
    save_report,
    uniform_baseline,
    uniform_decisions,
    write_labels,
)
from .synthetic import (
    ANOMALY_KINDS,
    DEFAULT_CATALOG,
    SynthConfig,
    SyntheticFiles,
    SynthTrace,
    Template,
    generate_synthetic,
    iter_synthetic,
)

__all__ = [
    "ANOMALY_KINDS",
    "DEFAULT_CATALOG",
    "EncodedTrace",
    "EvalReport",
    "LabelSet",
    "ReplayResult",
    "SynthConfig",
    "SynthTrace",
    "SyntheticFiles",
    "Template",
    "encode_file",
    "evaluate",
    "evaluate_files",
    "generate_synthetic",
    "iter_synthetic",
    "read_decisions",
    "read_labels",
    "replay_files",
    "replay_vectors",
    "save_report",
    "uniform_baseline",
    "uniform_decisions",
    "write_labels",
]
