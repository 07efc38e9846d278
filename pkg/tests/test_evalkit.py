import copy
import filecmp
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailsketch.encoding import bucket_duration, encode_trace
from tailsketch.errors import InvalidSpec
from tailsketch.evalkit import (
    DEFAULT_CATALOG,
    LabelSet,
    SynthConfig,
    evaluate,
    evaluate_files,
    generate_synthetic,
    iter_synthetic,
    read_labels,
    uniform_baseline,
    uniform_decisions,
    write_labels,
)
from tailsketch.evalkit import synthetic
from tailsketch.trace_model import AssemblyStats, assemble_traces, build_trace, read_spans, span_from_dict


def decision(tid, sampled, reason="PMC_BUDGET"):
    return {"trace_id": tid, "sampled": sampled, "reason": reason,
            "probability": 0.01, "cluster_id": 0, "tick": 0.0}


# metrics ------------------------------------------------------------------

def test_full_coverage_at_low_rate():
    ids = [f"t{i}" for i in range(31814)]
    labeled = ids[:624]
    sampled = set(labeled) | set(ids[1000:1120])
    assert len(sampled) == 744
    report = evaluate([decision(t, t in sampled) for t in ids], LabelSet.from_ids(labeled))
    assert report.coverage == 1.0
    assert report.sampling_rate == pytest.approx(744 / 31814)
    assert round(100 * report.sampling_rate, 2) == 2.34


def test_nothing_sampled():
    ids = [f"t{i}" for i in range(50)]
    r = evaluate([decision(t, False) for t in ids], LabelSet.from_ids(ids[:5]))
    assert (r.coverage, r.sampling_rate, r.sampled) == (0.0, 0.0, 0)


def test_nested_sets():
    observed = [f"o{i}" for i in range(20)]
    sampled = set(observed[:7])
    labels = LabelSet.from_ids(observed[:3])
    # brute force over the sets
    cov = len(labels.ids & sampled) / len(labels.ids)
    rate = len(sampled) / len(observed)
    r = evaluate([decision(t, t in sampled) for t in observed], labels)
    assert (r.coverage, r.sampling_rate) == (cov, rate) == (1.0, 0.35)


def test_labels_absent_from_log_count_as_missed():
    r = evaluate([decision("a", True)], LabelSet.from_ids(["a", "ghost"]))
    assert r.coverage == 0.5


def test_empty_labels_are_vacuous_success():
    assert evaluate([decision("a", False)], LabelSet()).coverage == 1.0


def test_duplicate_label_rejected():
    with pytest.raises(ValueError):
        LabelSet.from_ids(["a", "a"])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=60), st.randoms(use_true_random=False))
def test_evaluate_ignores_line_order(flags, rnd):
    ds = [decision(f"t{i}", f) for i, f in enumerate(flags)]
    labels = LabelSet.from_ids([f"t{i}" for i in range(0, len(flags), 3)])
    shuffled = ds[:]
    rnd.shuffle(shuffled)
    assert evaluate(ds, labels) == evaluate(shuffled, labels)


def test_label_and_report_files(tmp_path):
    labels = LabelSet({"a": "latency_spike", "b": "new_topology"})
    write_labels(labels, tmp_path / "l.jsonl")
    assert read_labels(tmp_path / "l.jsonl").kinds == labels.kinds
    (tmp_path / "d.jsonl").write_text("\n".join(json.dumps(decision(t, t == "a")) for t in "abc") + "\n")
    r = evaluate_files(tmp_path / "d.jsonl", tmp_path / "l.jsonl")
    assert r.coverage_by_kind == {"latency_spike": 1.0, "new_topology": 0.0}


# uniform baseline ----------------------------------------------------------

def test_uniform_extremes():
    ids = [str(i) for i in range(1000)]
    assert uniform_baseline(ids, 1.0) == set(ids)
    assert uniform_baseline(ids, 0.0) == set()


def test_uniform_binomial_bounds():
    n, b = 100_000, 0.01
    k = len(uniform_baseline([str(i) for i in range(n)], b, seed=7))
    sigma = math.sqrt(n * b * (1 - b))
    assert abs(k - n * b) <= 5 * sigma


def test_uniform_decisions_feed_evaluate():
    ids = [str(i) for i in range(200)]
    r = evaluate(uniform_decisions(ids, 0.5, seed=1), LabelSet.from_ids(ids))
    assert r.coverage == r.sampling_rate == len(uniform_baseline(ids, 0.5, seed=1)) / 200


# synthetic generator ---------------------------------------------------------

SMALL = SynthConfig(n_train=200, n_test=4000, anomaly_fraction=0.01)


def test_generator_byte_identical(tmp_path):
    a = generate_synthetic(SMALL, seed=11, out_dir=tmp_path / "a")
    b = generate_synthetic(SMALL, seed=11, out_dir=tmp_path / "b")
    for x, y in ((a.train, b.train), (a.test, b.test), (a.labels_path, b.labels_path)):
        assert filecmp.cmp(x, y, shallow=False)
    c = generate_synthetic(SMALL, seed=12, out_dir=tmp_path / "c")
    assert not filecmp.cmp(a.test, c.test, shallow=False)


def test_exact_anomaly_quota():
    cfg = SynthConfig(n_train=0, n_test=50_000, anomaly_fraction=0.01)
    injected = [t.label for t in iter_synthetic(cfg, seed=0) if t.label not in (None, "new_topology")]
    assert len(injected) == 500
    counts = {k: injected.count(k) for k in set(injected)}
    assert set(counts) == set(cfg.anomaly_kinds)
    assert max(counts.values()) - min(counts.values()) <= 1


def template_paths(node, prefix=""):
    here = node.span_type if not prefix else prefix + "→" + node.span_type
    out = {here}
    for c in node.children:
        out |= template_paths(c, here)
    return out


def test_spike_keeps_paths_and_moves_two_buckets():
    by_name = {t.name: t for t in DEFAULT_CATALOG}
    spikes = [t for t in iter_synthetic(SMALL, seed=2) if t.label == "latency_spike"]
    assert spikes
    for t in spikes:
        assert set(t.topology()) == template_paths(by_name[t.template].root)

    rng = np.random.default_rng(0)
    for tpl in DEFAULT_CATALOG:
        spans = synthetic._draw_spans(tpl.root, rng, 0.3)
        before = [bucket_duration(s.duration_us) for s in spans]
        after = [bucket_duration(s.duration_us) for s in synthetic._spike(copy.deepcopy(spans), rng)]
        moved = [a - b for a, b in zip(after, before) if a != b]
        assert moved == [2]


def test_generated_traces_assemble_cleanly(tmp_path):
    files = generate_synthetic(SMALL, seed=3, out_dir=tmp_path)
    for path, n in ((files.train, 200), (files.test, 4000)):
        stats = AssemblyStats()
        traces = list(assemble_traces(read_spans(path), stats=stats))
        assert len(traces) == n
        assert stats.warnings == 0 and stats.rejected == 0
        assert all(len(encode_trace(t)) >= 1 for t in traces[:50])


def test_fraction_zero_only_first_occurrences():
    cfg = SynthConfig(n_train=300, n_test=5000, anomaly_fraction=0.0)
    seen, expected = set(), set()
    labels = {}
    for t in iter_synthetic(cfg, seed=5):
        topo = t.topology()
        if t.split == "test" and topo not in seen:
            expected.add(t.trace_id)
        seen.add(topo)
        if t.label is not None:
            labels[t.trace_id] = t.label
    assert set(labels) == expected and expected
    assert set(labels.values()) == {"new_topology"}


def test_test_only_templates_labeled_once_each():
    cfg = SynthConfig(n_train=300, n_test=5000, anomaly_fraction=0.0, duration_sigma=0.0)
    firsts = [t.template for t in iter_synthetic(cfg, seed=1) if t.label == "new_topology"]
    assert sorted(firsts) == sorted(t.name for t in DEFAULT_CATALOG if t.appears_at is not None)


def test_truncation_drops_a_subtree():
    rng = np.random.default_rng(1)
    tpl = DEFAULT_CATALOG[0]
    spans = synthetic._draw_spans(tpl.root, rng, 0.3)
    cut = synthetic._truncate(copy.deepcopy(spans), rng)
    assert 1 <= len(cut) < len(spans)
    recs = []
    for i, s in enumerate(cut):
        svc, _, op = s.span_type.partition(":")
        recs.append(span_from_dict({"trace_id": "x", "span_id": str(i),
                                    "parent_span_id": None if s.parent is None else str(s.parent),
                                    "service": svc, "operation": op, "start_us": s.offset_us,
                                    "duration_us": s.duration_us}))
    assert build_trace("x", recs).adopted == 0


@pytest.mark.parametrize("bad", [
    {"anomaly_fraction": 1.5},
    {"n_test": -1},
    {"anomaly_kinds": ("gremlins",)},
    {"spacing_us": 0},
])
def test_invalid_spec(bad):
    with pytest.raises(InvalidSpec):
        list(iter_synthetic(SynthConfig(**bad), seed=0))
