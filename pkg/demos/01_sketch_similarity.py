# %% [markdown]
# # Sketches of small traces
#
# Two hand-built traces that differ by one extra span, run through the
# encoder and the sketcher.  Then a sweep over random vector pairs to see how
# bit agreement lines up with 1 - arccos(cos)/pi.

# %%
import math

import numpy as np

from tailsketch import SketchHasher, encode_trace, estimate_similarity
from tailsketch.encoding import SparseTraceVector
from tailsketch.sketch import lsh_expected_similarity
from tailsketch.trace_model import SpanRecord, build_trace


def rec(tid, sid, parent, service, start, dur):
    return SpanRecord(tid, sid, parent, service, "", start, dur)


def checkout(tid, with_inventory=False):
    spans = [
        rec(tid, "a", None, "frontend", 0, 5000),
        rec(tid, "b", "a", "cart", 10, 800),
        rec(tid, "d", "a", "payment", 20, 3000),
        rec(tid, "e", "d", "fraud", 30, 200),
        rec(tid, "f", "d", "ledger", 40, 90),
    ]
    if with_inventory:
        spans.append(rec(tid, "c", "b", "inventory", 15, 40))
    return build_trace(tid, spans)


t1, t2 = checkout("t1"), checkout("t2", with_inventory=True)
v1, v2 = encode_trace(t1), encode_trace(t2)
for k, b in v2.entries.items():
    print(f"{k:40s} bucket {b}   {'(new)' if k not in v1.entries else ''}")

# %%
h = SketchHasher(L=100, seed=0)
s1, s2 = h.sketch(v1), h.sketch(v2)
print("bits that differ:", int(np.count_nonzero(s1.bits != s2.bits)), "of", s1.L)
print("estimated similarity:", estimate_similarity(s1, s2))
print("packed sketch:", s1.pack().hex())

# %% [markdown]
# Exact cosine of the two vectors for comparison.

# %%
dot = sum(b * v2.entries.get(k, 0) for k, b in v1.entries.items())
cos = dot / math.sqrt(sum(b * b for b in v1.entries.values()) * sum(b * b for b in v2.entries.values()))
print(f"cosine {cos:.4f} -> expected agreement {lsh_expected_similarity(cos):.4f}")

# %% [markdown]
# ## Agreement vs. cosine on random pairs

# %%
rng = np.random.default_rng(1)
vocab = [f"gw:route→svc{i}:op" for i in range(300)]
rows = []
for k in range(60):
    keys = rng.choice(len(vocab), size=30, replace=False)
    shared = int(rng.integers(0, 16))
    u = {vocab[i]: int(rng.integers(1, 8)) for i in keys[:15]}
    w = {vocab[i]: int(rng.integers(1, 8)) for i in np.concatenate([keys[:shared], keys[15:30 - shared]])}
    c = sum(b * w.get(p, 0) for p, b in u.items()) / math.sqrt(
        sum(b * b for b in u.values()) * sum(b * b for b in w.values()))
    for L in (100, 1000):
        hh = SketchHasher(L=L, seed=100 + k)
        est = estimate_similarity(hh.sketch(SparseTraceVector("u", u)), hh.sketch(SparseTraceVector("w", w)))
        rows.append((L, c, est, lsh_expected_similarity(c)))

rows = np.array(rows)
for L in (100, 1000):
    sel = rows[rows[:, 0] == L]
    print(f"L={L:5d}  mean |est - expected| = {np.mean(np.abs(sel[:, 2] - sel[:, 3])):.4f}")
