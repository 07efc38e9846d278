# %% [markdown]
# # Replaying a synthetic workload
#
# A small seeded dataset (10k test traces, 1% injected faults) through the
# file-based pipeline, scored against the labels, next to uniform head
# sampling at the same budget.  Then a quick look at sketch length.

# %%
import tempfile
from pathlib import Path

from tailsketch import RunConfig, SamplerParams, run_bootstrap, run_stream
from tailsketch.evalkit import (
    SynthConfig,
    encode_file,
    evaluate,
    generate_synthetic,
    read_decisions,
    replay_vectors,
    uniform_decisions,
)

work = Path(tempfile.mkdtemp(prefix="tailsketch-demo-"))
files = generate_synthetic(SynthConfig(n_train=1000, n_test=10_000, anomaly_fraction=0.01), seed=3, out_dir=work)
print(files.counts, files.labels.count_by_kind())

# %%
cfg = RunConfig(train_path=files.train, test_path=files.test, decisions_path=work / "decisions.jsonl",
                sampled_path=work / "sampled.jsonl", state_path=work / "state.json",
                params=SamplerParams(budget=0.01))
boot = run_bootstrap(cfg)
print("after bootstrap:", boot.sampler.n_pmc, "PMC,", boot.sampler.n_omc, "OMC")
summary = run_stream(cfg)
print(summary)

# %%
decisions = read_decisions(cfg.decisions_path)
ours = evaluate(decisions, files.labels)
uniform = evaluate(uniform_decisions([d.trace_id for d in decisions], 0.01, seed=0), files.labels)
print(f"{'':10s} coverage  rate")
print(f"{'sampler':10s} {ours.coverage:8.3f}  {ours.sampling_rate:.4f}")
print(f"{'uniform':10s} {uniform.coverage:8.3f}  {uniform.sampling_rate:.4f}")
print("per kind:", {k: round(v, 3) for k, v in ours.coverage_by_kind.items()})

# %% [markdown]
# ## Sketch length
#
# Vectors are encoded once; only the sketching and clustering are repeated.

# %%
train, test = encode_file(files.train), encode_file(files.test)
for L in (25, 50, 75, 100, 200):
    r = replay_vectors(train, test, files.labels, SamplerParams(budget=0.01), L=L)
    print(f"L={L:3d}  coverage {r.report.coverage:.3f}  rate {r.report.sampling_rate:.4f}  "
          f"{len(test) / r.seconds:,.0f} traces/s")
