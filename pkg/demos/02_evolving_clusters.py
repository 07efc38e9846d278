# %% [markdown]
# # Watching the micro-clusters move
#
# A logical clock (one tick per trace) keeps the arithmetic easy to follow.
# Pattern A arrives steadily, pattern B shows up a few times, then A stops
# and B takes over.

# %%
import numpy as np

from tailsketch import EvolvingSampler, SamplerParams, Sketch
from tailsketch.clustering import prune_interval

L = 100
rng = np.random.default_rng(0)
A = Sketch("A", rng.choice(np.array([-1, 1], dtype=np.int8), L))
B = Sketch("B", rng.choice(np.array([-1, 1], dtype=np.int8), L))

params = SamplerParams(clock="logical", lam=0.25, alpha=2.0)
print("prune check every", prune_interval(params.lam, params.alpha), "ticks")
s = EvolvingSampler(params, L=L)


def show(d):
    roles = {c.id: (c.role.value, round(c.w, 3)) for c in s.clusters.values()}
    print(f"tick {d.tick:4.0f}  {d.reason.value:10s} p={d.probability:.4f} sampled={d.sampled!s:5s} {roles}")


# %% [markdown]
# The first three A's: new outlier cluster, then w = 1*2^-0.25 + 1 = 1.84,
# then 2.55, which crosses alpha and turns the cluster into a PMC.

# %%
for _ in range(5):
    show(s.observe(A))

# %% [markdown]
# B arrives twice and is always kept while it is rare.  With only one PMC
# around, A itself has sampling probability 0.

# %%
for sk in (B, A, A, B, A):
    show(s.observe(sk))

# %% [markdown]
# Now A goes quiet.  Its weight halves every 4 ticks and the periodic check
# drops it once it is below alpha.  Note what happens to B at tick 12: it
# was promoted at tick 11 with w = 2.13, had decayed to 1.79 by the check,
# and was dropped.  The next B starts over as a new outlier cluster and
# makes it to PMC for good two ticks later.

# %%
for _ in range(12):
    show(s.observe(B))
print(s.summary())
