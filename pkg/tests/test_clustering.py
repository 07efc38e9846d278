import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailsketch.clustering import (
    Decision,
    EvolvingSampler,
    MicroCluster,
    Reason,
    Role,
    SamplerParams,
    bootstrap,
    candidate_radius,
    decay_to,
    merge,
    prune_interval,
)
from tailsketch.errors import InvalidAlpha, NoPMC, StateVersionMismatch, TimeReversal
from tailsketch.sketch import Sketch, unit_embed

L = 100


def sk(bits, tid=None):
    return Sketch(tid, np.asarray(bits, dtype=np.int8))


def base_bits(seed=0):
    return np.random.default_rng(seed).choice(np.array([-1, 1], dtype=np.int8), L)


def flip(bits, n, start=0):
    out = bits.copy()
    out[start:start + n] *= -1
    return out


def cluster(w=1.0, s=None, t=0.0, role=Role.PMC, cid=0):
    s = unit_embed(sk(base_bits())) if s is None else s
    return MicroCluster(cid, role, w, s * w, w * float(s @ s), t)


# decay ------------------------------------------------------------------

def test_decay_examples():
    assert decay_to(cluster(w=1.0), 4, 0.25).w == pytest.approx(0.5, abs=1e-15)
    c = cluster(w=3.0, t=2.0)
    before = (c.w, c.cf1.copy(), c.cf2)
    decay_to(c, 2.0, 0.25)
    assert (c.w, c.cf2) == (before[0], before[2]) and np.array_equal(c.cf1, before[1])
    assert decay_to(cluster(w=2.0), 1, 1.0).w == pytest.approx(1.0, abs=1e-15)


def test_decay_time_reversal():
    with pytest.raises(TimeReversal):
        decay_to(cluster(t=5.0), 4.0, 0.25)


@given(st.floats(0.01, 2.0), st.floats(0, 20), st.floats(0, 20), st.floats(0.1, 50))
def test_decay_composes(lam, dt1, dt2, w):
    a, b = cluster(w=w), cluster(w=w)
    decay_to(decay_to(a, dt1, lam), dt1 + dt2, lam)
    decay_to(b, dt1 + dt2, lam)
    assert abs(a.w - b.w) <= 1e-9 and abs(a.cf2 - b.cf2) <= 1e-9
    assert np.max(np.abs(a.cf1 - b.cf1)) <= 1e-9


# radius / merge ---------------------------------------------------------

def test_candidate_radius_coincident():
    s = unit_embed(sk(base_bits()))
    assert candidate_radius(cluster(s=s), s, 0.0, 0.25) == pytest.approx(0.0, abs=1e-7)


def test_candidate_radius_antipodal():
    e1 = np.zeros(L)
    e1[0] = 1.0
    c = cluster(s=e1)
    # two antipodal unit points: centre 0, cf2/w = 1
    assert candidate_radius(c, -e1, 0.0, 0.25) == pytest.approx(1.0, abs=1e-12)
    assert c.w == 1.0  # not mutated


def test_candidate_radius_one_bit_apart():
    a = base_bits()
    s_a, s_b = unit_embed(sk(a)), unit_embed(sk(flip(a, 1)))
    # distance 0.2 between the two points, radius half of it
    assert candidate_radius(cluster(s=s_a), s_b, 0.0, 0.25) == pytest.approx(0.1, abs=1e-12)


def test_merge_weight_formula():
    c = merge(cluster(w=1.0), unit_embed(sk(base_bits())), 1.0, 0.25)
    assert c.w == pytest.approx(2 ** -0.25 + 1, abs=1e-12)
    assert c.w == pytest.approx(1.8409, abs=1e-4)


def test_merge_identical_into_singleton():
    s = unit_embed(sk(base_bits()))
    c = merge(cluster(s=s), s, 0.0, 0.25)
    assert c.w == 2.0
    assert np.allclose(c.center, s, atol=1e-15)


@given(st.floats(0.5, 30), st.floats(0, 10), st.floats(0.05, 1.0), st.integers(0, 50))
def test_merge_center_matches_paper_update(w, dt, lam, nflip):
    a = base_bits()
    c = cluster(w=w, s=unit_embed(sk(a)))
    c_prev, w_prev = c.center.copy(), c.w
    v = unit_embed(sk(flip(a, nflip)))
    merge(c, v, dt, lam)
    f = 2 ** (-lam * dt)
    w_star = w_prev * f + 1
    assert c.w == pytest.approx(w_star, abs=1e-9)
    assert np.max(np.abs(c.center - (c_prev * w_prev * f + v) / w_star)) <= 1e-9


# cf statistics vs. brute force --------------------------------------------

def recompute(members, t, lam):
    """Decayed sums straight from the member list [(arrival tick, vector), ...]."""
    ws = np.array([2 ** (-lam * (t - tj)) for tj, _ in members])
    X = np.vstack([v for _, v in members])
    w = ws.sum()
    cf1 = (ws[:, None] * X).sum(axis=0)
    cf2 = float((ws * np.einsum("ij,ij->i", X, X)).sum())
    c = cf1 / w
    dev = X - c
    r = math.sqrt(float((ws * np.einsum("ij,ij->i", dev, dev)).sum()) / w)
    return w, cf1, cf2, c, r


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 3), st.integers(0, 30), st.booleans()), min_size=1, max_size=50),
       st.floats(0.05, 1.5), st.integers(0, 1000))
def test_cf_statistics_match_recomputation(steps, lam, seed):
    base = base_bits(seed)
    t = 0.0
    v0 = unit_embed(sk(base))
    c = MicroCluster.singleton(0, Role.OMC, v0, t)
    members = [(t, v0)]
    for dt, nflip, only_decay in steps:
        t += dt
        if only_decay:
            c.decay_to(t, lam)
        else:
            v = unit_embed(sk(flip(base, nflip)))
            c.merge(v, t, lam)
            members.append((t, v))
    c.decay_to(t, lam)
    w, cf1, cf2, center, r = recompute(members, t, lam)
    assert abs(c.w - w) <= 1e-9
    assert np.max(np.abs(c.cf1 - cf1)) <= 1e-9
    assert abs(c.cf2 - cf2) <= 1e-9
    assert np.max(np.abs(c.center - center)) <= 1e-9
    assert abs(c.radius - r) <= 1e-9
    assert np.linalg.norm(c.center) <= 1 + 1e-9


# sampling probability / prune interval ---------------------------------------

def sampler_with_pmcs(weights, budget=0.01):
    s = EvolvingSampler(SamplerParams(budget=budget), L=L)
    for i, w in enumerate(weights):
        v = unit_embed(sk(base_bits(i)))
        s.add_cluster(Role.PMC, w, v * w, w, 0.0)
    return s


def test_sampling_probability_examples():
    assert sampler_with_pmcs([5.0]).sampling_probability(5.0) == 0.0
    assert sampler_with_pmcs([3.0, 3.0]).sampling_probability(3.0) == pytest.approx(0.005, abs=1e-15)
    assert sampler_with_pmcs([3.0, 3.0], budget=0.0).sampling_probability(3.0) == 0.0
    with pytest.raises(NoPMC):
        EvolvingSampler(SamplerParams(), L=L).sampling_probability(1.0)


def test_sampling_probability_uses_decayed_weights():
    s = sampler_with_pmcs([4.0, 4.0])
    s.now = 4.0  # second cluster decays to 2 (lambda = 0.25)
    s.clusters[0].decay_to(4.0, 0.25)
    s.clusters[0].w = 4.0
    assert s.sampling_probability(4.0) == pytest.approx(0.01 * (1 - 4 / 6), abs=1e-15)


@pytest.mark.parametrize("lam, alpha, expected", [(1, 2, 1), (0.25, 2, 4), (0.5, 4 / 3, 4)])
def test_prune_interval_examples(lam, alpha, expected):
    assert prune_interval(lam, alpha) == expected


@pytest.mark.parametrize("alpha", [1.0, 0.5])
def test_prune_interval_rejects_alpha(alpha):
    with pytest.raises(InvalidAlpha):
        prune_interval(0.25, alpha)


def test_params_validation():
    with pytest.raises(InvalidAlpha):
        SamplerParams(alpha=1.0)
    for bad in ({"budget": 1.5}, {"lam": 0}, {"epsilon": 0}, {"clock": "wall"}):
        with pytest.raises(ValueError):
            SamplerParams(**bad)


# observe ----------------------------------------------------------------

def logical(**kw):
    return EvolvingSampler(SamplerParams(clock="logical", **kw), L=L)


def test_observe_single_pmc_never_samples():
    s = logical()
    bits = base_bits()
    v = unit_embed(sk(bits))
    s.add_cluster(Role.PMC, 50.0, v * 50, 50.0, 0.0)
    d = s.observe(sk(bits, "t1"))
    assert d.reason is Reason.PMC_BUDGET and d.probability == 0.0 and not d.sampled


def test_observe_empty_state_creates_omc():
    s = logical()
    d = s.observe(sk(base_bits(), "first"))
    assert d == Decision("first", True, Reason.NEW_OMC, 1.0, 0, 1.0)
    assert s.n_omc == 1 and s.n_pmc == 0


def hand_iterate(lam, alpha, n):
    """Arrival index at which w <- w * 2^-lam + 1 first reaches alpha."""
    w = 1.0
    for k in range(2, n + 1):
        w = w * 2 ** -lam + 1
        if w >= alpha:
            return k
    return None


@pytest.mark.parametrize("lam", [0.25, 1.0, 2.0, 0.05])
def test_omc_promotion_arrival(lam):
    expected = hand_iterate(lam, 2.0, 50)
    s = logical(lam=lam)
    bits = base_bits()
    reasons = []
    for k in range(1, (expected or 10) + 2):
        d = s.observe(sk(bits, f"t{k}"))
        reasons.append(d.reason)
        if k < (expected or 99):
            assert s.n_pmc == 0
    if expected is None:
        assert Reason.PMC_BUDGET not in reasons
    else:
        assert reasons[0] is Reason.NEW_OMC
        assert reasons[1:expected] == [Reason.OMC_RARE] * (expected - 1)
        assert reasons[expected] is Reason.PMC_BUDGET
        assert s.n_pmc == 1 and s.counters.promoted == 1


def test_promotion_at_lambda_quarter_is_third_arrival():
    assert hand_iterate(0.25, 2.0, 10) == 3


def test_distant_sketch_skips_pmc_and_omc():
    s = logical()
    a = base_bits()
    s.observe(sk(a))
    d = s.observe(sk(flip(a, 10)))
    assert d.reason is Reason.NEW_OMC and d.cluster_id == 1


def test_nearest_tie_goes_to_lowest_id():
    s = logical(epsilon=2.0)
    e = np.zeros(L)
    e[0] = 1.0
    s.add_cluster(Role.OMC, 1.0, -e, 1.0, 0.0)
    s.add_cluster(Role.OMC, 1.0, -e, 1.0, 0.0)
    d = s.observe(e)
    assert d.cluster_id == 0


# periodic prune ---------------------------------------------------------

def test_prune_keeps_pmc_at_alpha():
    s = EvolvingSampler(SamplerParams(), L=L)
    v = unit_embed(sk(base_bits()))
    s.add_cluster(Role.PMC, 2.0, v * 2, 2.0, 4.0)
    s.now = 4.0
    assert s.periodic_prune() == []
    assert s.next_prune_at == 8.0


def test_prune_removes_untouched_pmc_within_tp():
    p = SamplerParams(lam=0.25, alpha=2.0)
    tp = prune_interval(p.lam, p.alpha)
    w0 = 2.0 + 1e-6
    # iterate the decay numerically tick by tick
    w, ticks = w0, 0
    while w >= p.alpha:
        w *= 2 ** -p.lam
        ticks += 1
    assert ticks <= tp
    s = EvolvingSampler(p, L=L)
    v = unit_embed(sk(base_bits()))
    c = s.add_cluster(Role.PMC, w0, v * w0, w0, 0.0)
    s.advance(tp)
    assert c.id not in s.clusters and s.counters.pruned == 1


def test_prune_never_touches_omcs():
    s = EvolvingSampler(SamplerParams(), L=L)
    v = unit_embed(sk(base_bits()))
    c = s.add_cluster(Role.OMC, 0.01, v * 0.01, 0.01, 0.0)
    s.advance(100.0)
    assert c.id in s.clusters and s.clusters[c.id].w == 0.01


def test_prune_schedule_skips_gaps():
    s = EvolvingSampler(SamplerParams(), L=L)
    s.advance(17.5)
    assert s.next_prune_at == 20.0


# bootstrap --------------------------------------------------------------

def brute_dbscan(X, eps, min_pts):
    """Neighbourhoods enumerated directly; returns (list of member sets, noise set)."""
    n = len(X)
    nbrs = [{j for j in range(n) if np.linalg.norm(X[i] - X[j]) <= eps} for i in range(n)]
    core = {i for i in range(n) if len(nbrs[i]) >= min_pts}
    seen, clusters = set(), []
    for i in sorted(core):
        if i in seen:
            continue
        comp, stack = set(), [i]
        while stack:
            j = stack.pop()
            if j in comp:
                continue
            comp.add(j)
            if j in core:
                stack.extend(nbrs[j] - comp)
        seen |= comp
        clusters.append(comp)
    noise = set(range(n)) - set().union(*clusters) if clusters else set(range(n))
    return clusters, noise


def test_bootstrap_empty():
    s = bootstrap([], SamplerParams())
    assert s.clusters == {} and s.now == 0.0 and s.next_prune_at == 4.0


def test_bootstrap_identical_copies():
    bits = base_bits()
    s = bootstrap([sk(bits) for _ in range(10)], SamplerParams(), min_pts=3)
    (c,) = s.clusters.values()
    assert c.role is Role.PMC and c.w == 10 and c.radius == pytest.approx(0.0, abs=1e-7)


def test_bootstrap_matches_brute_force_dbscan():
    u, v = base_bits(1), base_bits(2)
    sketches = [sk(u) for _ in range(5)] + [sk(v)]
    s = bootstrap(sketches, SamplerParams(), min_pts=3)
    X = np.vstack([unit_embed(x) for x in sketches])
    clusters, noise = brute_dbscan(X, 0.02, 3)
    assert sorted(len(c) for c in clusters) == [5] and noise == {5}
    pmcs, omcs = s.pmcs(), s.omcs()
    assert [c.w for c in pmcs] == [5.0] and [c.w for c in omcs] == [1.0]
    assert np.allclose(pmcs[0].cf1, X[:5].sum(axis=0))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=20),
       st.integers(2, 4))
def test_bootstrap_random_vs_oracle(spec, min_pts):
    # a few base sketches, each copy perturbed by 0-3 flipped bits
    bases = [base_bits(100 + k) for k in range(4)]
    sketches = [sk(flip(bases[b], n)) for b, n in spec]
    eps = 0.45  # connects up to 5 differing bits at L = 100
    s = bootstrap(sketches, SamplerParams(), dbscan_eps=eps, min_pts=min_pts)
    X = np.vstack([unit_embed(x) for x in sketches])
    clusters, noise = brute_dbscan(X, eps, min_pts)
    got = sorted(c.w for c in s.clusters.values() if c.w > 1 or c.role is Role.PMC)
    want = sorted(float(len(c)) for c in clusters if len(c) > 1 or min_pts <= 1)
    # border points are unique here (disjoint bases), so the partitions agree
    assert got == want
    assert sum(1 for c in s.clusters.values() if c.role is Role.OMC and c.w == 1.0) >= len(noise)
    assert sum(c.w for c in s.clusters.values()) == len(sketches)


# invariants across a random stream -----------------------------------------

def random_stream(n, seed, n_bases=6, noise=0.05):
    rng = np.random.default_rng(seed)
    bases = [base_bits(seed * 10 + k) for k in range(n_bases)]
    probs = rng.dirichlet(np.ones(n_bases))
    out = []
    for i in range(n):
        b = bases[int(rng.choice(n_bases, p=probs))]
        if rng.random() < noise:
            b = flip(b, int(rng.integers(1, 30)), int(rng.integers(0, 70)))
        out.append(sk(b, f"t{i}"))
    return out


def run(sampler, stream, t0=0, step=200_000):
    return [sampler.observe(s, t0 + i * step) for i, s in enumerate(stream)]


def test_conservation_and_roles():
    stream = random_stream(2000, 3)
    s = bootstrap(stream[:200], SamplerParams())
    decisions = run(s, stream[200:])
    cnt = s.counters
    assert sum(cnt.by_reason.values()) == cnt.observed == 1800
    assert cnt.sampled == sum(d.sampled for d in decisions)
    for d in decisions:
        if d.reason is Reason.PMC_BUDGET:
            assert 0 <= d.probability <= 0.01
        else:
            assert d.probability == 1.0 and d.sampled
    for c in s.clusters.values():
        assert c.last_update <= s.now
        assert np.linalg.norm(c.center) <= 1 + 1e-9
        assert c.radius >= 0


def test_determinism_and_persistence():
    stream = random_stream(1500, 5)
    a = bootstrap(stream[:100], SamplerParams(rng_seed=9))
    b = bootstrap(stream[:100], SamplerParams(rng_seed=9))
    da = run(a, stream[100:])
    db = run(b, stream[100:800])
    restored = EvolvingSampler.from_dict(json.loads(json.dumps(b.to_dict())))
    db += run(restored, stream[800:], t0=700 * 200_000)
    assert da == db


def test_state_version_checked():
    d = EvolvingSampler(SamplerParams(), L=L).to_dict()
    d["version"] = 99
    with pytest.raises(StateVersionMismatch):
        EvolvingSampler.from_dict(d)


def test_out_of_order_timestamps_never_rewind():
    s = EvolvingSampler(SamplerParams(), L=L)
    s.observe(sk(base_bits()), 10_000_000)
    d = s.observe(sk(base_bits()), 5_000_000)
    assert d.tick == s.now == 0.0
    d = s.observe(sk(base_bits()), 12_000_000)
    assert d.tick == 2.0


def test_budget_stationary_two_pmcs():
    a, b = base_bits(1), base_bits(2)
    s = bootstrap([sk(a)] * 50 + [sk(b)] * 50, SamplerParams(clock="logical"))
    n = 10_000
    decisions = [s.observe(sk(a if i % 2 else b)) for i in range(n)]
    assert all(d.reason is Reason.PMC_BUDGET for d in decisions)
    rate = sum(d.sampled for d in decisions) / n
    assert rate <= 0.01 + 3 * math.sqrt(0.01 * 0.99 / n)


def test_hard_cap_limits_rare_sampling():
    stream = random_stream(500, 8, noise=0.9)
    s = EvolvingSampler(SamplerParams(hard_cap=True, budget=0.05), L=L)
    run(s, stream)
    assert s.counters.sampled <= 0.05 * s.counters.observed + 1
