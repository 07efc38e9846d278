"""Evolving micro-cluster sampler over unit-embedded sketches.

Common trace patterns live in potential micro-clusters (PMCs) and are
sampled with a budgeted probability that shrinks as their cluster grows
relative to the other PMCs.  Anything that does not fit a PMC goes to an
outlier micro-cluster (OMC) and is always sampled; an OMC whose weight
reaches ``alpha`` becomes a PMC.  PMCs that stop receiving traces decay and
are dropped at periodic checks.  OMCs are never dropped.

Cluster statistics are kept DenStream-style as decayed sums
``(w, cf1, cf2)`` so that the center ``cf1 / w`` is available in O(L).
The radius ``sqrt(cf2 / w - |center|^2)`` is algebraically exact but loses
about half the digits when the spread is small, so each cluster also
carries ``ss``, the decayed weighted sum of squared deviations from the
center, updated in the numerically stable way (West 1979).  The radius is
``sqrt(ss / w)``.
"""
from __future__ import annotations

import bisect
import copy
import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .errors import InvalidAlpha, NoPMC, StateVersionMismatch, TimeReversal
from .sketch import Sketch, unit_embed

PRUNE_LOG_BASE = 2.0
STATE_VERSION = 1


class Role(str, Enum):
    PMC = "PMC"
    OMC = "OMC"


class Reason(str, Enum):
    PMC_BUDGET = "PMC_BUDGET"
    OMC_RARE = "OMC_RARE"
    NEW_OMC = "NEW_OMC"


@dataclass
class MicroCluster:
    id: int
    role: Role
    w: float
    cf1: np.ndarray
    cf2: float
    last_update: float = 0.0
    ss: float | None = None

    def __post_init__(self):
        if self.ss is None:
            c = self.cf1 / self.w
            self.ss = max(0.0, self.cf2 - self.w * float(c @ c))

    @property
    def center(self) -> np.ndarray:
        return self.cf1 / self.w

    @property
    def radius(self) -> float:
        return math.sqrt(self.ss / self.w)

    def decay_to(self, t: float, lam: float) -> "MicroCluster":
        if t < self.last_update:
            raise TimeReversal(f"cannot decay cluster {self.id} from {self.last_update} back to {t}")
        if t > self.last_update:
            f = 2.0 ** (-lam * (t - self.last_update))
            self.w *= f
            self.cf1 = self.cf1 * f
            self.cf2 *= f
            self.ss *= f
            self.last_update = t
        return self

    def decayed_weight(self, t: float, lam: float) -> float:
        return self.w * 2.0 ** (-lam * max(0.0, t - self.last_update))

    def candidate_radius(self, s: np.ndarray, t: float, lam: float) -> float:
        if t < self.last_update:
            raise TimeReversal(f"cannot decay cluster {self.id} from {self.last_update} back to {t}")
        f = 2.0 ** (-lam * (t - self.last_update))
        w = self.w * f
        d = s - self.center
        ss = self.ss * f + w / (w + 1.0) * float(d @ d)
        return math.sqrt(ss / (w + 1.0))

    def merge(self, s: np.ndarray, t: float, lam: float) -> "MicroCluster":
        self.decay_to(t, lam)
        d = s - self.center
        self.ss += self.w / (self.w + 1.0) * float(d @ d)
        self.w += 1.0
        self.cf1 = self.cf1 + s
        self.cf2 += float(s @ s)
        return self

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "role": self.role.value,
            "w": self.w,
            "cf1": self.cf1.tolist(),
            "cf2": self.cf2,
            "ss": self.ss,
            "last_update": self.last_update,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MicroCluster":
        return cls(
            id=int(d["id"]),
            role=Role(d["role"]),
            w=float(d["w"]),
            cf1=np.asarray(d["cf1"], dtype=np.float64),
            cf2=float(d["cf2"]),
            last_update=float(d["last_update"]),
            ss=None if d.get("ss") is None else float(d["ss"]),
        )

    @classmethod
    def singleton(cls, cid: int, role: Role, s: np.ndarray, t: float) -> "MicroCluster":
        return cls(cid, role, 1.0, np.array(s, dtype=np.float64), float(s @ s), t, 0.0)


def decay_to(cluster: MicroCluster, t: float, lam: float) -> MicroCluster:
    return cluster.decay_to(t, lam)


def candidate_radius(cluster: MicroCluster, s: np.ndarray, t: float, lam: float) -> float:
    return cluster.candidate_radius(s, t, lam)


def merge(cluster: MicroCluster, s: np.ndarray, t: float, lam: float) -> MicroCluster:
    return cluster.merge(s, t, lam)


def prune_interval(lam: float, alpha: float) -> int:
    """Ticks between PMC weight checks: ceil(log2(alpha / (alpha - 1)) / lam)."""
    if alpha <= 1:
        raise InvalidAlpha(f"alpha must be > 1, got {alpha}")
    if lam <= 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    x = math.log(alpha / (alpha - 1), PRUNE_LOG_BASE) / lam
    # alpha = 4/3 and friends are not exact in binary; don't let 2.0000000000000004 ceil to 3
    nearest = round(x)
    if abs(x - nearest) <= 1e-9 * max(1.0, abs(x)):
        x = nearest
    return math.ceil(x)


@dataclass
class SamplerParams:
    budget: float = 0.01
    lam: float = 0.25
    alpha: float = 2.0
    epsilon: float = 0.01
    time_unit: float = 1.0
    rng_seed: int = 0
    # "timestamp": ticks from trace start times; "logical": one tick per trace
    clock: str = "timestamp"
    # cap rare-trace sampling at the budget too (off by default)
    hard_cap: bool = False

    def __post_init__(self):
        if not 0.0 <= self.budget <= 1.0:
            raise ValueError(f"budget must lie in [0, 1], got {self.budget}")
        if self.lam <= 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")
        if self.alpha <= 1:
            raise InvalidAlpha(f"alpha must be > 1, got {self.alpha}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.time_unit <= 0:
            raise ValueError(f"time_unit must be > 0, got {self.time_unit}")
        if self.clock not in ("timestamp", "logical"):
            raise ValueError(f"clock must be 'timestamp' or 'logical', got {self.clock!r}")

    @property
    def prune_interval(self) -> int:
        return prune_interval(self.lam, self.alpha)


@dataclass(frozen=True)
class Decision:
    trace_id: str | None
    sampled: bool
    reason: Reason
    probability: float
    cluster_id: int
    tick: float

    def to_dict(self) -> dict:
        return {
            "trace_id": self.trace_id,
            "sampled": self.sampled,
            "reason": self.reason.value,
            "probability": self.probability,
            "cluster_id": self.cluster_id,
            "tick": self.tick,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Decision":
        return cls(d["trace_id"], bool(d["sampled"]), Reason(d["reason"]),
                   float(d["probability"]), int(d["cluster_id"]), float(d["tick"]))


class _CenterIndex:
    """Cluster centers of one role as rows of a matrix, kept in id order."""

    def __init__(self, L: int):
        self.ids: list[int] = []
        self._rows = np.empty((8, L))

    def __len__(self):
        return len(self.ids)

    @property
    def centers(self) -> np.ndarray:
        return self._rows[: len(self.ids)]

    def add(self, cid: int, center: np.ndarray):
        n = len(self.ids)
        pos = bisect.bisect_left(self.ids, cid)
        if n == self._rows.shape[0]:
            grown = np.empty((2 * n, self._rows.shape[1]))
            grown[:n] = self._rows
            self._rows = grown
        self._rows[pos + 1: n + 1] = self._rows[pos:n]
        self._rows[pos] = center
        self.ids.insert(pos, cid)

    def remove(self, cid: int):
        pos = self._pos(cid)
        n = len(self.ids)
        self._rows[pos: n - 1] = self._rows[pos + 1: n]
        del self.ids[pos]

    def update(self, cid: int, center: np.ndarray):
        self._rows[self._pos(cid)] = center

    def _pos(self, cid: int) -> int:
        pos = bisect.bisect_left(self.ids, cid)
        if pos == len(self.ids) or self.ids[pos] != cid:
            raise KeyError(cid)
        return pos

    def nearest(self, s: np.ndarray) -> tuple[int, float] | None:
        """(cluster id, squared distance); ties go to the lowest id."""
        if not self.ids:
            return None
        diff = self.centers - s
        d2 = np.einsum("ij,ij->i", diff, diff)
        i = int(np.argmin(d2))
        return self.ids[i], float(d2[i])


@dataclass
class Counters:
    observed: int = 0
    sampled: int = 0
    by_reason: dict[str, int] = field(default_factory=lambda: {r.value: 0 for r in Reason})
    sampled_by_reason: dict[str, int] = field(default_factory=lambda: {r.value: 0 for r in Reason})
    pruned: int = 0
    promoted: int = 0


class EvolvingSampler:
    """Single-writer sampling state machine; feed sketches with :meth:`observe`."""

    def __init__(self, params: SamplerParams | None = None, L: int | None = None):
        self.params = params or SamplerParams()
        self.L = L
        self.clusters: dict[int, MicroCluster] = {}
        self.next_cluster_id = 0
        self.now = 0.0
        self.origin_us: int | None = None
        self.t_p = self.params.prune_interval
        self.next_prune_at = float(self.t_p)
        self.rng = np.random.default_rng(self.params.rng_seed)
        self.counters = Counters()
        self._index: dict[Role, _CenterIndex] | None = None
        if L is not None:
            self._make_index(L)

    def _make_index(self, L: int):
        self.L = L
        self._index = {Role.PMC: _CenterIndex(L), Role.OMC: _CenterIndex(L)}
        for cid in sorted(self.clusters):
            c = self.clusters[cid]
            self._index[c.role].add(cid, c.center)

    # cluster bookkeeping -------------------------------------------------

    def add_cluster(self, role: Role, w: float, cf1: np.ndarray, cf2: float, t: float,
                    ss: float | None = None) -> MicroCluster:
        if self._index is None:
            self._make_index(len(cf1))
        c = MicroCluster(self.next_cluster_id, role, float(w), np.asarray(cf1, dtype=np.float64), float(cf2), t,
                         None if ss is None else float(ss))
        self.next_cluster_id += 1
        self.clusters[c.id] = c
        self._index[role].add(c.id, c.center)
        return c

    def remove_cluster(self, cid: int):
        c = self.clusters.pop(cid)
        self._index[c.role].remove(cid)

    def _set_role(self, c: MicroCluster, role: Role):
        if c.role is role:
            return
        self._index[c.role].remove(c.id)
        c.role = role
        self._index[role].add(c.id, c.center)

    def pmcs(self) -> list[MicroCluster]:
        return [self.clusters[i] for i in self._index[Role.PMC].ids] if self._index else []

    def omcs(self) -> list[MicroCluster]:
        return [self.clusters[i] for i in self._index[Role.OMC].ids] if self._index else []

    @property
    def n_pmc(self) -> int:
        return len(self._index[Role.PMC]) if self._index else 0

    @property
    def n_omc(self) -> int:
        return len(self._index[Role.OMC]) if self._index else 0

    # time ------------------------------------------------------------------

    def to_tick(self, timestamp_us: int | None) -> float:
        """Convert a trace timestamp to a tick; never moves the clock backwards."""
        if self.params.clock == "logical" or timestamp_us is None:
            return self.now + 1.0
        if self.origin_us is None:
            self.origin_us = int(timestamp_us)
        tick = (timestamp_us - self.origin_us) / (1e6 * self.params.time_unit)
        return max(self.now, tick)

    def advance(self, tick: float):
        self.now = max(self.now, float(tick))
        if self.now >= self.next_prune_at:
            self.periodic_prune()

    # core ----------------------------------------------------------------

    def sampling_probability(self, w_star: float) -> float:
        """Budget times one minus the merged PMC's share of total PMC weight."""
        pmcs = self.pmcs()
        if not pmcs:
            raise NoPMC("sampling probability needs at least one PMC")
        lam, now = self.params.lam, self.now
        total = math.fsum(c.decayed_weight(now, lam) for c in pmcs)
        b = self.params.budget
        if total <= 0:
            return 0.0
        return min(b, max(0.0, b * (1.0 - w_star / total)))

    def periodic_prune(self) -> list[int]:
        lam, alpha = self.params.lam, self.params.alpha
        removed = []
        for c in self.pmcs():
            c.decay_to(self.now, lam)
            if c.w < alpha:
                removed.append(c.id)
            else:
                self._index[Role.PMC].update(c.id, c.center)
        for cid in removed:
            self.remove_cluster(cid)
        self.counters.pruned += len(removed)
        # skip checks that fell entirely inside a gap in the stream
        while self.next_prune_at <= self.now:
            self.next_prune_at += self.t_p
        return removed

    def observe(self, sketch: Sketch | np.ndarray, timestamp_us: int | None = None,
                trace_id: str | None = None) -> Decision:
        if isinstance(sketch, Sketch):
            s = unit_embed(sketch)
            if trace_id is None:
                trace_id = sketch.trace_id
        else:
            s = np.asarray(sketch, dtype=np.float64)
        if self._index is None:
            self._make_index(len(s))
        elif len(s) != self.L:
            raise ValueError(f"sketch length {len(s)} does not match sampler L={self.L}")

        self.advance(self.to_tick(timestamp_us))
        p = self.params
        t = self.now

        decision = None
        hit = self._index[Role.PMC].nearest(s)
        if hit is not None:
            c = self.clusters[hit[0]]
            if c.candidate_radius(s, t, p.lam) <= p.epsilon:
                c.merge(s, t, p.lam)
                self._index[Role.PMC].update(c.id, c.center)
                prob = self.sampling_probability(c.w)
                sampled = bool(self.rng.random() < prob)
                decision = Decision(trace_id, sampled, Reason.PMC_BUDGET, prob, c.id, t)

        if decision is None:
            hit = self._index[Role.OMC].nearest(s)
            if hit is not None:
                c = self.clusters[hit[0]]
                if c.candidate_radius(s, t, p.lam) <= p.epsilon:
                    c.merge(s, t, p.lam)
                    self._index[Role.OMC].update(c.id, c.center)
                    if c.w >= p.alpha:
                        self._set_role(c, Role.PMC)
                        self.counters.promoted += 1
                    decision = self._rare(trace_id, Reason.OMC_RARE, c.id, t)

        if decision is None:
            c = self.add_cluster(Role.OMC, 1.0, s, float(s @ s), t, 0.0)
            decision = self._rare(trace_id, Reason.NEW_OMC, c.id, t)

        cnt = self.counters
        cnt.observed += 1
        cnt.by_reason[decision.reason.value] += 1
        if decision.sampled:
            cnt.sampled += 1
            cnt.sampled_by_reason[decision.reason.value] += 1
        return decision

    def _rare(self, trace_id, reason: Reason, cid: int, t: float) -> Decision:
        if self.params.hard_cap:
            cnt = self.counters
            if cnt.sampled >= self.params.budget * (cnt.observed + 1):
                return Decision(trace_id, False, reason, 0.0, cid, t)
        return Decision(trace_id, True, reason, 1.0, cid, t)

    # persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": STATE_VERSION,
            "params": asdict(self.params),
            "L": self.L,
            "now": self.now,
            "origin_us": self.origin_us,
            "next_prune_at": self.next_prune_at,
            "next_cluster_id": self.next_cluster_id,
            "rng": self.rng.bit_generator.state,
            "counters": asdict(self.counters),
            "clusters": [self.clusters[cid].to_dict() for cid in sorted(self.clusters)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvolvingSampler":
        if d.get("version") != STATE_VERSION:
            raise StateVersionMismatch(f"sampler state version {d.get('version')!r}, expected {STATE_VERSION}")
        obj = cls(SamplerParams(**d["params"]))
        obj.now = float(d["now"])
        obj.origin_us = d["origin_us"]
        obj.next_prune_at = float(d["next_prune_at"])
        obj.next_cluster_id = int(d["next_cluster_id"])
        obj.rng.bit_generator.state = d["rng"]
        obj.counters = Counters(**d["counters"])
        for cd in d["clusters"]:
            c = MicroCluster.from_dict(cd)
            obj.clusters[c.id] = c
        if d.get("L") is not None:
            obj._make_index(int(d["L"]))
        return obj

    def copy(self) -> "EvolvingSampler":
        return copy.deepcopy(self)

    def summary(self) -> dict:
        lam = self.params.lam
        return {
            "now": self.now,
            "next_prune_at": self.next_prune_at,
            "n_pmc": self.n_pmc,
            "n_omc": self.n_omc,
            "observed": self.counters.observed,
            "sampled": self.counters.sampled,
            "by_reason": dict(self.counters.by_reason),
            "pmcs": [
                {"id": c.id, "w": c.decayed_weight(self.now, lam), "radius": c.radius}
                for c in self.pmcs()
            ],
        }


def dbscan_labels(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    from sklearn.cluster import DBSCAN

    if len(points) == 0:
        return np.empty(0, dtype=int)
    return DBSCAN(eps=eps, min_samples=min_pts, metric="euclidean").fit_predict(points)


def bootstrap(
    training: list[Sketch],
    params: SamplerParams | None = None,
    dbscan_eps: float | None = None,
    min_pts: int = 3,
    origin_us: int | None = None,
    L: int | None = None,
) -> EvolvingSampler:
    """Seed the sampler from fault-free training sketches with DBSCAN.

    Each DBSCAN cluster becomes a PMC weighted by its member count, each
    noise point an OMC of weight 1.  ``dbscan_eps`` defaults to twice the
    merge radius.
    """
    params = params or SamplerParams()
    eps = 2 * params.epsilon if dbscan_eps is None else dbscan_eps
    if training:
        L = training[0].L
    state = EvolvingSampler(params, L=L)
    state.origin_us = origin_us
    if not training:
        return state
    X = np.vstack([unit_embed(s) for s in training])
    labels = dbscan_labels(X, eps, min_pts)
    for lab in sorted(set(labels.tolist()) - {-1}):
        members = X[labels == lab]
        n = float(len(members))
        role = Role.PMC if n >= params.alpha else Role.OMC
        dev = members - members.mean(axis=0)
        state.add_cluster(role, n, members.sum(axis=0), float(np.einsum("ij,ij->", members, members)), 0.0,
                          ss=float(np.einsum("ij,ij->", dev, dev)))
    for i in np.flatnonzero(labels == -1):
        state.add_cluster(Role.OMC, 1.0, X[i], float(X[i] @ X[i]), 0.0, 0.0)
    return state
