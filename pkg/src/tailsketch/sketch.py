"""Streaming sign-random-projection sketches of sparse call-path vectors.

Each of the ``L`` hash functions maps a call path (a sequence of span-type
tokens) to +1/-1 with a multilinear hash over 64-bit words::

    acc = m[l, 0] + sum_i m[l, i + 1] * id(token_i)    (mod 2**64)

where ``id`` is a streaming token registry assigning 1, 2, 3, ... in
first-seen order.  Nothing needs to know the full set of call paths ahead of
time: a never-seen path just registers its tokens.

By default (``bit="mix"``) the output bit is the top bit of ``fmix64(acc)``,
the MurmurHash3 finalizer.  The multilinear family is only pairwise
independent, and with sequential ids the raw top bit of ``acc`` follows
``c + a * id``, a rotation sequence whose higher-order structure biases
sign projections: similarity of vectors over single-token paths comes out
about 0.09 low.  A fixed bijection keeps the pairwise guarantee and removes
the bias.  ``bit="msb"`` (raw top bit) and ``bit="parity"`` (low bit, which
only sees the parities of coefficients and ids and so collapses distinct
paths) are kept for comparison.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .encoding import PATH_SEP, CallPath, SparseTraceVector
from .errors import LengthMismatch

CHUNK_JOINER = "\x1f"
BIT_MODES = ("mix", "msb", "parity")

_U64_MAX = np.iinfo(np.uint64).max


def chunk_path(path: CallPath | Iterable[str], p_max: int) -> list[str]:
    """Merge consecutive components so that at most ``p_max`` tokens remain."""
    comps = list(path.components if isinstance(path, CallPath) else path)
    if not comps:
        raise ValueError("empty call path")
    if len(comps) <= p_max:
        return comps
    g = math.ceil(len(comps) / p_max)
    return [CHUNK_JOINER.join(comps[i:i + g]) for i in range(0, len(comps), g)]


def coefficient_matrix(L: int, p_max: int, seed: int) -> np.ndarray:
    """The L x (p_max + 1) uint64 coefficients, a pure function of the seed."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, _U64_MAX, size=(L, p_max + 1), dtype=np.uint64, endpoint=True)


@dataclass
class Sketch:
    trace_id: str | None
    # int8 vector over {+1, -1}
    bits: np.ndarray
    projection: np.ndarray | None = field(default=None, repr=False)

    @property
    def L(self) -> int:
        return int(self.bits.shape[0])

    def pack(self) -> bytes:
        return np.packbits(self.bits > 0).tobytes()

    @classmethod
    def unpack(cls, data: bytes, L: int, trace_id: str | None = None) -> "Sketch":
        raw = np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=L)
        return cls(trace_id, (raw.astype(np.int8) * 2 - 1).astype(np.int8))

    def __eq__(self, other):
        if not isinstance(other, Sketch):
            return NotImplemented
        return self.trace_id == other.trace_id and np.array_equal(self.bits, other.bits)


def fmix64(x: np.ndarray) -> np.ndarray:
    """MurmurHash3 64-bit finalizer, a bijection on uint64 (wrapping arithmetic)."""
    x = x ^ (x >> np.uint64(33))
    x = x * np.uint64(0xFF51AFD7ED558CCD)
    x = x ^ (x >> np.uint64(33))
    x = x * np.uint64(0xC4CEB9FE1A85EC53)
    return x ^ (x >> np.uint64(33))


class SketchHasher:
    """L streaming hash functions plus the append-only token registry.

    ``skip_first_token=True`` drops the root token from the sum and pairs
    token ``i`` with coefficient ``i`` (1-based, i >= 2), the literal printed
    form of the hash.  The default uses every token.
    """

    def __init__(
        self,
        L: int = 100,
        p_max: int = 64,
        seed: int = 0,
        bit: str = "mix",
        skip_first_token: bool = False,
    ):
        if L < 1:
            raise ValueError("L must be >= 1")
        if p_max < 1:
            raise ValueError("p_max must be >= 1")
        if bit not in BIT_MODES:
            raise ValueError(f"bit must be one of {BIT_MODES}")
        self.L = int(L)
        self.p_max = int(p_max)
        self.seed = int(seed)
        self.bit = bit
        self.skip_first_token = bool(skip_first_token)
        self.M = coefficient_matrix(self.L, self.p_max, self.seed)
        self.M.setflags(write=False)
        self._shift = np.uint64(0 if bit == "parity" else 63)
        self.registry: dict[str, int] = {}
        self._lock = threading.Lock()
        self._cache: dict[str, np.ndarray] = {}

    def __repr__(self):
        return (f"SketchHasher(L={self.L}, p_max={self.p_max}, seed={self.seed}, "
                f"bit={self.bit!r}, tokens={len(self.registry)})")

    def register(self, token: str) -> int:
        tid = self.registry.get(token)
        if tid is None:
            with self._lock:
                tid = self.registry.get(token)
                if tid is None:
                    tid = self.registry[token] = len(self.registry) + 1
        return tid

    def token_ids(self, path: CallPath | str) -> list[int]:
        """Register (if needed) and return the token ids of a path or path key."""
        if isinstance(path, str):
            path = CallPath.from_key(path)
        return [self.register(tok) for tok in chunk_path(path, self.p_max)]

    def _path_hashes(self, key: str) -> np.ndarray:
        h = self._cache.get(key)
        if h is not None:
            return h
        ids = self.token_ids(CallPath.from_key(key))
        if self.skip_first_token:
            cols = self.M[:, 1:len(ids)]
            ids = ids[1:]
        else:
            cols = self.M[:, 1:len(ids) + 1]
        acc = self.M[:, 0] + (cols * np.asarray(ids, dtype=np.uint64)).sum(axis=1, dtype=np.uint64)
        if self.bit == "mix":
            acc = fmix64(acc)
        bit = (acc >> self._shift) & np.uint64(1)
        h = bit.astype(np.int64) * 2 - 1
        h.setflags(write=False)
        self._cache[key] = h
        return h

    def path_hashes(self, path: CallPath | str) -> np.ndarray:
        """All L hash values of a path as an int64 vector over {+1, -1}."""
        key = path.key if isinstance(path, CallPath) else path
        return self._path_hashes(key)

    def hash_path(self, l: int, path: CallPath | str) -> int:
        """Value of hash function ``l`` (1-based) on ``path``."""
        if not 1 <= l <= self.L:
            raise IndexError(f"hash index {l} outside 1..{self.L}")
        return int(self.path_hashes(path)[l - 1])

    def project(self, v: SparseTraceVector | dict) -> np.ndarray:
        entries = v.entries if isinstance(v, SparseTraceVector) else v
        if not entries:
            return np.zeros(self.L, dtype=np.int64)
        rows = [self._path_hashes(key) for key in entries]
        weights = np.fromiter(entries.values(), dtype=np.int64, count=len(entries))
        return weights @ np.vstack(rows)

    def sketch(self, v: SparseTraceVector | dict, keep_projection: bool = False) -> Sketch:
        y = self.project(v)
        bits = np.where(y >= 0, 1, -1).astype(np.int8)
        trace_id = v.trace_id if isinstance(v, SparseTraceVector) else None
        return Sketch(trace_id, bits, y if keep_projection else None)

    def to_dict(self) -> dict:
        tokens = sorted(self.registry, key=self.registry.__getitem__)
        return {
            "L": self.L,
            "p_max": self.p_max,
            "seed": self.seed,
            "bit": self.bit,
            "skip_first_token": self.skip_first_token,
            "registry": tokens,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SketchHasher":
        h = cls(
            L=data["L"],
            p_max=data["p_max"],
            seed=data["seed"],
            bit=data.get("bit", "mix"),
            skip_first_token=data.get("skip_first_token", False),
        )
        for tok in data["registry"]:
            h.register(tok)
        return h


def sketch_vector(hasher: SketchHasher, v: SparseTraceVector, keep_projection: bool = False) -> Sketch:
    return hasher.sketch(v, keep_projection=keep_projection)


def hash_path(hasher: SketchHasher, l: int, path: CallPath | str) -> int:
    return hasher.hash_path(l, path)


def estimate_similarity(a: Sketch, b: Sketch) -> float:
    """Fraction of the L hash values on which two sketches agree."""
    if a.L != b.L:
        raise LengthMismatch(f"sketch lengths differ: {a.L} vs {b.L}")
    return float(np.count_nonzero(a.bits == b.bits)) / a.L


def unit_embed(s: Sketch) -> np.ndarray:
    return s.bits.astype(np.float64) / math.sqrt(s.L)


def lsh_expected_similarity(cosine: float) -> float:
    """Agreement probability of sign random projections at a given cosine."""
    return 1.0 - math.acos(max(-1.0, min(1.0, cosine))) / math.pi


__all__ = [
    "CHUNK_JOINER",
    "PATH_SEP",
    "Sketch",
    "SketchHasher",
    "chunk_path",
    "coefficient_matrix",
    "estimate_similarity",
    "hash_path",
    "lsh_expected_similarity",
    "sketch_vector",
    "unit_embed",
]
