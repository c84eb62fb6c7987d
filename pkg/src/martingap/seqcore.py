"""Binary sequences, permutations, entropy and positional-encoding geometry.

Random streams
--------------
Every random draw in the package goes through :func:`split_seed` and
:func:`rng_from`.  A master seed plus an integer path (for example
``(stream, n, index)``) is hashed by numpy's ``SeedSequence`` into an
independent 64-bit child seed, and each child seed drives its own ``PCG64``
generator.  Work items therefore do not share state, and a parallel run
produces exactly the same numbers as a serial one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, StructuralError

PRNG_ALGORITHM = "numpy.PCG64 seeded by SeedSequence(master, spawn_key=path)"

# Stream identifiers used as the first element of split_seed paths.
STREAM_BALANCED = 1
STREAM_PERMUTATION = 2
STREAM_BERNOULLI = 3
STREAM_BOOTSTRAP = 4
STREAM_NOISE = 5


def split_seed(master: int, *path: int) -> int:
    """Derive a 64-bit child seed from ``master`` and an integer path."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng_from(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True, eq=False)
class BitSequence:
    """Ordered binary observations ``x_1..x_n`` with the count of ones cached.

    Positions are 1-based in docstrings and 0-based in ``bits``.
    """

    bits: np.ndarray
    ones: int = field(init=False)

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 1:
            raise StructuralError("bits must be one-dimensional")
        if arr.size and not np.all((arr == 0) | (arr == 1)):
            raise DomainError("bits must be 0 or 1")
        arr = arr.astype(np.int8, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)
        object.__setattr__(self, "ones", int(arr.sum()))

    @classmethod
    def of(cls, bits: Iterable[int]) -> "BitSequence":
        return cls(np.fromiter(bits, dtype=np.int8))

    @property
    def n(self) -> int:
        return int(self.bits.size)

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, item):
        if isinstance(item, slice):
            return BitSequence(self.bits[item])
        return int(self.bits[item])

    def prefix(self, t: int) -> "BitSequence":
        """First ``t`` observations."""
        if not 0 <= t <= self.n:
            raise DomainError(f"prefix length {t} outside [0, {self.n}]")
        return BitSequence(self.bits[:t])

    def complement(self) -> "BitSequence":
        return BitSequence(1 - self.bits)

    def tolist(self) -> list[int]:
        return [int(b) for b in self.bits]

    def __eq__(self, other):
        return isinstance(other, BitSequence) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.bits.tobytes())

    def __repr__(self):
        body = "".join(str(b) for b in self.bits[:32])
        more = "..." if self.n > 32 else ""
        return f"BitSequence('{body}{more}', n={self.n}, ones={self.ones})"


@dataclass(frozen=True, eq=False)
class PermutationSpec:
    """A bijection on positions, stored 0-based: output[i] = input[mapping[i]]."""

    mapping: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        m = np.asarray(self.mapping, dtype=np.int64).copy()
        if m.ndim != 1 or not np.array_equal(np.sort(m), np.arange(m.size)):
            raise StructuralError("mapping is not a permutation of 0..n-1")
        m.setflags(write=False)
        object.__setattr__(self, "mapping", m)

    @property
    def n(self) -> int:
        return int(self.mapping.size)

    @classmethod
    def identity(cls, n: int) -> "PermutationSpec":
        return cls(np.arange(n))

    @classmethod
    def reversal(cls, n: int) -> "PermutationSpec":
        return cls(np.arange(n)[::-1])

    @classmethod
    def random(cls, n: int, seed: int) -> "PermutationSpec":
        return cls(rng_from(seed).permutation(n), seed=int(seed))

    def inverse(self) -> "PermutationSpec":
        inv = np.empty_like(self.mapping)
        inv[self.mapping] = np.arange(self.n)
        return PermutationSpec(inv)

    def __eq__(self, other):
        return isinstance(other, PermutationSpec) and np.array_equal(self.mapping, other.mapping)

    def __hash__(self):
        return hash(self.mapping.tobytes())


def permutation_stream(master: int, n: int, count: int, *path: int) -> list[PermutationSpec]:
    """``count`` independent random permutations of ``n`` positions."""
    return [
        PermutationSpec.random(n, split_seed(master, STREAM_PERMUTATION, *path, i))
        for i in range(count)
    ]


@dataclass(frozen=True)
class PeGeometry:
    """Positional-encoding variance and the period of its dominant rotation."""

    variance: float
    period: int = 64

    def __post_init__(self):
        if not self.variance >= 0:
            raise DomainError("positional-encoding variance must be nonnegative")
        if int(self.period) != self.period or self.period < 1:
            raise DomainError("period must be a positive integer")


def binary_entropy(p: float) -> float:
    """Entropy of a Bernoulli(p) variable in bits, with 0 log 0 = 0."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"probability {p} outside [0, 1]")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def binary_entropy_array(p: np.ndarray) -> np.ndarray:
    """Vectorised :func:`binary_entropy`."""
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise DomainError("probabilities outside [0, 1]")
    out = np.zeros_like(p)
    inner = (p > 0) & (p < 1)
    q = p[inner]
    out[inner] = -q * np.log2(q) - (1 - q) * np.log2(1 - q)
    return out


def balanced_sequences(n: int, count: int, seed: int) -> list[BitSequence]:
    """Draw ``count`` uniform arrangements with exactly ceil(n/2) ones.

    Each sequence is a seeded shuffle of the fixed multiset, so the
    sufficient statistic is identical across the batch.
    """
    if n < 2:
        raise DomainError("n must be at least 2")
    if count < 1:
        raise DomainError("count must be at least 1")
    base = np.zeros(n, dtype=np.int8)
    base[: (n + 1) // 2] = 1
    return [
        BitSequence(rng_from(split_seed(seed, STREAM_BALANCED, n, i)).permutation(base))
        for i in range(count)
    ]


def bernoulli_sequence(n: int, p: float, seed: int) -> BitSequence:
    """i.i.d. Bernoulli(p) draws of length n."""
    if not 0.0 <= p <= 1.0:
        raise DomainError("p outside [0, 1]")
    return BitSequence((rng_from(seed).random(n) < p).astype(np.int8))


def apply_permutation(x: BitSequence, perm: PermutationSpec) -> BitSequence:
    """Relabel positions: output bit i is input bit ``perm.mapping[i]``."""
    if perm.n != x.n:
        raise StructuralError(f"permutation on {perm.n} positions applied to length {x.n}")
    return BitSequence(x.bits[perm.mapping])


def pe_squared_distance(i: int, j: int, n: int, geo: PeGeometry) -> float:
    """Squared distance between sinusoidal encodings of positions i and j."""
    if not (1 <= i <= n and 1 <= j <= n):
        raise DomainError("positions must lie in 1..n")
    return 2.0 * geo.variance * (1.0 - math.cos(2.0 * math.pi * abs(i - j) / n))


def cosine_defect_sum(n: int) -> float:
    """Sum over j=1..n of (1 - cos(2 pi j / n)); equals n for every n >= 2."""
    j = np.arange(1, n + 1)
    return float(np.sum(1.0 - np.cos(2.0 * np.pi * j / n)))


def as_bits(x: BitSequence | Sequence[int] | np.ndarray) -> BitSequence:
    return x if isinstance(x, BitSequence) else BitSequence(np.asarray(x))
