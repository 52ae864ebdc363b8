"""Counter-based pseudo-random number generator.

The generator is a pure function of (key, counter):

    out_i = mix64((key + (counter + i + 1) * GAMMA) mod 2**64)

where GAMMA is the 64-bit golden-ratio constant 0x9E3779B97F4A7C15 and
mix64 is the SplitMix64 finalizer (xor-shift / multiply rounds with the
constants 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB).  Because the output
depends only on integers, the uniform stream is bit-identical on every
platform; derived floating-point values may drift by at most a few ulps
across libm implementations.

Independent streams are derived by folding string/int tags into the key
(`Rng.derive`), so a node-local stream is addressable as e.g.
``root.derive("batch", m, n, t, k)`` without any shared mutable state.

Draw accounting is exact and documented per method: one uniform consumes
one counter step; n normal samples consume 2*ceil(n/2) counter steps
(Box-Muller pairs).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError

_MASK = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV53 = 1.0 / (1 << 53)


def _mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & _MASK
    return h


def _tag_hash(tag) -> int:
    if isinstance(tag, str):
        return _fnv1a64(tag.encode("utf-8"))
    if isinstance(tag, (int, np.integer)):
        return _mix64(int(tag) ^ 0xA5A5A5A5A5A5A5A5)
    raise ConfigError(f"rng tags must be str or int, got {type(tag).__name__}")


class Rng:
    """Deterministic counter-based random stream."""

    def __init__(self, seed: int, _key: int | None = None):
        if not 0 <= int(seed) <= _MASK:
            raise ConfigError("seed must fit in 64 unsigned bits")
        self.seed = int(seed)
        self._key = _mix64(self.seed ^ _GAMMA) if _key is None else _key
        self._counter = 0

    def derive(self, *tags) -> "Rng":
        """Return an independent child stream addressed by `tags`.

        Derivation folds each tag into the key and never touches this
        stream's counter, so derived streams are reproducible regardless
        of how much the parent has been consumed.
        """
        key = self._key
        for tag in tags:
            key = _mix64(((key * _GAMMA) & _MASK) ^ _tag_hash(tag))
        child = Rng(self.seed, _key=key)
        return child

    @property
    def draws(self) -> int:
        """Number of counter steps consumed so far."""
        return self._counter

    def _raw_block(self, n: int) -> np.ndarray:
        """n raw uint64 words; consumes exactly n counter steps."""
        start = self._counter
        self._counter += n
        idx = np.arange(start + 1, start + n + 1, dtype=np.uint64)
        words = np.uint64(self._key) + idx * np.uint64(_GAMMA)
        return _mix64_array(words)

    def next_u64(self) -> int:
        """One raw 64-bit word; consumes one counter step."""
        self._counter += 1
        return _mix64((self._key + self._counter * _GAMMA) & _MASK)

    def uniforms(self, n: int) -> np.ndarray:
        """n float64 samples in [0, 1); consumes n counter steps."""
        return ((self._raw_block(n) >> np.uint64(11)).astype(np.float64)) * _INV53

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def normals(self, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """n float64 Gaussian samples; consumes 2*ceil(n/2) counter steps.

        Pairs of uniforms feed the Box-Muller transform; the first uniform
        of a pair is shifted into (0, 1] so log() never sees zero.
        """
        if std < 0:
            raise ConfigError("std must be >= 0")
        pairs = (n + 1) // 2
        raw = self._raw_block(2 * pairs)
        u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV53
        u2 = ((raw[1::2] >> np.uint64(11)).astype(np.float64)) * _INV53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return mean + std * out[:n]

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection; >= 1 counter step."""
        if n <= 0:
            raise ConfigError("below() requires n >= 1")
        limit = (_MASK + 1) - ((_MASK + 1) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def integers(self, n: int, count: int) -> np.ndarray:
        """count independent integers in [0, n)."""
        return np.array([self.below(n) for _ in range(count)], dtype=np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        out = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            out[i], out[j] = out[j], out[i]
        return out

    def gamma(self, shape: float) -> float:
        """One Gamma(shape, 1) sample (Marsaglia-Tsang squeeze method)."""
        if shape <= 0:
            raise ConfigError("gamma shape must be > 0")
        if shape < 1.0:
            # Boost: Gamma(a) = Gamma(a + 1) * U^(1/a).
            u = self.uniform()
            while u == 0.0:
                u = self.uniform()
            return self.gamma(shape + 1.0) * u ** (1.0 / shape)
        d = shape - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        while True:
            x = float(self.normals(1)[0])
            v = (1.0 + c * x) ** 3
            if v <= 0.0:
                continue
            u = self.uniform()
            if u < 1.0 - 0.0331 * x ** 4:
                return d * v
            if u > 0.0 and math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
                return d * v

    def dirichlet(self, alpha: float, size: int) -> np.ndarray:
        """One Dirichlet(alpha * 1_size) draw via Gamma normalization."""
        g = np.array([self.gamma(alpha) for _ in range(size)], dtype=np.float64)
        total = g.sum()
        if total == 0.0:
            # All gammas underflowed (only conceivable for tiny alpha).
            return np.full(size, 1.0 / size)
        return g / total
