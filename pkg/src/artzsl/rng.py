"""Deterministic random numbers for reproducible experiments.

Every random choice in this package flows through :class:`DetRng`. The
generator draws raw 64-bit words from numpy's PCG64 bit generator, whose
output stream is covered by numpy's bit-stream compatibility guarantee,
and derives every distribution itself so that no numpy release can change
a result:

* uniforms take the top 53 bits of one word,
* normals use the Box-Muller transform on uniform pairs,
* bounded integers use unbiased rejection sampling,
* shuffles and subset draws are Fisher-Yates.

Equal seeds therefore give bit-identical results across platforms and
numpy versions. Named sub-streams (``DetRng(seed, "balance")``) hash the
tag with SHA-256 into the seed material, so different pipeline stages fed
by one user seed never share a stream.
"""

import hashlib

import numpy as np

_TWO53 = float(2**53)


def _entropy(tag):
    if isinstance(tag, int):
        return tag & 0xFFFF_FFFF_FFFF_FFFF
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class DetRng:
    """Deterministic random generator seeded by an integer plus stream tags."""

    _BUF = 1024

    def __init__(self, seed, *stream):
        self._key = (seed, *stream)
        entropy = [_entropy(part) for part in self._key]
        self._bits = np.random.PCG64(np.random.SeedSequence(entropy))
        self._buf = np.empty(0, dtype=np.uint64)
        self._pos = 0

    def spawn(self, *tags):
        """Independent generator for a sub-task, derived from this seed."""
        return DetRng(*self._key, *tags)

    def _raw(self, n):
        return self._bits.random_raw(n)

    def _next_raw(self):
        if self._pos >= self._buf.size:
            self._buf = self._raw(self._BUF)
            self._pos = 0
        value = int(self._buf[self._pos])
        self._pos += 1
        return value

    def uniforms(self, shape=()):
        """Array of float64 uniforms in [0, 1)."""
        n = int(np.prod(shape)) if shape else 1
        out = (self._raw(max(n, 1)) >> np.uint64(11)).astype(np.float64) / _TWO53
        return out.reshape(shape) if shape else float(out[0])

    def uniform(self, low, high, shape=()):
        return low + (high - low) * self.uniforms(shape)

    def normals(self, shape=()):
        """Standard normals via Box-Muller on uniform pairs."""
        n = int(np.prod(shape)) if shape else 1
        half = (max(n, 1) + 1) // 2
        raw = self._raw(2 * half)
        # u1 in (0, 1] so the log below is finite
        u1 = ((raw[:half] >> np.uint64(11)).astype(np.float64) + 1.0) / _TWO53
        u2 = (raw[half:] >> np.uint64(11)).astype(np.float64) / _TWO53
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.concatenate([radius * np.cos(theta), radius * np.sin(theta)])[:n]
        return out.reshape(shape) if shape else float(out[0])

    def randbelow(self, n):
        """Unbiased integer in [0, n) by rejection on the raw 64-bit stream."""
        if n <= 0:
            raise ValueError("randbelow needs n >= 1")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            value = self._next_raw()
            if value < limit:
                return value % n

    def shuffle(self, items):
        """In-place Fisher-Yates shuffle of a mutable sequence."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample(self, n, k):
        """k distinct indices drawn uniformly from range(n), in draw order."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot sample {k} of {n}")
        pool = list(range(n))
        for i in range(k):
            j = i + self.randbelow(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]
