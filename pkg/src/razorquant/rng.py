"""Deterministic 64-bit PRNG used for every randomized path in the package.

The generator is SplitMix64 (Steele, Lea & Flood's mixer with the usual
reference constants 0x9E3779B97F4A7C15 / 0xBF58476D1CE4E5B9 /
0x94D049BB133111EB).  The i-th output is a pure function of
``seed + (i + 1) * GOLDEN``, which lets us produce whole blocks of the
stream with vectorized uint64 arithmetic while staying bit-identical to
the scalar reference loop.  No platform-dependent entropy, no libc rand,
no numpy global state: same seed, same stream, everywhere.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

__all__ = ["SeededRng", "splitmix64_reference"]

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1

# 53-bit mantissa scaling for uniform doubles in [0, 1).
_INV_2_53 = 1.0 / (1 << 53)


def splitmix64_reference(state: int) -> tuple[int, int]:
    """One step of the scalar reference algorithm.

    Returns (output, new_state).  Kept as plain Python integers so tests
    can check the vectorized path against an independent implementation.
    """
    state = (state + _GOLDEN) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return (z ^ (z >> 31)), state


class SeededRng:
    """Seeded SplitMix64 stream with vectorized block generation.

    Args:
        seed: any Python int; reduced mod 2**64.
    """

    def __init__(self, seed: int):
        if not isinstance(seed, int):
            raise ValidationError(f"seed must be an int, got {type(seed).__name__}")
        self._base = seed & _MASK
        self._count = 0  # outputs consumed so far

    @property
    def seed(self) -> int:
        return self._base

    def _raw_block(self, n: int) -> np.ndarray:
        """Next n outputs of the stream as a uint64 array."""
        if n < 0:
            raise ValidationError(f"block size must be >= 0, got {n}")
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        with np.errstate(over="ignore"):
            state = np.uint64(self._base) + idx * np.uint64(_GOLDEN)
            z = state
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            return z ^ (z >> np.uint64(31))

    def next_u64(self) -> int:
        return int(self._raw_block(1)[0])

    def child(self) -> "SeededRng":
        """Independent stream seeded from this one (consumes one output)."""
        return SeededRng(self.next_u64())

    # ------------------------------------------------------------------
    # floating point draws
    # ------------------------------------------------------------------

    def uniform(self, size=None):
        """Uniform doubles in [0, 1) from the top 53 bits of each output."""
        n = 1 if size is None else int(np.prod(size))
        u = (self._raw_block(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def normal(self, size=None):
        """Standard normal draws via Box-Muller (deterministic, no rejection)."""
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        raw = self._raw_block(2 * pairs)
        # u1 in (0, 1] so the log is finite; u2 in [0, 1).
        u1 = ((raw[:pairs] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = (raw[pairs:] >> np.uint64(11)).astype(np.float64) * _INV_2_53
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(2.0 * np.pi * u2)
        out[1::2] = r * np.sin(2.0 * np.pi * u2)
        out = out[:n]
        if size is None:
            return float(out[0])
        return out.reshape(size)

    # ------------------------------------------------------------------
    # integer draws
    # ------------------------------------------------------------------

    def _randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection on the top of the range."""
        if n <= 0:
            raise ValidationError(f"randbelow bound must be positive, got {n}")
        limit = ((1 << 64) // n) * n
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def integers(self, n: int, size=None):
        """Unbiased integers in [0, n), vectorized with rejection resampling."""
        if n <= 0:
            raise ValidationError(f"integer bound must be positive, got {n}")
        count = 1 if size is None else int(np.prod(size))
        limit = ((1 << 64) // n) * n  # == 2**64 when n is a power of two
        reject = limit < (1 << 64)
        out = np.empty(count, dtype=np.int64)
        filled = 0
        while filled < count:
            block = self._raw_block(count - filled)
            keep = block[block < np.uint64(limit)] if reject else block
            take = keep[: count - filled]
            out[filled : filled + take.size] = (take % np.uint64(n)).astype(np.int64)
            filled += take.size
        if size is None:
            return int(out[0])
        return out.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        arr = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self._randbelow(i + 1)
            arr[i], arr[j] = arr[j], arr[i]
        return arr

    def sample_indices(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n), returned sorted ascending.

        Partial Fisher-Yates: O(k) swaps on an index table, so the draw
        order (and therefore the result) depends only on the stream.
        """
        if not 0 <= k <= n:
            raise ValidationError(f"need 0 <= k <= n, got k={k}, n={n}")
        arr = np.arange(n, dtype=np.int64)
        for i in range(k):
            j = i + self._randbelow(n - i)
            arr[i], arr[j] = arr[j], arr[i]
        return np.sort(arr[:k])
