"""Deterministic 64-bit PRNG (splitmix64) used for every random choice in the pipeline.

The generator is fully specified here so that shuffles, splits and parameter
draws can be reproduced bit-for-bit by any implementation:

    state <- (state + 0x9E3779B97F4A7C15) mod 2^64
    z <- state
    z <- ((z XOR (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
    z <- ((z XOR (z >> 27)) * 0x94D049BB133111EB) mod 2^64
    output: z XOR (z >> 31)

Uniform doubles take the top 53 bits of one output word, giving values in
[0, 1). Bounded integers use modulo reduction (the bias is < 2^-40 for any
bound below 2^24 and reproducibility, not uniformity, is what matters here).
"""

import numpy as np

_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK = 0xFFFFFFFFFFFFFFFF


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


class SplitMix64:
    """Sequential splitmix64 stream seeded by one integer."""

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        return _mix(self.state)

    def next_float(self) -> float:
        # top 53 bits -> [0, 1)
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def next_below(self, n: int) -> int:
        if n <= 0:
            raise ValueError(f"bound must be positive, got {n}")
        return self.next_u64() % n

    def uniform(self, lo: float, hi: float, shape) -> np.ndarray:
        """Array of uniforms in [lo, hi), consuming one word per element.

        Produces exactly the same stream as repeated next_float() calls but
        runs the mixing function vectorized in numpy uint64 arithmetic.
        """
        n = int(np.prod(shape)) if shape else 1
        idx = np.arange(1, n + 1, dtype=np.uint64)
        z = (np.uint64(self.state) + np.uint64(_GAMMA) * idx)  # wraps mod 2^64
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
        self.state = (self.state + _GAMMA * n) & _MASK
        out = (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return (lo + (hi - lo) * out).reshape(shape)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle, back to front."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]

    def derive(self, tag: int) -> "SplitMix64":
        """Independent child stream; used to decouple init from shuffling."""
        return SplitMix64(_mix((self.state + _GAMMA * (tag + 1)) & _MASK))
