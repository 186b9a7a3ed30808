"""SplitMix64 pseudo-random generator.

Synthetic datasets must reproduce bit-for-bit on any platform, so the
generator avoids numpy's distribution code and derives every variate from
the raw 64-bit SplitMix64 stream (Steele, Lea & Flood 2014):

    state += 0x9E3779B97F4A7C15
    z = (state ^ (state >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out = z ^ (z >> 31)

all arithmetic modulo 2**64. Derived variates:

* ``uniform()``      -- ``(out >> 11) * 2**-53``, in [0, 1)
* ``below(n)``       -- ``(out * n) >> 64``, in [0, n)
* ``exponential(m)`` -- ``-m * log1p(-uniform())``
* ``normal()``       -- Box-Muller, cosine branch only (one draw per call)
"""

import math

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        if n <= 0:
            raise ValueError(f"below() needs n > 0, got {n}")
        return (self.next_u64() * n) >> 64

    def exponential(self, mean: float) -> float:
        return -mean * math.log1p(-self.uniform())

    def normal(self) -> float:
        u1 = 1.0 - self.uniform()  # (0, 1]
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def sample(self, population, k: int) -> list:
        """k distinct items, partial Fisher-Yates over a copy of population."""
        pool = list(population)
        if k > len(pool):
            raise ValueError(f"cannot sample {k} from {len(pool)} items")
        for i in range(k):
            j = i + self.below(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def fork(self, salt: int) -> "SplitMix64":
        """Independent child stream, a pure function of the current state and salt."""
        return SplitMix64(self.next_u64() ^ ((salt * 0xD1B54A32D192ED03) & _MASK))
