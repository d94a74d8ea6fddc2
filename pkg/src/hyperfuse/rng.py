"""Portable xoshiro256** generator.

All randomized steps (k-means++ seeding, RANSAC sampling, SPRT evaluation
order) draw from this generator so runs are reproducible from a single
integer seed independent of numpy's bit generators. State is expanded from
the seed with splitmix64, as recommended by the xoshiro authors.
"""
from __future__ import annotations

_MASK = (1 << 64) - 1


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


class Xoshiro256:
    """xoshiro256** 1.0 with splitmix64 seeding."""

    __slots__ = ("_s",)

    def __init__(self, seed: int = 0, *, state: tuple[int, int, int, int] | None = None):
        if state is not None:
            if not any(state):
                raise ValueError("xoshiro state must not be all zero")
            self._s = [int(v) & _MASK for v in state]
            return
        sm = int(seed) & _MASK
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self._s = s

    @property
    def state(self) -> tuple[int, int, int, int]:
        return tuple(self._s)

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK, 7) * 9) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) (Lemire's multiply-shift with rejection)."""
        if n <= 0:
            raise ValueError("n must be positive")
        m = self.next_u64() * n
        low = m & _MASK
        if low < n:
            threshold = ((1 << 64) - n) % n
            while low < threshold:
                m = self.next_u64() * n
                low = m & _MASK
        return m >> 64

    def sample(self, population: int, count: int) -> list[int]:
        """``count`` distinct indices from range(population), in draw order.

        Partial Fisher-Yates over a sparse swap map, so cost is O(count).
        """
        if count > population:
            raise ValueError("sample larger than population")
        swaps: dict[int, int] = {}
        out = []
        for i in range(count):
            j = i + self.below(population - i)
            vi = swaps.get(i, i)
            vj = swaps.get(j, j)
            swaps[j] = vi
            out.append(vj)
        return out

    def permutation_stream(self, population: int):
        """Lazily yield a uniform random permutation of range(population)."""
        swaps: dict[int, int] = {}
        for i in range(population):
            j = i + self.below(population - i)
            vi = swaps.get(i, i)
            vj = swaps.get(j, j)
            swaps[j] = vi
            yield vj
