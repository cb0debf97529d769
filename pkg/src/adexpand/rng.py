"""Seeded splitmix64 generator used wherever reproducible draws are needed.

All randomness in the package flows through this generator so that a run is
fully determined by its seed, independent of platform or thread count.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """splitmix64 sequence; state advances by the golden-gamma constant."""

    def __init__(self, seed: int) -> None:
        self._state = seed & _MASK64

    def next_uint64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_float(self) -> float:
        """Uniform draw in [0, 1) with 53 bits of precision."""
        return (self.next_uint64() >> 11) / float(1 << 53)

    def next_index(self, n: int) -> int:
        """Uniform index in [0, n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return int(self.next_float() * n) % n

    def weighted_index(self, weights) -> int:
        """Index drawn proportionally to non-negative weights.

        Falls back to the first strictly positive weight when the draw lands
        past the cumulative total (float round-off), and to index 0 when all
        weights are zero.
        """
        total = float(sum(weights))
        if total <= 0.0:
            return 0
        r = self.next_float() * total
        acc = 0.0
        last_positive = 0
        for i, w in enumerate(weights):
            if w > 0.0:
                last_positive = i
            acc += w
            if r < acc:
                return i
        return last_positive

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_index(i + 1)
            items[i], items[j] = items[j], items[i]
