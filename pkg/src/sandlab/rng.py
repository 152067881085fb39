"""Counter-based splitmix64 random stream.

Both simulation kernels (compiled and pure Python) consume the same draw
protocol, so a run is bit-reproducible regardless of which backend executed
it.  Draw k of a stream seeded with s is mix64(s + GAMMA*k) with k starting
at 1; the state is just (seed, counter), which makes the stream trivially
resumable and batchable.  Period is 2**64.
"""

from __future__ import annotations

from dataclasses import dataclass

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


def mix64(z: int) -> int:
    """splitmix64 finalizer over uint64."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def draw_u64(seed: int, k: int) -> int:
    """Value of draw number k (1-based) of the stream seeded with `seed`."""
    return mix64((seed + GAMMA * k) & MASK64)


def u64_to_unit(u: int) -> float:
    """Map a uint64 draw to a double in [0, 1)."""
    return (u >> 11) * _INV_2_53


@dataclass
class SplitMix64:
    """Resumable stream handle: seed plus number of draws consumed."""

    seed: int
    counter: int = 0

    def __post_init__(self):
        self.seed &= MASK64
        if self.counter < 0:
            raise ValueError("counter must be non-negative")

    def next_u64(self) -> int:
        self.counter += 1
        return draw_u64(self.seed, self.counter)

    def next_unit(self) -> float:
        return u64_to_unit(self.next_u64())

    def clone(self) -> "SplitMix64":
        return SplitMix64(self.seed, self.counter)
