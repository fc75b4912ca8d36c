"""Deterministic randomness with named streams.

Built on numpy's Philox counter-based bit generator. A root seed plus a stream
id form the 128-bit Philox key, so every consumer of randomness (data
shuffling, weight init, mask sampling, training noise, sampling noise) owns an
independent stream: adding or removing draws in one stream never perturbs
another. Within a stream, `at(step)` jumps the counter to a fixed per-step
offset, which is what makes checkpoint resume exact without serializing any
generator state.
"""

from __future__ import annotations

import numpy as np

# Stream ids used by the training stack. Anything else is free for callers.
STREAM_DATA = 1
STREAM_INIT = 2
STREAM_MASK = 3
STREAM_TRAIN = 4
STREAM_SAMPLE = 5

# Philox counters are 256-bit; leave the low 128 bits for in-step draws and
# key the step number into the upper half.
_STEP_SHIFT = 128


class Rng:
    """A seeded random stream.

    Two instances built with the same (seed, stream) and used with the same
    call sequence produce identical outputs. `stream(k)` derives an
    independent stream under the same seed; `at(step)` derives a substream
    pinned to a step number.
    """

    __slots__ = ("seed", "stream_id", "_gen")

    def __init__(self, seed: int, stream_id: int = 0, _counter: int = 0):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        if self.seed >= 1 << 64 or self.stream_id >= 1 << 64:
            raise ValueError("seed and stream id must fit in 64 bits")
        key = (self.seed << 64) | self.stream_id
        bitgen = np.random.Philox(key=key, counter=_counter)
        self._gen = np.random.Generator(bitgen)

    def stream(self, stream_id: int) -> "Rng":
        """Independent stream under the same root seed."""
        return Rng(self.seed, stream_id)

    def at(self, step: int) -> "Rng":
        """Substream of this stream pinned to a step counter.

        Draws from `at(step)` are independent of draws from `at(other)` and of
        draws made directly on this instance, as long as a single step stays
        under 2**128 generated blocks (it will).
        """
        if step < 0:
            raise ValueError("step must be non-negative")
        return Rng(self.seed, self.stream_id, _counter=(int(step) + 1) << _STEP_SHIFT)

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(size=shape, dtype=np.float64)

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Integers in [low, high)."""
        return self._gen.integers(low, high, size=shape)

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices drawn from range(n), in draw order."""
        return self._gen.choice(n, size=k, replace=False)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
