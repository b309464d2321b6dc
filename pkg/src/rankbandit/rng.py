"""Counter-based random streams.

Every draw is ``splitmix64(seed + counter * golden)``, so a stream is fully
described by ``(seed, counter)`` and the same seed yields the same sequence
on any platform, from plain Python or from inside jitted code.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0


@nb.njit(cache=True)
def _mix64(z):
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@nb.njit(cache=True)
def next_u64(state):
    state[1] += _ONE
    return _mix64(state[0] + state[1] * _GOLDEN)


@nb.njit(cache=True)
def uniform(state):
    """Uniform double in [0, 1) with 53 random bits."""
    return float(next_u64(state) >> _S11) * _INV53


@nb.njit(cache=True)
def randint(state, n):
    """Uniform integer in [0, n)."""
    r = int(uniform(state) * n)
    return r if r < n else n - 1


@nb.njit(cache=True)
def categorical(state, probs):
    u = uniform(state)
    acc = 0.0
    last = 0
    for k in range(probs.shape[0]):
        if probs[k] > 0.0:
            last = k
        acc += probs[k]
        if u < acc:
            return k
    # rounding left a sliver above the cumulative sum
    return last


@nb.njit(cache=True)
def standard_normal(state):
    u1 = uniform(state)
    u2 = uniform(state)
    return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)


@nb.njit(cache=True)
def gamma(state, shape):
    """Marsaglia-Tsang gamma(shape, 1) sampler."""
    boost = 1.0
    if shape < 1.0:
        boost = (1.0 - uniform(state)) ** (1.0 / shape)
        shape += 1.0
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = standard_normal(state)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = 1.0 - uniform(state)
        if math.log(u) < 0.5 * x * x + d - d * v + d * math.log(v):
            return d * v * boost


@nb.njit(cache=True)
def beta(state, a, b):
    x = gamma(state, a)
    y = gamma(state, b)
    s = x + y
    if s <= 0.0:
        return 0.5
    return x / s


def derive_seed(base_seed: int, index: int) -> int:
    """Per-run seed from a base seed and a run index (64-bit)."""
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


class RngStream:
    """A reproducible stream; ``state`` is a ``uint64[2]`` of (seed, counter)."""

    def __init__(self, seed: int, counter: int = 0):
        self.state = np.array(
            [int(seed) & 0xFFFFFFFFFFFFFFFF, int(counter)], dtype=np.uint64
        )

    @property
    def seed(self) -> int:
        return int(self.state[0])

    @property
    def counter(self) -> int:
        return int(self.state[1])

    def substream(self, index: int) -> "RngStream":
        return RngStream(derive_seed(self.seed, index))

    def uniform(self) -> float:
        return uniform(self.state)

    def randint(self, n: int) -> int:
        return randint(self.state, n)

    def categorical(self, probs) -> int:
        return categorical(self.state, np.ascontiguousarray(probs, dtype=np.float64))

    def beta(self, a: float, b: float) -> float:
        return beta(self.state, a, b)

    def copy(self) -> "RngStream":
        return RngStream(self.seed, self.counter)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, counter={self.counter})"
