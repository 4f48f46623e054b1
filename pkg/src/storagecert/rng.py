"""Portable seeded random streams: xoshiro256** seeded through splitmix64.

Every (trial, stream) pair owns an independent generator. Its 64-bit seed is

    h = splitmix64(master)
    h = splitmix64(h ^ trial)
    h = splitmix64(h ^ stream)

where splitmix64(v) is the output of one splitmix64 step started from state
v. The four xoshiro256** state words are the next four splitmix64 outputs
starting from h. Uniform doubles take the top 53 bits, (x >> 11) * 2^-53.
Normal variates use the polar Box-Muller method; the second value of every
accepted pair is cached and returned by the next request on that stream.

Streams are stored as arrays so thousands advance together; every stream
consumes only its own sequence, so results do not depend on batching.
"""

from __future__ import annotations

import numpy as np

MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def splitmix64_next(state: int) -> tuple[int, int]:
    """One splitmix64 step: (new state, output)."""
    state = (state + GAMMA) & MASK
    z = state
    z = ((z ^ (z >> 30)) * _M1) & MASK
    z = ((z ^ (z >> 27)) * _M2) & MASK
    return state, z ^ (z >> 31)


def splitmix64(value: int) -> int:
    return splitmix64_next(value & MASK)[1]


def child_seed(master: int, trial: int, stream: int) -> int:
    h = splitmix64(master)
    h = splitmix64(h ^ (trial & MASK))
    return splitmix64(h ^ (stream & MASK))


def _u64(v) -> np.ndarray:
    return np.asarray(v, dtype=np.uint64)


def _splitmix_vec(state: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    state = state + np.uint64(GAMMA)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return state, z ^ (z >> np.uint64(31))


def child_seeds(master: int, trials: np.ndarray, streams: np.ndarray) -> np.ndarray:
    """Vectorised child_seed over broadcast trial and stream indices."""
    with np.errstate(over="ignore"):
        h = _splitmix_vec(_u64(master & MASK))[1]
        h = _splitmix_vec(h ^ _u64(trials))[1]
        return _splitmix_vec(h ^ _u64(streams))[1]


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


class Streams:
    """A batch of independent xoshiro256** generators."""

    def __init__(self, seeds):
        seeds = np.atleast_1d(_u64(seeds)).ravel()
        state = np.empty((len(seeds), 4), dtype=np.uint64)
        s = seeds.copy()
        with np.errstate(over="ignore"):
            for j in range(4):
                s, out = _splitmix_vec(s)
                state[:, j] = out
        self.state = state
        self.spare = np.zeros(len(seeds))
        self.has_spare = np.zeros(len(seeds), dtype=bool)

    @classmethod
    def from_state(cls, state) -> "Streams":
        obj = cls.__new__(cls)
        obj.state = np.atleast_2d(_u64(state)).copy()
        obj.spare = np.zeros(len(obj.state))
        obj.has_spare = np.zeros(len(obj.state), dtype=bool)
        return obj

    def __len__(self):
        return len(self.state)

    def next_u64(self, idx=None) -> np.ndarray:
        idx = np.arange(len(self.state)) if idx is None else np.asarray(idx)
        s = self.state[idx]
        with np.errstate(over="ignore"):
            s0, s1, s2, s3 = s[:, 0], s[:, 1], s[:, 2], s[:, 3]
            result = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
            t = s1 << np.uint64(17)
            s2 = s2 ^ s0
            s3 = s3 ^ s1
            s1 = s1 ^ s2
            s0 = s0 ^ s3
            s2 = s2 ^ t
            s3 = _rotl(s3, 45)
        self.state[idx] = np.stack([s0, s1, s2, s3], axis=1)
        return result

    def uniform(self, idx=None) -> np.ndarray:
        """Doubles in [0, 1)."""
        return (self.next_u64(idx) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def normal(self, idx=None) -> np.ndarray:
        idx = np.arange(len(self.state)) if idx is None else np.asarray(idx)
        out = np.empty(len(idx))
        cached = self.has_spare[idx]
        out[cached] = self.spare[idx[cached]]
        self.has_spare[idx[cached]] = False
        todo = np.nonzero(~cached)[0]
        while len(todo):
            rows = idx[todo]
            v1 = 2.0 * self.uniform(rows) - 1.0
            v2 = 2.0 * self.uniform(rows) - 1.0
            s = v1 * v1 + v2 * v2
            ok = (s < 1.0) & (s > 0.0)
            f = np.sqrt(-2.0 * np.log(s[ok]) / s[ok])
            out[todo[ok]] = v1[ok] * f
            self.spare[rows[ok]] = v2[ok] * f
            self.has_spare[rows[ok]] = True
            todo = todo[~ok]
        return out
