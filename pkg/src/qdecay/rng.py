"""Keyed random streams.

Every random quantity is drawn from a PCG64 stream keyed by
``(seed, domain, purpose, chain)``.  Within a stream, draws are consumed in
step order, then (s, a) order, so the value used at ``(t, d)`` is fixed by
the key alone and does not depend on how chains are batched or scheduled.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np

__all__ = ["Purpose", "stream", "BlockStreams"]


class Purpose(IntEnum):
    TRANSITION = 0
    REWARD = 1
    GAUSSIAN = 2
    EVALUATION = 3
    NOISE = 4
    DIRECTIONS = 5
    AUX = 6


def stream(seed: int, purpose: Purpose, chain: int = 0, domain: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(domain), int(purpose), int(chain)))
    return np.random.Generator(np.random.PCG64(ss))


class BlockStreams:
    """Hand out per-step draws for a batch of chains, generated in blocks.

    ``kind`` is ``"uniform"``, ``"normal"`` or a callable ``(generator, size)``.
    ``next()`` returns an array of shape ``(len(chains),) + shape`` for the
    next step; each row comes from that chain's own stream.
    """

    def __init__(self, seed, purpose, chains, shape, kind="uniform", domain=0, block=128):
        self._gens = [stream(seed, purpose, c, domain) for c in chains]
        self._shape = tuple(shape)
        self._kind = kind
        self._block = block
        self._buf = None
        self._pos = block

    def _refill(self):
        size = (self._block,) + self._shape
        if self._kind == "uniform":
            rows = [g.random(size) for g in self._gens]
        elif self._kind == "normal":
            rows = [g.standard_normal(size) for g in self._gens]
        else:
            rows = [self._kind(g, size) for g in self._gens]
        self._buf = np.stack(rows, axis=1)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos >= self._block:
            self._refill()
        out = self._buf[self._pos]
        self._pos += 1
        return out
