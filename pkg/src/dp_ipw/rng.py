"""Seeded, splittable random streams.

A stream is a ``(seed, stream_id)`` pair. Every draw re-derives a PCG64
generator from ``SeedSequence([seed, stream_id, call_index])``, so a draw is
a pure function of the stream and the call index; nothing is shared or
mutated between callers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_id_for(trial_index: int, purpose: str) -> int:
    """Stable 64-bit id for a (trial, purpose) pair.

    blake2b rather than ``hash()``, which is salted per process.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(int(trial_index).to_bytes(8, "little", signed=True))
    h.update(purpose.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK64)

    @classmethod
    def for_trial(cls, seed: int, trial_index: int, purpose: str) -> "RngStream":
        return cls(seed, stream_id_for(trial_index, purpose))

    def generator(self, call_index: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence([self.seed, self.stream_id, int(call_index) & _MASK64])
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, purpose: str) -> "RngStream":
        """Derive an independent sub-stream tagged by ``purpose``."""
        h = hashlib.blake2b(digest_size=8)
        h.update(self.stream_id.to_bytes(8, "little"))
        h.update(purpose.encode("utf-8"))
        return RngStream(self.seed, int.from_bytes(h.digest(), "little"))


def standard_normal_vector(stream: RngStream, d: int, call_index: int = 0) -> np.ndarray:
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    return stream.generator(call_index).standard_normal(d)


def bernoulli(stream: RngStream, p, size: int | None = None, call_index: int = 0):
    """Draw 1 with probability ``p``.

    ``p`` may be an array, in which case one draw per entry is returned.
    """
    p_arr = np.asarray(p, dtype=np.float64)
    if np.any(~((p_arr >= 0.0) & (p_arr <= 1.0))):
        raise ValueError(f"probability must lie in [0, 1], got {p!r}")
    gen = stream.generator(call_index)
    shape = size if size is not None else p_arr.shape
    u = gen.random(shape)
    out = (u < p_arr).astype(np.int64)
    if size is None and p_arr.ndim == 0:
        return int(out)
    return out
