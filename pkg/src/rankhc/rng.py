"""Reproducible, splittable random streams.

Every random draw in the package comes from a Philox counter-based generator
keyed on ``(seed, path)``. A path is a tuple of small integers naming the
purpose of the stream (phase, column, chunk, trial...). Streams never share
state, so results do not depend on evaluation order or thread count.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass

import numpy as np

# Stream tags. Values are part of the reproducibility contract; never renumber.
TIES = 1
PERMUTE = 2
PQ_PHASE = 3
TNULL_PHASE = 4
ATOMS = 5
DATA = 6
METHOD = 7
MOMENTS = 8
ORACLE_NULL = 9


@dataclass(frozen=True)
class RngSeed:
    """A 64-bit seed plus a spawn path identifying one independent stream."""

    seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")

    def child(self, *keys: int) -> "RngSeed":
        return RngSeed(self.seed, self.path + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))

    def to_json(self) -> dict:
        return {"seed": int(self.seed), "path": list(self.path)}

    @classmethod
    def from_json(cls, obj: dict) -> "RngSeed":
        return cls(int(obj["seed"]), tuple(obj.get("path", ())))


def as_seed(seed: "RngSeed | int | None") -> RngSeed:
    """Coerce an int (or an existing RngSeed) to an RngSeed.

    ``None`` is rejected on purpose: all randomized entry points require an
    explicit seed. Use :func:`fresh_seed` to draw one and record it.
    """
    if isinstance(seed, RngSeed):
        return seed
    if seed is None:
        raise ValueError("an explicit seed is required")
    return RngSeed(int(seed))


def fresh_seed() -> int:
    return secrets.randbits(63)


def fisher_yates_draws(rng: np.random.Generator, shape: tuple[int, ...], n: int) -> np.ndarray:
    """Swap indices for Fisher-Yates shuffles of length ``n``.

    Returns an int64 array of shape ``shape + (n - 1,)``; entry ``k`` is uniform
    on ``[0, n - 1 - k]`` and is the swap partner of position ``n - 1 - k``.
    """
    if n <= 1:
        return np.zeros(shape + (0,), dtype=np.int64)
    high = np.arange(n, 1, -1, dtype=np.int64)
    return rng.integers(0, high, size=shape + (n - 1,), dtype=np.int64)
