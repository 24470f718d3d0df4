"""
Counter-based random streams.

Every stream is a Philox generator whose 128-bit key is a stable hash of
(master seed, purpose tag, replicate, index). Streams are created on demand,
never split sequentially, so the order in which blocks run (or the number of
threads running them) cannot change which numbers a block sees.
"""
import hashlib
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

R = TypeVar('R')


def stream_key(master_seed: int, purpose: str, replicate: int = 0, index: int = 0) -> int:
    payload = f"{master_seed}|{purpose}|{replicate}|{index}".encode('utf-8')
    return int.from_bytes(hashlib.blake2b(payload, digest_size=16).digest(), 'little')


@dataclass(frozen=True)
class RngPolicy:
    """Derives substreams from a 64-bit master seed."""
    master_seed: int

    def __post_init__(self):
        if not 0 <= self.master_seed < 2 ** 64:
            raise ValueError("master seed must be an unsigned 64-bit integer")

    def generator(self, purpose: str, replicate: int = 0, index: int = 0) -> np.random.Generator:
        key = stream_key(self.master_seed, purpose, replicate, index)
        return np.random.Generator(np.random.Philox(key=key))

    def family(self, purpose: str, replicate: int = 0) -> 'StreamFamily':
        return StreamFamily(policy=self, purpose=purpose, replicate=replicate)


@dataclass
class DrawTally:
    """Normal draws handed out, per purpose tag; shared by a family and its children."""
    counts: Dict[str, int] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, purpose: str, draws: int):
        with self._lock:
            self.counts[purpose] = self.counts.get(purpose, 0) + draws

    def total(self, purpose: str) -> int:
        prefix = purpose + '/'
        return sum(n for p, n in self.counts.items() if p == purpose or p.startswith(prefix))


@dataclass
class StreamFamily:
    """
    Streams sharing a purpose tag and replicate, indexed by block. Counts the
    normal draws handed out, which is how deterministic paths prove they
    consumed no randomness.
    """
    policy: RngPolicy
    purpose: str
    replicate: int = 0
    tally: DrawTally = field(default_factory=DrawTally, repr=False)

    @property
    def consumed(self) -> int:
        """Draws taken from this family and its children."""
        return self.tally.total(self.purpose)

    def child(self, tag: str) -> 'StreamFamily':
        return StreamFamily(
            policy=self.policy, purpose=f"{self.purpose}/{tag}", replicate=self.replicate, tally=self.tally
        )

    def generator(self, index: int = 0) -> np.random.Generator:
        return self.policy.generator(self.purpose, self.replicate, index)

    def normals(self, index: int, shape: Tuple[int, ...]) -> np.ndarray:
        self.tally.add(self.purpose, int(np.prod(shape)))
        return self.generator(index).standard_normal(shape)


def block_slices(n: int, block_size: int) -> List[slice]:
    """Fixed partition of n particles into consecutive blocks."""
    return [slice(start, min(start + block_size, n)) for start in range(0, n, block_size)]


def map_blocks(fn: Callable[[int], R], n_blocks: int, threads: int = 1) -> List[R]:
    """Apply fn to 0..n_blocks-1, results in block order whatever the thread count."""
    if threads <= 1 or n_blocks <= 1:
        return [fn(b) for b in range(n_blocks)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_blocks)))


def ordered_sum(values: Sequence[float]) -> float:
    """Sum in the given order (no pairwise reordering)."""
    total = 0.0
    for value in values:
        total += float(value)
    return total
