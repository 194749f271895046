"""Deterministic randomness derived from seeds.

Every randomized operation in the package takes a seed and expands it with
HMAC-SHA256 in counter mode, so outputs are bit-reproducible across runs and
platforms.
"""

from __future__ import annotations

import hashlib
import hmac
from typing import Union

Seed = Union[int, str, bytes]


def seed_bytes(seed: Seed) -> bytes:
    """Injective, type-tagged encoding of a seed."""
    if isinstance(seed, bytes):
        return b"b" + seed
    if isinstance(seed, str):
        return b"s" + seed.encode()
    if isinstance(seed, int) and not isinstance(seed, bool):
        if seed < 0:
            raise ValueError("integer seeds must be non-negative")
        return b"i" + seed.to_bytes(max(1, (seed.bit_length() + 7) // 8), "big")
    raise TypeError(f"unsupported seed type {type(seed).__name__}")


def _prf(seed: Seed, msg: bytes) -> bytes:
    # the seed goes into the message: HMAC keys are zero-padded and would collide
    sb = seed_bytes(seed)
    return hmac.new(b"qstrom-drbg", len(sb).to_bytes(4, "big") + sb + msg, hashlib.sha256).digest()


def child_seed(seed: Seed, *labels) -> bytes:
    """Derive an independent seed for a named sub-task."""
    msg = b"/".join(str(label).encode() if not isinstance(label, bytes) else label for label in labels)
    return _prf(seed, b"child:" + msg)


class Drbg:
    """Counter-mode HMAC-SHA256 byte stream."""

    def __init__(self, seed: Seed, label: str = ""):
        self._key = _prf(seed, b"drbg:" + label.encode())
        self._counter = 0

    def bytes(self, n: int) -> bytes:
        out = bytearray()
        while len(out) < n:
            out += hmac.new(self._key, self._counter.to_bytes(8, "big"), hashlib.sha256).digest()
            self._counter += 1
        return bytes(out[:n])

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        # 64 surplus bits keep the modulo bias below 2**-64
        width = (n.bit_length() + 64 + 7) // 8
        return int.from_bytes(self.bytes(width), "big") % n

    def scalar(self, q: int) -> int:
        """Uniform scalar in [1, q-1]."""
        return 1 + self.randbelow(q - 1)

    def sample(self, population, k: int) -> list:
        """Deterministic sample without replacement (partial Fisher-Yates)."""
        pool = list(population)
        if k > len(pool):
            raise ValueError("sample larger than population")
        for i in range(k):
            j = i + self.randbelow(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]
