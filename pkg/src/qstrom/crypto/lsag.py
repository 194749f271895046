"""Linkable spontaneous anonymous group (LSAG) signatures, CryptoNote style.

The key image ``I = x * Hp(P)`` depends only on the signer's key pair, so two
spends by one key are detectable while the ring hides which member signed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .drbg import Drbg, Seed
from .groups import Group


class SignerNotInRing(ValueError):
    pass


class RingTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class RingSignature:
    ring: tuple
    key_image: object
    c0: int
    responses: tuple

    def to_bytes(self, group: Group) -> bytes:
        parts = [len(self.ring).to_bytes(2, "big")]
        parts += [group.encode(P) for P in self.ring]
        parts.append(group.encode(self.key_image))
        parts.append(group.encode_scalar(self.c0))
        parts += [group.encode_scalar(s) for s in self.responses]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, group: Group, data: bytes) -> "RingSignature":
        n = int.from_bytes(data[:2], "big")
        ps, ss = group.point_size, group.scalar_size
        if len(data) != 2 + n * ps + ps + ss + n * ss:
            raise ValueError("bad signature length")
        off = 2
        ring = []
        for _ in range(n):
            ring.append(group.decode(data[off:off + ps]))
            off += ps
        image = group.decode(data[off:off + ps])
        off += ps
        c0 = group.decode_scalar(data[off:off + ss])
        off += ss
        responses = []
        for _ in range(n):
            responses.append(group.decode_scalar(data[off:off + ss]))
            off += ss
        return cls(tuple(ring), image, c0, tuple(responses))

    def to_json(self, group: Group) -> dict:
        return {
            "ring": [group.encode(P).hex() for P in self.ring],
            "key_image": group.encode(self.key_image).hex(),
            "c0": group.encode_scalar(self.c0).hex(),
            "s": [group.encode_scalar(s).hex() for s in self.responses],
        }

    @classmethod
    def from_json(cls, group: Group, obj: dict) -> "RingSignature":
        return cls(
            tuple(group.decode(bytes.fromhex(h)) for h in obj["ring"]),
            group.decode(bytes.fromhex(obj["key_image"])),
            group.decode_scalar(bytes.fromhex(obj["c0"])),
            tuple(group.decode_scalar(bytes.fromhex(h)) for h in obj["s"]),
        )


def key_image(group: Group, secret: int, public=None):
    if public is None:
        public = group.base_mul(secret)
    return group.mul(group.hash_to_group(group.encode(public)), secret)


def _ring_digest(group: Group, ring, image, message: bytes) -> bytes:
    h = hashlib.sha256(b"qstrom/lsag/prefix")
    for P in ring:
        h.update(group.encode(P))
    h.update(group.encode(image))
    h.update(hashlib.sha256(message).digest())
    return h.digest()


def _challenge(group: Group, prefix: bytes, L, R) -> int:
    return group.hash_to_scalar(b"lsag", prefix, group.encode(L), group.encode(R))


def lsag_sign(group: Group, message: bytes, ring, signer_index: int, signer_secret: int,
              rng_seed: Seed) -> RingSignature:
    ring = tuple(ring)
    n = len(ring)
    if n < 2:
        raise RingTooSmall(f"ring size {n} < 2")
    if not 0 <= signer_index < n or group.base_mul(signer_secret) != ring[signer_index]:
        raise SignerNotInRing("secret does not match the public key at signer_index")
    q = group.q
    rng = Drbg(rng_seed, "lsag")
    hp = [group.hash_to_group(group.encode(P)) for P in ring]
    image = group.mul(hp[signer_index], signer_secret)
    prefix = _ring_digest(group, ring, image, message)

    alpha = rng.scalar(q)
    s = [rng.scalar(q) for _ in range(n)]
    c = [0] * n
    pi = signer_index
    c[(pi + 1) % n] = _challenge(group, prefix, group.base_mul(alpha), group.mul(hp[pi], alpha))
    i = (pi + 1) % n
    while i != pi:
        L = group.double_mul(s[i], group.G, c[i], ring[i])
        R = group.double_mul(s[i], hp[i], c[i], image)
        c[(i + 1) % n] = _challenge(group, prefix, L, R)
        i = (i + 1) % n
    s[pi] = (alpha - c[pi] * signer_secret) % q
    return RingSignature(ring, image, c[0], tuple(s))


def lsag_verify(group: Group, message: bytes, ring, sig: RingSignature) -> bool:
    try:
        ring = tuple(ring)
        n = len(ring)
        if n < 2 or tuple(sig.ring) != ring or len(sig.responses) != n:
            return False
        if not group.is_element(sig.key_image) or sig.key_image == group.identity:
            return False
        if any(not group.is_element(P) for P in ring):
            return False
        q = group.q
        if not all(0 <= s < q for s in sig.responses) or not 0 <= sig.c0 < q:
            return False
        prefix = _ring_digest(group, ring, sig.key_image, message)
        c = sig.c0
        for i in range(n):
            hp = group.hash_to_group(group.encode(ring[i]))
            L = group.double_mul(sig.responses[i], group.G, c, ring[i])
            R = group.double_mul(sig.responses[i], hp, c, sig.key_image)
            c = _challenge(group, prefix, L, R)
        return c == sig.c0
    except (TypeError, ValueError, AttributeError):
        return False


def lsag_verify_bytes(group: Group, message: bytes, ring, data: bytes) -> bool:
    try:
        sig = RingSignature.from_bytes(group, data)
    except (ValueError, IndexError):
        return False
    return lsag_verify(group, message, ring, sig)
