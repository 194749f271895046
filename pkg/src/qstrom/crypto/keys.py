"""Key pairs and Schnorr signatures (wallet keys, enclave keys, DSO/utility keys)."""

from __future__ import annotations

from dataclasses import dataclass, field

from .drbg import Drbg, Seed
from .groups import Group


@dataclass(frozen=True)
class KeyPair:
    group: Group = field(repr=False)
    secret: int = field(repr=False)
    public: object

    @classmethod
    def from_secret(cls, group: Group, secret: int) -> "KeyPair":
        secret %= group.q
        if secret == 0:
            raise ValueError("secret scalar must be non-zero mod q")
        return cls(group, secret, group.base_mul(secret))

    @property
    def public_bytes(self) -> bytes:
        return self.group.encode(self.public)

    def sign(self, message: bytes) -> bytes:
        return schnorr_sign(self.group, self.secret, message)


def keygen(group: Group, rng_seed: Seed) -> KeyPair:
    return KeyPair.from_secret(group, Drbg(rng_seed, "keygen").scalar(group.q))


def schnorr_sign(group: Group, secret: int, message: bytes) -> bytes:
    """Deterministic Schnorr signature ``e || s`` with e = H(R, P, m), s = k + e*x."""
    public = group.base_mul(secret)
    pub_b = group.encode(public)
    k = group.hash_to_scalar(b"schnorr/nonce", group.encode_scalar(secret), message) or 1
    R = group.base_mul(k)
    e = group.hash_to_scalar(b"schnorr", group.encode(R), pub_b, message)
    s = (k + e * secret) % group.q
    return group.encode_scalar(e) + group.encode_scalar(s)


def schnorr_verify(group: Group, public, message: bytes, signature: bytes) -> bool:
    n = group.scalar_size
    if not isinstance(signature, (bytes, bytearray)) or len(signature) != 2 * n:
        return False
    try:
        e = group.decode_scalar(signature[:n])
        s = group.decode_scalar(signature[n:])
    except ValueError:
        return False
    if not group.is_element(public) or public == group.identity:
        return False
    # R = s*G - e*P
    R = group.double_mul(s, group.G, group.q - e, public)
    return group.hash_to_scalar(b"schnorr", group.encode(R), group.encode(public), message) == e
