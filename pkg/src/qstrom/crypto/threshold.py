"""Threshold ElGamal key encapsulation with an AEAD body.

A ciphertext carries the ephemeral point R = r*G. The encapsulated point
S = r*K_c is never transmitted; holders of t+1 key shares rebuild it as a
Lagrange combination of partial decryptions x_i*R. The symmetric layer is
ChaCha20-Poly1305 keyed by a hash of S, wire format ``R || nonce || body || tag``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from .drbg import Drbg, Seed
from .groups import Group

NONCE_SIZE = 12


class NotEnoughShares(ValueError):
    pass


class AuthenticationFailure(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdCiphertext:
    R: object
    nonce: bytes
    body: bytes  # ciphertext followed by the 16-byte tag

    def to_bytes(self, group: Group) -> bytes:
        return group.encode(self.R) + self.nonce + self.body

    @classmethod
    def from_bytes(cls, group: Group, data: bytes) -> "ThresholdCiphertext":
        ps = group.point_size
        if len(data) < ps + NONCE_SIZE + 16:
            raise ValueError("ciphertext too short")
        return cls(group.decode(data[:ps]), data[ps:ps + NONCE_SIZE], data[ps + NONCE_SIZE:])


@dataclass(frozen=True)
class PartialDecryption:
    index: int
    D: object  # share * R
    proof: tuple  # (challenge, response) Chaum-Pedersen proof log_G(Y_i) = log_R(D)


def _kdf(group: Group, S, R) -> bytes:
    return hashlib.sha256(b"qstrom/kem" + group.encode(S) + group.encode(R)).digest()


def threshold_encrypt(group: Group, K_c, plaintext: bytes, rng_seed: Seed, aad: bytes = b"") -> ThresholdCiphertext:
    rng = Drbg(rng_seed, "tenc")
    r = rng.scalar(group.q)
    R = group.base_mul(r)
    S = group.mul(K_c, r)
    nonce = rng.bytes(NONCE_SIZE)
    body = ChaCha20Poly1305(_kdf(group, S, R)).encrypt(nonce, plaintext, group.encode(R) + aad)
    return ThresholdCiphertext(R, nonce, body)


def _open(group: Group, S, ct: ThresholdCiphertext, aad: bytes) -> bytes:
    try:
        return ChaCha20Poly1305(_kdf(group, S, ct.R)).decrypt(ct.nonce, ct.body, group.encode(ct.R) + aad)
    except InvalidTag:
        raise AuthenticationFailure("ciphertext failed authentication") from None


def decrypt_with_secret(group: Group, secret: int, ct: ThresholdCiphertext, aad: bytes = b"") -> bytes:
    """Single-holder decryption (t = 0, or a dealer-less key)."""
    return _open(group, group.mul(ct.R, secret), ct, aad)


def partial_decrypt(group: Group, share, ct: ThresholdCiphertext) -> PartialDecryption:
    """``share`` is a :class:`qstrom.crypto.dkg.SecretShare`."""
    D = group.mul(ct.R, share.value)
    Y = group.base_mul(share.value)
    k = group.hash_to_scalar(b"dleq/nonce", group.encode_scalar(share.value), group.encode(ct.R)) or 1
    A, B = group.base_mul(k), group.mul(ct.R, k)
    c = group.hash_to_scalar(b"dleq", *(group.encode(X) for X in (group.G, ct.R, Y, D, A, B)))
    return PartialDecryption(share.index, D, (c, (k + c * share.value) % group.q))


def verify_partial(group: Group, part: PartialDecryption, verification_key, ct: ThresholdCiphertext) -> bool:
    try:
        c, z = part.proof
        if not group.is_element(part.D):
            return False
        A = group.double_mul(z, group.G, group.q - c, verification_key)
        B = group.double_mul(z, ct.R, group.q - c, part.D)
        return c == group.hash_to_scalar(
            b"dleq", *(group.encode(X) for X in (group.G, ct.R, verification_key, part.D, A, B)))
    except (TypeError, ValueError):
        return False


def lagrange_at_zero(indices, q: int) -> dict:
    coeffs = {}
    for i in indices:
        num, den = 1, 1
        for j in indices:
            if j != i:
                num = num * j % q
                den = den * (j - i) % q
        coeffs[i] = num * pow(den, -1, q) % q
    return coeffs


def combine(group: Group, parts, ct: ThresholdCiphertext, aad: bytes = b"") -> bytes:
    parts = list(parts)
    if not parts:
        raise NotEnoughShares("no partial decryptions supplied")
    indices = [p.index for p in parts]
    if len(set(indices)) != len(indices) or min(indices) < 1:
        raise NotEnoughShares("partial decryptions must come from distinct share indices")
    lam = lagrange_at_zero(indices, group.q)
    S = group.identity
    for p in parts:
        S = group.add(S, group.mul(p.D, lam[p.index]))
    return _open(group, S, ct, aad)
