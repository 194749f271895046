"""Joint-Feldman distributed key generation.

Every participant deals a random degree-t polynomial, publishes Feldman
commitments to its coefficients and sends each peer an encrypted share. The
joint public key is the sum of the constant-term commitments of the qualified
dealers; a participant's key share is the sum of the shares it received.

Known limitation: joint-Feldman lets a rushing dealer bias the distribution of
the joint key. Only shared-key functionality is relied upon here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .drbg import Drbg, Seed, child_seed
from .groups import Group
from .keys import KeyPair, keygen
from .threshold import AuthenticationFailure, ThresholdCiphertext, decrypt_with_secret, threshold_encrypt


class InvalidDealing(ValueError):
    def __init__(self, dealer: int, reason: str = "share fails commitment check"):
        super().__init__(f"dealer {dealer}: {reason}")
        self.dealer = dealer


@dataclass(frozen=True)
class VssDealing:
    dealer: int
    commitments: tuple  # C_k = a_k * G for k = 0..t
    encrypted_shares: dict = field(hash=False)  # receiver index -> ThresholdCiphertext

    @property
    def threshold(self) -> int:
        return len(self.commitments) - 1


@dataclass(frozen=True)
class SecretShare:
    index: int
    value: int = field(repr=False)


@dataclass
class DkgResult:
    group_key: object
    shares: list  # SecretShare per participant, index order
    transcript: list  # all VssDealings, including excluded ones
    qualified: list
    excluded: list
    verification_keys: dict  # index -> share_i * G
    threshold: int


def commitment_eval(group: Group, commitments, j: int):
    """sum_k j^k * C_k."""
    acc = group.identity
    power = 1
    for C in commitments:
        acc = group.add(acc, group.mul(C, power))
        power = power * j % group.q
    return acc


def verify_share(group: Group, dealing: VssDealing, j: int, share: int) -> bool:
    return group.base_mul(share) == commitment_eval(group, dealing.commitments, j)


def _share_aad(dealer: int, j: int) -> bytes:
    return b"dkg-share:%d:%d" % (dealer, j)


def deal(group: Group, dealer: int, recipients, threshold: int, rng_seed: Seed) -> VssDealing:
    """``recipients`` maps 1-based participant index -> public key."""
    rng = Drbg(rng_seed, f"dkg/deal/{dealer}")
    coeffs = [rng.scalar(group.q) for _ in range(threshold + 1)]
    commitments = tuple(group.base_mul(a) for a in coeffs)
    shares = {}
    for j in sorted(recipients):
        value = 0
        for a in reversed(coeffs):
            value = (value * j + a) % group.q
        shares[j] = threshold_encrypt(group, recipients[j], group.encode_scalar(value),
                                      child_seed(rng_seed, "dkg/enc", dealer, j), _share_aad(dealer, j))
    return VssDealing(dealer, commitments, shares)


def open_share(group: Group, dealing: VssDealing, j: int, secret: int) -> int:
    """Decrypt and check the share addressed to participant ``j``; raises InvalidDealing."""
    ct = dealing.encrypted_shares.get(j)
    if not isinstance(ct, ThresholdCiphertext):
        raise InvalidDealing(dealing.dealer, f"no share for participant {j}")
    try:
        value = group.decode_scalar(decrypt_with_secret(group, secret, ct, _share_aad(dealing.dealer, j)))
    except (AuthenticationFailure, ValueError):
        raise InvalidDealing(dealing.dealer, "share does not decrypt") from None
    if not verify_share(group, dealing, j, value):
        raise InvalidDealing(dealing.dealer)
    return value


def aggregate(group: Group, dealings, participants: dict, threshold: int) -> DkgResult:
    """Verify every dealing for every receiver, drop bad dealers and combine.

    ``participants`` maps index -> KeyPair (the harness plays all receivers).
    """
    excluded = set()
    opened = {}
    for d in dealings:
        if len(d.commitments) != threshold + 1 or d.dealer not in participants:
            excluded.add(d.dealer)
            continue
        try:
            for j, kp in participants.items():
                opened[(d.dealer, j)] = open_share(group, d, j, kp.secret)
        except InvalidDealing as exc:
            excluded.add(exc.dealer)
    qualified = sorted(d.dealer for d in dealings if d.dealer not in excluded)
    if not qualified:
        raise InvalidDealing(-1, "no qualified dealers")
    by_dealer = {d.dealer: d for d in dealings}
    group_key = group.sum(by_dealer[i].commitments[0] for i in qualified)
    shares = []
    vks = {}
    for j in sorted(participants):
        value = sum(opened[(i, j)] for i in qualified) % group.q
        shares.append(SecretShare(j, value))
        vks[j] = group.sum(commitment_eval(group, by_dealer[i].commitments, j) for i in qualified)
    return DkgResult(group_key, shares, list(dealings), qualified, sorted(excluded), vks, threshold)


def dkg_round(group: Group, participants: int, threshold: int, rng_seed: Seed,
              keys: dict | None = None) -> DkgResult:
    """Run a full DKG among ``participants`` parties indexed 1..n."""
    if not 0 <= threshold < participants:
        raise ValueError("need 0 <= t < n")
    if keys is None:
        keys = {j: keygen(group, child_seed(rng_seed, "dkg/transport", j)) for j in range(1, participants + 1)}
    recipients = {j: kp.public for j, kp in keys.items()}
    dealings = [deal(group, i, recipients, threshold, child_seed(rng_seed, "dkg/dealer", i))
                for i in sorted(keys)]
    return aggregate(group, dealings, keys, threshold)


def transport_keys(group: Group, n: int, rng_seed: Seed) -> dict:
    return {j: keygen(group, child_seed(rng_seed, "dkg/transport", j)) for j in range(1, n + 1)}


__all__ = [
    "InvalidDealing", "VssDealing", "SecretShare", "DkgResult", "KeyPair",
    "deal", "open_share", "aggregate", "dkg_round", "verify_share", "commitment_eval", "transport_keys",
]
