import itertools
import json
import pathlib

import pytest
from hypothesis import given, settings, strategies as st

from qstrom.crypto import (
    DEMO, SECP256K1, AuthenticationFailure, InvalidDealing, NotEnoughShares, RingSignature,
    RingTooSmall, SignerNotInRing, combine, dkg_round, key_image, keygen, lsag_sign, lsag_verify,
    partial_decrypt, schnorr_verify, threshold_encrypt,
)
from qstrom.crypto.dkg import aggregate, deal, transport_keys, verify_share
from qstrom.crypto.keys import KeyPair
from qstrom.crypto.lsag import lsag_verify_bytes
from qstrom.crypto.threshold import ThresholdCiphertext, verify_partial
from oracles import interpolate_at_zero

GROUPS = [DEMO, SECP256K1]


@pytest.mark.parametrize("g", GROUPS, ids=lambda g: g.label)
def test_keygen_edge_scalars(g):
    assert KeyPair.from_secret(g, 1).public == g.G
    assert KeyPair.from_secret(g, g.q - 1).public == g.neg(g.G)
    assert keygen(g, 42) == keygen(g, 42)
    assert keygen(g, 42).public != keygen(g, 43).public


@pytest.mark.parametrize("g", GROUPS, ids=lambda g: g.label)
def test_group_laws(g):
    a, b = g.base_mul(11), g.base_mul(29)
    assert g.add(a, b) == g.base_mul(40)
    assert g.add(g.add(a, b), g.G) == g.add(a, g.add(b, g.G))
    assert g.add(a, g.neg(a)) == g.identity
    assert g.double_mul(3, a, 7, b) == g.base_mul(3 * 11 + 7 * 29)
    assert g.decode(g.encode(a)) == a


def test_hash_to_group_membership_and_determinism(group):
    h = group.hash_to_group(b"meter-17")
    assert h == group.hash_to_group(b"meter-17")
    assert group.is_element(h) and h != group.identity


def test_hash_to_group_no_collisions_demo():
    seen = {DEMO.hash_to_group(i.to_bytes(4, "big")) for i in range(10_000)}
    assert len(seen) == 10_000


def test_key_image_not_publicly_computable(group, keys):
    # a hash-to-scalar construction would give I = h(P) * P, computable by anyone
    kp = keys[0]
    image = key_image(group, kp.secret)
    naive = group.mul(kp.public, group.hash_to_scalar(b"", group.encode(kp.public)))
    assert image != naive
    assert image == group.mul(group.hash_to_group(group.encode(kp.public)), kp.secret)


def test_schnorr_round_trip(group, keys):
    sig = keys[3].sign(b"payload")
    assert schnorr_verify(group, keys[3].public, b"payload", sig)
    assert not schnorr_verify(group, keys[4].public, b"payload", sig)
    assert not schnorr_verify(group, keys[3].public, b"payloaD", sig)
    assert not schnorr_verify(group, keys[3].public, b"payload", sig[:-1])


# -- LSAG ------------------------------------------------------------------

def test_lsag_ring_of_two(group, keys):
    ring = [keys[0].public, keys[1].public]
    sig = lsag_sign(group, b"m", ring, 1, keys[1].secret, 0)
    assert lsag_verify(group, b"m", ring, sig)


def test_lsag_key_image_links_messages_and_rings(group, keys):
    r1 = [k.public for k in keys[:4]]
    r2 = [keys[9].public, keys[2].public, keys[7].public]
    s1 = lsag_sign(group, b"first", r1, 2, keys[2].secret, 1)
    s2 = lsag_sign(group, b"second", r2, 1, keys[2].secret, 2)
    assert s1.key_image == s2.key_image
    other = lsag_sign(group, b"first", r1, 3, keys[3].secret, 1)
    assert other.key_image != s1.key_image


def test_lsag_ring_reordered_fails(group, keys):
    ring = [k.public for k in keys[:5]]
    sig = lsag_sign(group, b"m", ring, 0, keys[0].secret, 3)
    shuffled = ring[1:] + ring[:1]
    assert not lsag_verify(group, b"m", shuffled, sig)
    # re-signing over the reordered ring is accepted, so the ring itself is what binds
    resigned = lsag_sign(group, b"m", shuffled, 4, keys[0].secret, 3)
    assert lsag_verify(group, b"m", shuffled, resigned)


def test_lsag_disjoint_ring_fails(group, keys):
    sig = lsag_sign(group, b"m", [k.public for k in keys[:3]], 0, keys[0].secret, 0)
    assert not lsag_verify(group, b"m", [k.public for k in keys[3:6]], sig)


def test_lsag_errors(group, keys):
    with pytest.raises(RingTooSmall):
        lsag_sign(group, b"m", [keys[0].public], 0, keys[0].secret, 0)
    with pytest.raises(SignerNotInRing):
        lsag_sign(group, b"m", [keys[0].public, keys[1].public], 0, keys[5].secret, 0)


def test_lsag_mutation_fuzz(group, keys):
    import random

    rng = random.Random(5)
    ring = [k.public for k in keys[:4]]
    sig = lsag_sign(group, b"order", ring, 1, keys[1].secret, 9)
    raw = sig.to_bytes(group)
    assert lsag_verify_bytes(group, b"order", ring, raw)
    for _ in range(300):
        pos = rng.randrange(len(raw))
        mutated = raw[:pos] + bytes([raw[pos] ^ (1 << rng.randrange(8))]) + raw[pos + 1:]
        ring_m = ring
        try:
            ring_m = list(RingSignature.from_bytes(group, mutated).ring)
        except ValueError:
            pass
        assert not lsag_verify_bytes(group, b"order", ring_m, mutated)
        msg = bytearray(b"order")
        msg[rng.randrange(len(msg))] ^= 1 << rng.randrange(8)
        assert not lsag_verify(group, bytes(msg), ring, sig)


def test_lsag_json_round_trip(group, keys):
    ring = [k.public for k in keys[:3]]
    sig = lsag_sign(group, b"x", ring, 2, keys[2].secret, 0)
    assert RingSignature.from_json(group, json.loads(json.dumps(sig.to_json(group)))) == sig


def test_lsag_standard_profile():
    ks = [keygen(SECP256K1, i) for i in range(3)]
    sig = lsag_sign(SECP256K1, b"x", [k.public for k in ks], 1, ks[1].secret, 0)
    assert lsag_verify(SECP256K1, b"x", [k.public for k in ks], sig)
    assert not lsag_verify(SECP256K1, b"y", [k.public for k in ks], sig)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 6), data=st.data())
def test_lsag_round_trip_property(n, data):
    g = DEMO
    seeds = data.draw(st.lists(st.integers(0, 2**32), min_size=n, max_size=n, unique=True))
    ks = [keygen(g, s) for s in seeds]
    idx = data.draw(st.integers(0, n - 1))
    msg = data.draw(st.binary(max_size=40))
    sig = lsag_sign(g, msg, [k.public for k in ks], idx, ks[idx].secret, data.draw(st.integers(0, 99)))
    assert lsag_verify(g, msg, [k.public for k in ks], sig)
    assert sig.key_image == key_image(g, ks[idx].secret)


def test_key_images_distinct_for_distinct_secrets(group):
    images = {key_image(group, keygen(group, s).secret) for s in range(1000)}
    assert len(images) == 1000


# -- DKG / threshold -------------------------------------------------------

def test_dkg_degenerate_single_party(group):
    res = dkg_round(group, 1, 0, 3)
    assert res.group_key == res.transcript[0].commitments[0]
    assert group.base_mul(res.shares[0].value) == res.group_key


def test_dkg_interpolation_oracle(group):
    res = dkg_round(group, 4, 1, 11)
    for pair in itertools.combinations(res.shares, 2):
        secret = interpolate_at_zero([(s.index, s.value) for s in pair], group.q)
        assert group.base_mul(secret) == res.group_key
    for d in res.transcript:
        assert d.threshold == 1


def test_dkg_shares_verify_against_commitments(group):
    keys = transport_keys(group, 4, 5)
    res = dkg_round(group, 4, 2, 5, keys=keys)
    assert res.qualified == [1, 2, 3, 4] and res.excluded == []
    for s in res.shares:
        assert group.base_mul(s.value) == res.verification_keys[s.index]


def test_dkg_tampered_share_excludes_exactly_that_dealer(group):
    keys = transport_keys(group, 4, 8)
    recipients = {j: k.public for j, k in keys.items()}
    dealings = [deal(group, i, recipients, 1, i * 13) for i in range(1, 5)]
    bad = dealings[2]
    # re-encrypt a wrong share for receiver 1 under dealer 3's transcript
    forged = threshold_encrypt(group, recipients[1], group.encode_scalar(12345), 0, b"dkg-share:3:1")
    dealings[2] = type(bad)(bad.dealer, bad.commitments, {**bad.encrypted_shares, 1: forged})
    with pytest.raises(InvalidDealing) as err:
        from qstrom.crypto.dkg import open_share
        open_share(group, dealings[2], 1, keys[1].secret)
    assert err.value.dealer == 3
    res = aggregate(group, dealings, keys, 1)
    assert res.excluded == [3] and res.qualified == [1, 2, 4]
    assert res.group_key == group.sum(dealings[i - 1].commitments[0] for i in (1, 2, 4))
    for pair in itertools.combinations(res.shares, 2):
        assert group.base_mul(interpolate_at_zero([(s.index, s.value) for s in pair], group.q)) == res.group_key


def test_verify_share_rejects_wrong_value(group):
    keys = transport_keys(group, 3, 1)
    d = deal(group, 1, {j: k.public for j, k in keys.items()}, 1, 0)
    assert not verify_share(group, d, 2, 99)


def test_threshold_all_subsets(group):
    res = dkg_round(group, 4, 1, 21)
    ct = threshold_encrypt(group, res.group_key, b"BUY 10000 x 1000", 4)
    outs = set()
    for pair in itertools.combinations(res.shares, 2):
        outs.add(combine(group, [partial_decrypt(group, s, ct) for s in pair], ct))
    assert outs == {b"BUY 10000 x 1000"}
    for s in res.shares:
        with pytest.raises(AuthenticationFailure):
            combine(group, [partial_decrypt(group, s, ct)], ct)
    with pytest.raises(NotEnoughShares):
        combine(group, [], ct)
    p = partial_decrypt(group, res.shares[0], ct)
    with pytest.raises(NotEnoughShares):
        combine(group, [p, p], ct)


def test_threshold_rotation(group):
    old = dkg_round(group, 4, 1, "epoch-1")
    new = dkg_round(group, 4, 1, "epoch-2")
    assert old.group_key != new.group_key
    ct = threshold_encrypt(group, old.group_key, b"secret order", 1)
    with pytest.raises(AuthenticationFailure):
        combine(group, [partial_decrypt(group, s, ct) for s in new.shares[:2]], ct)


def test_partial_proofs(group):
    res = dkg_round(group, 4, 1, 2)
    ct = threshold_encrypt(group, res.group_key, b"x", 0)
    p = partial_decrypt(group, res.shares[1], ct)
    assert verify_partial(group, p, res.verification_keys[2], ct)
    assert not verify_partial(group, p, res.verification_keys[3], ct)


def test_ciphertext_wire_format(group):
    res = dkg_round(group, 3, 1, 0)
    ct = threshold_encrypt(group, res.group_key, b"abc", 1)
    raw = ct.to_bytes(group)
    assert len(raw) == group.point_size + 12 + 3 + 16
    assert ThresholdCiphertext.from_bytes(group, raw) == ct
    tampered = ThresholdCiphertext.from_bytes(group, raw[:-1] + bytes([raw[-1] ^ 1]))
    with pytest.raises(AuthenticationFailure):
        combine(group, [partial_decrypt(group, s, tampered) for s in res.shares[:2]], tampered)


def test_threshold_reproducible(group):
    a = threshold_encrypt(group, group.base_mul(5), b"p", 77)
    b = threshold_encrypt(group, group.base_mul(5), b"p", 77)
    assert a == b


def test_frozen_vectors(group):
    from qstrom.crypto.vectors import generate_vectors

    path = pathlib.Path(__file__).parent / "vectors" / "demo.json"
    assert generate_vectors("demo") == json.loads(path.read_text())
