import json
import random

import pytest

from qstrom.crypto import DEMO, keygen
from qstrom.crypto.drbg import child_seed
from qstrom.ledger import (
    AlreadySpent, BadSignature, DuplicateKeyImage, Ledger, MixedDenominations, NonDecomposableValue,
    RingTooSmall, ShieldedSpend, UnknownNote, ValueMismatch, build_shield, build_transfer, build_unshield,
    decompose, derive_one_time, recover_one_time_secret, shield, transfer, unshield,
)

g = DEMO


@pytest.fixture
def alice():
    return keygen(g, "alice")


def funded(ledger, owner, value):
    return ledger.create_transparent(owner.public, value, "mint")


def test_one_time_address_recovery(alice):
    addr, R = derive_one_time(g, alice.public, 1)
    x = recover_one_time_secret(g, alice.secret, R)
    assert g.base_mul(x) == addr.P_o
    other, _ = derive_one_time(g, alice.public, 2)
    assert other.P_o != addr.P_o
    stranger = keygen(g, "mallory")
    assert g.base_mul(recover_one_time_secret(g, stranger.secret, R)) != addr.P_o
    assert addr.P_o != alice.public


def test_decompose():
    assert decompose(5000, (1000, 5000)) == [5000]
    assert decompose(7000, (1000, 5000)) == [5000, 1000, 1000]
    with pytest.raises(NonDecomposableValue):
        decompose(1500, (1000, 5000))


def test_shield_examples(alice):
    led = Ledger(g, (1000, 5000))
    n = funded(led, alice, 7000)
    out = shield(led, n.note_id, alice.public, alice.secret, 0)
    assert sorted(x.value for x in out) == [1000, 1000, 5000]
    assert len({x.owner for x in out}) == 3 and alice.public not in {x.owner for x in out}
    with pytest.raises(AlreadySpent):
        shield(led, n.note_id, alice.public, alice.secret, 1)
    n2 = funded(led, alice, 1500)
    with pytest.raises(NonDecomposableValue):
        shield(led, n2.note_id, alice.public, alice.secret, 0)


def test_shield_requires_owner(alice):
    led = Ledger(g, (1000,))
    n = funded(led, alice, 2000)
    bob = keygen(g, "bob")
    req = build_shield(led, n.note_id, bob.public, bob.secret, 0)
    with pytest.raises(BadSignature):
        led.apply_shield(req)
    assert not led.notes[n.note_id].spent


def _population(led, owners, per_owner=1, denom=1000):
    mine = {}
    for i, kp in enumerate(owners):
        n = funded(led, kp, denom * per_owner)
        req = build_shield(led, n.note_id, kp.public, kp.secret, i)
        for note, addr in zip(led.apply_shield(req), req.outputs):
            mine[note.note_id] = recover_one_time_secret(g, kp.secret, addr.R)
    return mine


def test_unshield_and_replay():
    owners = [keygen(g, i) for i in range(6)]
    led = Ledger(g, (1000,), ring_size=5)
    secrets = _population(led, owners)
    nid = next(iter(secrets))
    out_addr, _ = derive_one_time(g, owners[0].public, 99)
    spend = build_unshield(led, nid, secrets[nid], out_addr, 7)
    assert len(spend.ring) == 5 and nid in spend.ring
    before = led.total_unspent()
    note = unshield(led, spend)
    assert note.value == 1000 and note.owner == out_addr.P_o
    assert led.total_unspent() == before
    with pytest.raises(DuplicateKeyImage):
        unshield(led, spend)
    # a fresh ring over the same note still links through its key image
    again = build_unshield(led, nid, secrets[nid], derive_one_time(g, owners[0].public, 100)[0], 8)
    with pytest.raises(DuplicateKeyImage):
        unshield(led, again)


def test_unshield_rejections():
    owners = [keygen(g, i) for i in range(6)]
    led = Ledger(g, (1000, 5000), ring_size=5)
    secrets = _population(led, owners)
    big = _population(led, owners[:2], denom=5000)
    nid = next(iter(secrets))
    addr = derive_one_time(g, owners[0].public, 1)[0]
    spend = build_unshield(led, nid, secrets[nid], addr, 0)
    small = ShieldedSpend(spend.ring[:2], 1000, addr, spend.signature)
    with pytest.raises(RingTooSmall):
        led.apply_unshield(small)
    mixed = ShieldedSpend(spend.ring[:-1] + (next(iter(big)),), 1000, addr, spend.signature)
    with pytest.raises(MixedDenominations):
        led.apply_unshield(mixed)
    wrong_out = ShieldedSpend(spend.ring, 1000, derive_one_time(g, owners[1].public, 5)[0], spend.signature)
    with pytest.raises(BadSignature):
        led.apply_unshield(wrong_out)
    with pytest.raises(UnknownNote):
        led.apply_unshield(ShieldedSpend(spend.ring[:-1] + ("nope",), 1000, addr, spend.signature))
    assert led.key_images == set()


def test_transfer_examples(alice):
    led = Ledger(g)
    n = funded(led, alice, 8000)
    bob = keygen(g, "bob")
    outs = transfer(led, n.note_id, [(bob.public, 6000, None), (alice.public, 2000, None)], alice.secret)
    assert [o.value for o in outs] == [6000, 2000] and led.notes[n.note_id].spent
    n2 = funded(led, alice, 8000)
    with pytest.raises(ValueMismatch):
        transfer(led, n2.note_id, [(bob.public, 6000, None), (alice.public, 1000, None)], alice.secret)
    with pytest.raises(AlreadySpent):
        transfer(led, n.note_id, [(bob.public, 8000, None)], alice.secret)
    with pytest.raises(BadSignature):
        led.apply_transfer(build_transfer(led, n2.note_id, [(bob.public, 8000, None)], bob.secret))


def test_chained_transfers_preserve_value(alice):
    led = Ledger(g)
    n = funded(led, alice, 100_000)
    total = led.total_unspent()
    rng = random.Random(3)
    live = [(n, alice)]
    for i in range(60):
        note, owner = live.pop(rng.randrange(len(live)))
        if note.value < 2:
            live.append((note, owner))
            continue
        a = rng.randrange(1, note.value)
        k1, k2 = keygen(g, f"t{i}a"), keygen(g, f"t{i}b")
        o1, o2 = transfer(led, note.note_id, [(k1.public, a, None), (k2.public, note.value - a, None)], owner.secret)
        live += [(o1, k1), (o2, k2)]
        assert led.total_unspent() == total


def test_conservation_bookkeeping_oracle():
    """1000 seeded shield/unshield/transfer operations against an independent tally."""
    rng = random.Random(11)
    denoms = (1, 10, 100, 1000)
    led = Ledger(g, denoms, ring_size=3)
    owners = [keygen(g, i) for i in range(5)]
    transparent = {}  # note_id -> (value, secret)
    shielded = {}
    expected = 0
    for i, kp in enumerate(owners):
        n = led.create_transparent(kp.public, 5000, f"mint{i}")
        transparent[n.note_id] = (5000, kp.secret)
        expected += 5000
    ops = 0
    while ops < 1000:
        ops += 1
        choice = rng.random()
        if choice < 0.3 and transparent:
            nid = rng.choice(sorted(transparent))
            value, secret = transparent.pop(nid)
            kp = owners[rng.randrange(5)]
            req = build_shield(led, nid, kp.public, secret, ops)
            for note, addr in zip(led.apply_shield(req), req.outputs):
                shielded[note.note_id] = recover_one_time_secret(g, kp.secret, addr.R)
        elif choice < 0.7 and shielded:
            nid = rng.choice(sorted(shielded))
            secret = shielded.pop(nid)
            kp = owners[rng.randrange(5)]
            addr, R = derive_one_time(g, kp.public, child_seed(ops, "o"))
            note = led.apply_unshield(build_unshield(led, nid, secret, addr, ops))
            transparent[note.note_id] = (note.value, recover_one_time_secret(g, kp.secret, R))
        elif transparent:
            nid = rng.choice(sorted(transparent))
            value, secret = transparent.pop(nid)
            if value < 2:
                transparent[nid] = (value, secret)
                continue
            a = rng.randrange(1, value)
            k1, k2 = keygen(g, f"x{ops}"), keygen(g, f"y{ops}")
            o1, o2 = transfer(led, nid, [(k1.public, a, None), (k2.public, value - a, None)], secret)
            transparent[o1.note_id] = (a, k1.secret)
            transparent[o2.note_id] = (value - a, k2.secret)
        tally = sum(v for v, _ in transparent.values()) + sum(led.notes[n].value for n in shielded)
        assert tally == expected == led.total_unspent()
    assert len(led.key_images) == len({*led.key_images})


def test_spend_record_has_no_funder_fields():
    owners = [keygen(g, i) for i in range(6)]
    led = Ledger(g, (1000,), ring_size=5)
    funding = {}
    secrets = {}
    for i, kp in enumerate(owners):
        n = funded(led, kp, 1000)
        funding[kp.public] = n.note_id
        req = build_shield(led, n.note_id, kp.public, kp.secret, i)
        for note, addr in zip(led.apply_shield(req), req.outputs):
            secrets[note.note_id] = (recover_one_time_secret(g, kp.secret, addr.R), kp)
    nid, (secret, kp) = sorted(secrets.items())[0]
    spend = build_unshield(led, nid, secret, derive_one_time(g, kp.public, 5)[0], 1)
    blob = json.dumps(spend.to_json(g))
    assert g.encode(kp.public).hex() not in blob
    assert funding[kp.public] not in blob
    assert ShieldedSpend.from_json(g, json.loads(blob), led) == spend
