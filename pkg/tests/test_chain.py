import random

import pytest

from qstrom.attestation import issue_quote, measure
from qstrom.chain import (
    BadSignature, Chain, ChainTx, ContractError, EscrowedOrder, Genesis, ReplayedTx, make_tx, read_log, replay,
)
from qstrom.crypto import DEMO, keygen
from qstrom.ledger import OneTimeAddress, derive_one_time, recover_one_time_secret
from qstrom.market import Order, Side, max_payment

g = DEMO
DSO = keygen(g, "dso")
UTILITY = keygen(g, "utility")
MAKERS = {"m1": keygen(g, "maker-1"), "m2": keygen(g, "maker-2")}
GOOD = measure(b"enclave-program-v1")


def make_genesis(**kw):
    params = dict(group_profile="demo", dso_pub=DSO.public_bytes.hex(), utility_pub=UTILITY.public_bytes.hex(),
                  manufacturers={k: v.public_bytes.hex() for k, v in MAKERS.items()},
                  measurement_allowlist=[GOOD], denominations=[1000, 5000], ring_size=3, utility_treasury=10 ** 6)
    params.update(kw)
    return Genesis(**params)


@pytest.fixture
def chain():
    return Chain(make_genesis())


def mint(chain, owner_pub, amount, nonce=0):
    return chain.apply(make_tx(UTILITY, "iou", "mint", {"beneficiary": g.encode(owner_pub).hex(), "amount": amount},
                               nonce))["note_id"]


def return_address(owner, seed):
    addr, _ = derive_one_time(g, owner.public, seed)
    return addr


def order_tx(bidder, oid, side, price, energy, escrow_ids, ret, slot=0, credential=None):
    order = Order(oid.to_bytes(32, "big"), side, price, energy, slot)
    eo = EscrowedOrder(order, tuple(escrow_ids), ret, credential)
    return make_tx(bidder, "auction", "submit", eo.to_json(g))


def test_mint_and_supply(chain):
    alice = keygen(g, "alice")
    nid = mint(chain, alice.public, 50000)
    assert chain.ledger.notes[nid].value == 50000 and chain.iou_supply == 50000
    mint(chain, alice.public, 20000, nonce=1)
    assert chain.iou_supply == 70000


def test_unauthorized_mint_is_atomic(chain):
    alice = keygen(g, "alice")
    before = chain.state_hash()
    with pytest.raises(ContractError) as exc:
        chain.apply(make_tx(alice, "iou", "mint", {"beneficiary": alice.public_bytes.hex(), "amount": 5}))
    assert exc.value.kind == "Unauthorized"
    assert chain.state_hash() == before and chain.iou_supply == 0


def test_signature_and_replay(chain):
    alice = keygen(g, "alice")
    tx = make_tx(UTILITY, "iou", "mint", {"beneficiary": alice.public_bytes.hex(), "amount": 5})
    forged = ChainTx(tx.contract, tx.method, {"beneficiary": alice.public_bytes.hex(), "amount": 6}, tx.sender,
                     tx.nonce, tx.signature)
    with pytest.raises(BadSignature):
        chain.apply(forged)
    chain.apply(tx)
    with pytest.raises(ReplayedTx):
        chain.apply(tx)


def test_escrow_boundaries(chain):
    bob = keygen(g, "bob")
    assert max_payment(10000, 1000) == 10000
    exact = mint(chain, bob.public, 10000)
    chain.apply(order_tx(bob, 1, Side.BUY, 10000, 1000, [exact], return_address(bob, 1)))
    short = mint(chain, bob.public, 9999, nonce=1)
    before = chain.state_hash()
    with pytest.raises(ContractError) as exc:
        chain.apply(order_tx(bob, 2, Side.BUY, 10000, 1000, [short], return_address(bob, 2)))
    assert exc.value.kind == "InsufficientEscrow" and chain.state_hash() == before
    with pytest.raises(ContractError) as exc:
        chain.apply(order_tx(bob, 3, Side.BUY, 10000, 1000, [exact], return_address(bob, 3)))
    assert exc.value.kind == "UnknownEscrowNote"


def test_escrow_must_belong_to_sender(chain):
    bob, eve = keygen(g, "bob"), keygen(g, "eve")
    nid = mint(chain, bob.public, 10000)
    with pytest.raises(ContractError) as exc:
        chain.apply(order_tx(eve, 1, Side.BUY, 10000, 1000, [nid], return_address(eve, 1)))
    assert exc.value.kind == "Unauthorized"


def test_settle_pair_with_change(chain):
    bob, sue = keygen(g, "bob"), keygen(g, "sue")
    nid = mint(chain, bob.public, 10000)
    bob_ret, sue_ret = return_address(bob, 7), return_address(sue, 8)
    chain.apply(order_tx(bob, 1, Side.BUY, 10000, 1000, [nid], bob_ret))
    chain.apply(order_tx(sue, 2, Side.SELL, 6000, 1000, [], sue_ret))
    with pytest.raises(ContractError) as exc:
        chain.apply(make_tx(None, "auction", "settle", {"slot": 0}))
    assert exc.value.kind == "SlotStillOpen"
    chain.apply(make_tx(UTILITY, "auction", "close", {}))
    total = chain.total_value()
    res = chain.apply(make_tx(None, "auction", "settle", {"slot": 0}))["result"]
    assert [t["payment"] for t in res["trades"]] == [8000]
    paid = {g.encode(n.owner): n.value for n in chain.ledger.notes.values() if not n.spent}
    assert paid[g.encode(bob_ret.P_o)] == 2000 and paid[g.encode(sue_ret.P_o)] == 8000
    assert chain.total_value() == total and chain.escrow_locked == 0
    # the returned change is spendable with the one-time secret
    x = recover_one_time_secret(g, bob.secret, bob_ret.R)
    assert g.base_mul(x) == bob_ret.P_o


def test_empty_slot_settles_without_mutation(chain):
    chain.apply(make_tx(UTILITY, "auction", "close", {}))
    ledger_before = chain.ledger.state_hash()
    res = chain.apply(make_tx(None, "auction", "settle", {"slot": 0}))["result"]
    assert res["trades"] == [] and res["utility_fills"] == []
    assert chain.ledger.state_hash() == ledger_before


def test_utility_fills_against_pool(chain):
    bob, sue = keygen(g, "bob"), keygen(g, "sue")
    nid = mint(chain, bob.public, 30000)
    chain.apply(order_tx(bob, 1, Side.BUY, 30000, 1000, [nid], return_address(bob, 1)))
    chain.apply(order_tx(sue, 2, Side.SELL, 35000, 500, [], return_address(sue, 2)))
    chain.apply(make_tx(UTILITY, "auction", "close", {}))
    pool = chain.utility_pool
    total = chain.total_value()
    chain.apply(make_tx(None, "auction", "settle", {"slot": 0}))
    # buyer pays 25000 grid tariff, seller gets 8000 * 0.5 feed-in
    assert chain.utility_pool == pool + 25000 - 4000
    assert chain.total_value() == total


def test_register_enclave(chain):
    ek = keygen(g, "enclave-0")
    quote = issue_quote(g, MAKERS["m1"], "m1", GOOD, ek.public)
    chain.apply(make_tx(None, "registry", "register_enclave", quote.to_json(g)))
    assert chain.epoch == 1 and chain.enclave_keys() == [ek.public_bytes.hex()]
    with pytest.raises(ContractError) as exc:
        chain.apply(make_tx(None, "registry", "register_enclave", quote.to_json(g), nonce=1))
    assert exc.value.kind == "DuplicateEnclaveKey"
    bad = issue_quote(g, MAKERS["m1"], "m1", measure(b"patched"), keygen(g, "enclave-1").public)
    with pytest.raises(ContractError) as exc:
        chain.apply(make_tx(None, "registry", "register_enclave", bad.to_json(g)))
    assert exc.value.kind == "MeasurementNotAllowed"
    rogue = issue_quote(g, keygen(g, "rogue"), "m2", GOOD, keygen(g, "enclave-2").public)
    with pytest.raises(ContractError) as exc:
        chain.apply(make_tx(None, "registry", "register_enclave", rogue.to_json(g)))
    assert exc.value.kind == "BadQuote"
    unknown = issue_quote(g, MAKERS["m1"], "m9", GOOD, keygen(g, "enclave-3").public)
    with pytest.raises(ContractError) as exc:
        chain.apply(make_tx(None, "registry", "register_enclave", unknown.to_json(g)))
    assert exc.value.kind == "UnknownManufacturer"
    assert chain.epoch == 1 and chain.verify_registry()


def bidder(meter, watts, role="PROSUMER"):
    return {"meter_pub": meter.public_bytes.hex(), "region": "lv-1", "role": role, "pv_capacity_watts": watts}


def test_register_bidder(chain):
    meter = keygen(g, "meter-1")
    chain.apply(make_tx(DSO, "registry", "register_bidder", bidder(meter, 5000)))
    assert chain.bidders[meter.public_bytes.hex()].pv_capacity_watts == 5000
    with pytest.raises(ContractError) as exc:
        chain.apply(make_tx(UTILITY, "registry", "register_bidder", bidder(keygen(g, "meter-2"), 100)))
    assert exc.value.kind == "Unauthorized"
    with pytest.raises(ContractError) as exc:
        chain.apply(make_tx(DSO, "registry", "register_bidder", bidder(meter, 6000)))
    assert exc.value.kind == "DuplicateMeter"


@pytest.mark.parametrize("watts", [0, 1, 3, 4000, 5000, 5003])
def test_capacity_bound(watts):
    chain = Chain(make_genesis(capacity_checks=True))
    meter, sue = keygen(g, "meter-1"), keygen(g, "sue")
    chain.apply(make_tx(DSO, "registry", "register_bidder", bidder(meter, watts)))
    cred = meter.public_bytes.hex()
    bound = watts * 15 // 60  # Wh deliverable in a quarter hour at full output
    rng = random.Random(watts)
    sold = 0
    for oid in range(1, 12):
        e = rng.randint(1, max(1, bound // 3 + 1))
        tx = order_tx(sue, oid, Side.SELL, 5000, e, [], return_address(sue, oid), credential=cred)
        if sold + e <= bound:
            chain.apply(tx)
            sold += e
        else:
            with pytest.raises(ContractError) as exc:
                chain.apply(tx)
            assert exc.value.kind == "CapacityExceeded"
    assert chain.sell_energy.get(f"0:{cred}", 0) == sold <= bound


def scripted_session(chain, seed):
    rng = random.Random(seed)
    people = [keygen(g, f"p{i}") for i in range(6)]
    oid = 0
    for slot in range(3):
        for p in people:
            oid += 1
            ret = return_address(p, f"{seed}:{oid}")
            if rng.random() < 0.5:
                price, energy = rng.randint(5000, 30000), rng.randint(1, 2000)
                nid = mint(chain, p.public, max(1, max_payment(price, energy) + rng.randint(0, 50)), nonce=oid)
                chain.apply(order_tx(p, oid, Side.BUY, price, energy, [nid], ret, slot=slot))
            else:
                chain.apply(order_tx(p, oid, Side.SELL, rng.randint(5000, 30000), rng.randint(1, 2000), [], ret,
                                     slot=slot))
        chain.apply(make_tx(UTILITY, "auction", "close", {}, nonce=slot))
        supply = chain.iou_supply
        total = chain.total_value()
        chain.apply(make_tx(None, "auction", "settle", {"slot": slot}))
        assert chain.total_value() == total and chain.iou_supply == supply


@pytest.mark.parametrize("seed", range(5))
def test_conservation_and_replay(seed, tmp_path):
    gen = make_genesis()
    chain = Chain(gen)
    scripted_session(chain, seed)
    assert chain.total_value() == gen.utility_treasury + chain.iou_supply
    path = tmp_path / "log.jsonl"
    chain.write_log(path)
    gen.save(tmp_path / "genesis.json")
    entries = read_log(path)
    rep = replay(Genesis.load(tmp_path / "genesis.json"), entries)
    assert rep.ok and rep.state_hash == chain.state_hash()
    # tamper with one settle checkpoint and make sure replay names it
    idx = next(i for i, e in enumerate(entries) if e["tx"]["method"] == "settle")
    entries[idx]["checkpoint"] = "00" * 32
    rep = replay(gen, entries)
    assert not rep.ok and rep.bad_index == idx


def test_log_length_prefix_detects_truncation(chain, tmp_path):
    mint(chain, keygen(g, "a").public, 10)
    path = tmp_path / "log.jsonl"
    chain.write_log(path)
    text = path.read_text()
    path.write_text(text[:-5] + "\n")
    with pytest.raises(ValueError, match="line 1"):
        read_log(path)


def test_one_time_address_json_roundtrip():
    addr = return_address(keygen(g, "x"), 3)
    assert OneTimeAddress.from_json(g, addr.to_json(g)) == addr
