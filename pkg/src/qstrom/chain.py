"""Single-node deterministic transaction log hosting the market contracts.

Contracts:

* ``iou``      utility-issued fiat IOUs (transparent notes or enclave custody)
* ``ledger``   shield / unshield / transfer on the UTXO ledger
* ``auction``  escrowed double auction (on-chain variant)
* ``registry`` enclave attestation registry, group-key postings, DSO bidder registry
* ``orders``   encrypted orders and settlement reports (enclave variant)

Every handler validates completely before mutating, so a rejected transaction
leaves the state (and its hash) untouched.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from . import canonical
from .attestation import AttestationQuote
from .crypto.groups import Group, get_group
from .crypto.keys import KeyPair, schnorr_sign, schnorr_verify
from .ledger import (
    Ledger, LedgerError, OneTimeAddress, Pool, ShieldedSpend, ShieldRequest, TransferRequest,
)
from .market import (
    DuplicateOrderId, Order, OrderBook, Side, SlotStillOpen, Tariffs, WrongSlot, ZeroEnergy, clear, max_payment,
)

SLOT_HOURS_NUM, SLOT_HOURS_DEN = 1, 4  # 15-minute slot = 0.25 h


GENESIS_CHAIN = "00" * 32


class ChainError(Exception):
    pass


class BadSignature(ChainError):
    pass


class ReplayedTx(ChainError):
    pass


class ContractError(ChainError):
    def __init__(self, inner: Exception):
        super().__init__(f"{type(inner).__name__}: {inner}")
        self.inner = inner

    @property
    def kind(self) -> str:
        return type(self.inner).__name__


class Unauthorized(Exception):
    pass


class InsufficientEscrow(Exception):
    pass


class UnknownEscrowNote(Exception):
    pass


class CapacityExceeded(Exception):
    pass


class UnknownManufacturer(Exception):
    pass


class BadQuote(Exception):
    pass


class MeasurementNotAllowed(Exception):
    pass


class DuplicateEnclaveKey(Exception):
    pass


class DuplicateMeter(Exception):
    pass


class UnknownMethod(Exception):
    pass


class InvalidPayload(Exception):
    pass


# -- genesis ------------------------------------------------------------------

@dataclass
class Genesis:
    group_profile: str
    dso_pub: str
    utility_pub: str
    manufacturers: dict  # id -> pub hex
    measurement_allowlist: list
    denominations: list = field(default_factory=lambda: [1, 10, 100, 1000, 10000, 100000, 1000000])
    ring_size: int = 5
    grid_tariff: int = 25000
    feedin_tariff: int = 8000
    utility_treasury: int = 0
    capacity_checks: bool = False
    first_slot: int = 0

    @property
    def group(self) -> Group:
        return get_group(self.group_profile)

    @property
    def tariffs(self) -> Tariffs:
        return Tariffs(self.grid_tariff, self.feedin_tariff)

    def to_json(self) -> dict:
        return {
            "group_profile": self.group_profile, "dso_pub": self.dso_pub, "utility_pub": self.utility_pub,
            "manufacturers": dict(sorted(self.manufacturers.items())),
            "measurement_allowlist": sorted(self.measurement_allowlist), "denominations": list(self.denominations),
            "ring_size": self.ring_size, "grid_tariff": self.grid_tariff, "feedin_tariff": self.feedin_tariff,
            "utility_treasury": self.utility_treasury, "capacity_checks": self.capacity_checks,
            "first_slot": self.first_slot,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Genesis":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown genesis keys: {sorted(unknown)}")
        return cls(**obj)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Genesis":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


# -- transactions -------------------------------------------------------------

@dataclass(frozen=True)
class ChainTx:
    contract: str
    method: str
    payload: dict
    sender: str | None = None  # hex public key; None for self-authorizing ledger ops
    nonce: int = 0
    signature: str = ""

    def body(self) -> dict:
        return {"contract": self.contract, "method": self.method, "payload": self.payload,
                "sender": self.sender, "nonce": self.nonce}

    @property
    def tx_id(self) -> str:
        return canonical.digest(self.body())

    def to_json(self) -> dict:
        return dict(self.body(), signature=self.signature)

    @classmethod
    def from_json(cls, obj: dict) -> "ChainTx":
        return cls(obj["contract"], obj["method"], obj["payload"], obj.get("sender"), obj.get("nonce", 0),
                   obj.get("signature", ""))


def make_tx(key: KeyPair | None, contract: str, method: str, payload: dict, nonce: int = 0) -> ChainTx:
    if key is None:
        return ChainTx(contract, method, payload, None, nonce)
    unsigned = ChainTx(contract, method, payload, key.public_bytes.hex(), nonce)
    sig = schnorr_sign(key.group, key.secret, bytes.fromhex(unsigned.tx_id))
    return ChainTx(contract, method, payload, unsigned.sender, nonce, sig.hex())


@dataclass(frozen=True)
class EscrowedOrder:
    order: Order
    escrow_note_ids: tuple
    return_address: OneTimeAddress
    credential: str | None = None  # optional capacity-check stub

    def to_json(self, group: Group) -> dict:
        return {"order": self.order.to_json(), "escrow": list(self.escrow_note_ids),
                "return": self.return_address.to_json(group), "credential": self.credential}

    @classmethod
    def from_json(cls, group: Group, obj: dict) -> "EscrowedOrder":
        return cls(Order.from_json(obj["order"]), tuple(obj["escrow"]),
                   OneTimeAddress.from_json(group, obj["return"]), obj.get("credential"))


@dataclass(frozen=True)
class BidderRecord:
    meter_pub: str
    region: str
    role: str  # CONSUMER | PROSUMER
    pv_capacity_watts: int = 0

    def to_json(self) -> dict:
        return {"meter_pub": self.meter_pub, "region": self.region, "role": self.role,
                "pv_capacity_watts": self.pv_capacity_watts}

    @classmethod
    def from_json(cls, obj: dict) -> "BidderRecord":
        return cls(obj["meter_pub"], obj["region"], obj["role"], int(obj.get("pv_capacity_watts", 0)))


@dataclass(frozen=True)
class LogEntry:
    tx: ChainTx
    checkpoint: str | None = None

    def to_json(self) -> dict:
        return {"tx": self.tx.to_json(), "checkpoint": self.checkpoint}


# -- chain --------------------------------------------------------------------

class Chain:
    CHECKPOINT_METHODS = {("auction", "close"), ("auction", "settle"), ("registry", "register_enclave")}

    def __init__(self, genesis: Genesis):
        self.genesis = genesis
        self.group = genesis.group
        g = self.group
        self.dso_pub = g.decode(bytes.fromhex(genesis.dso_pub))
        self.utility_pub = g.decode(bytes.fromhex(genesis.utility_pub))
        self.manufacturers = {k: g.decode(bytes.fromhex(v)) for k, v in genesis.manufacturers.items()}
        self.ledger = Ledger(g, genesis.denominations, genesis.ring_size)
        self.tariffs = genesis.tariffs
        self.seen: set = set()
        self.log: list = []
        # running commitments keep checkpoint hashing linear in the log length
        self._seen_chain = GENESIS_CHAIN
        self._orders_chain = GENESIS_CHAIN
        self._reports_chain = GENESIS_CHAIN
        self._book_digests: dict = {}
        self._result_digests: dict = {}
        # iou
        self.iou_supply = 0
        self.enclave_custody = 0
        self.custody_events: list = []
        # auction
        self.open_slot = genesis.first_slot
        self.books = {self.open_slot: OrderBook(self.open_slot)}
        self.entries: dict = {self.open_slot: {}}
        self.results: dict = {}
        self.escrow_locked = 0
        self.utility_pool = genesis.utility_treasury
        self.receivables: list = []
        self.sell_energy: dict = {}
        # registry
        self.epoch = 0
        self.enclaves: list = []
        self.group_keys: dict = {}
        self.key_epoch = 0
        self.bidders: dict = {}
        # encrypted orders / reports
        self.encrypted_orders: list = []
        self.reports: list = []

    # -- plumbing ---------------------------------------------------------
    def _point(self, hexstr):
        try:
            return self.group.decode(bytes.fromhex(hexstr))
        except (ValueError, TypeError):
            raise InvalidPayload("bad point encoding") from None

    def apply(self, tx: ChainTx) -> dict:
        tx_id = tx.tx_id
        if tx_id in self.seen:
            raise ReplayedTx(tx_id)
        if tx.sender is not None:
            try:
                pub = self.group.decode(bytes.fromhex(tx.sender))
                sig = bytes.fromhex(tx.signature)
            except (ValueError, TypeError):
                raise BadSignature(tx_id) from None
            if not schnorr_verify(self.group, pub, bytes.fromhex(tx_id), sig):
                raise BadSignature(tx_id)
        else:
            pub = None
        handler = getattr(self, f"_{tx.contract}_{tx.method}", None)
        try:
            if handler is None:
                raise UnknownMethod(f"{tx.contract}.{tx.method}")
            receipt = handler(tx.payload, pub)
        except (LedgerError, Unauthorized, InsufficientEscrow, UnknownEscrowNote, CapacityExceeded,
                UnknownManufacturer, BadQuote, MeasurementNotAllowed, DuplicateEnclaveKey, DuplicateMeter,
                SlotStillOpen, UnknownMethod, InvalidPayload, DuplicateOrderId, WrongSlot, ZeroEnergy) as exc:
            raise ContractError(exc) from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise ContractError(InvalidPayload(str(exc))) from exc
        self.seen.add(tx_id)
        self._seen_chain = _extend(self._seen_chain, tx_id)
        checkpoint = self.state_hash() if (tx.contract, tx.method) in self.CHECKPOINT_METHODS else None
        self.log.append(LogEntry(tx, checkpoint))
        return receipt or {}

    def _require(self, sender, expected, what: str):
        if sender is None or sender != expected:
            raise Unauthorized(f"{what} requires its designated key")

    # -- iou --------------------------------------------------------------
    def _iou_mint(self, p: dict, sender):
        self._require(sender, self.utility_pub, "iou.mint")
        amount = int(p["amount"])
        if amount <= 0:
            raise InvalidPayload("mint amount must be positive")
        if p.get("custody") == "enclave":
            credential = p["credential"]
            self._point(credential)
            self.iou_supply += amount
            self.enclave_custody += amount
            event = {"credential": credential, "amount": amount, "index": len(self.custody_events)}
            self.custody_events.append(event)
            return {"custody_event": event}
        owner = self._point(p["beneficiary"])
        R = self._point(p["R"]) if p.get("R") else None
        note = self.ledger.create_transparent(owner, amount, f"mint:{len(self.log)}", R)
        self.iou_supply += amount
        return {"note_id": note.note_id}

    # -- ledger -----------------------------------------------------------
    def _ledger_shield(self, p: dict, sender):
        notes = self.ledger.apply_shield(ShieldRequest.from_json(self.group, p))
        return {"note_ids": [n.note_id for n in notes]}

    def _ledger_unshield(self, p: dict, sender):
        spend = ShieldedSpend.from_json(self.group, p, self.ledger)
        return {"note_id": self.ledger.apply_unshield(spend).note_id}

    def _ledger_transfer(self, p: dict, sender):
        notes = self.ledger.apply_transfer(TransferRequest.from_json(self.group, p))
        return {"note_ids": [n.note_id for n in notes]}

    # -- auction ----------------------------------------------------------
    def _auction_submit(self, p: dict, sender):
        g = self.group
        eo = EscrowedOrder.from_json(g, p)
        order = eo.order
        book = self.books[self.open_slot]
        if order.slot_index != self.open_slot:
            raise WrongSlot(f"slot {order.slot_index} is not open")
        if order.energy <= 0:
            raise ZeroEnergy("energy must be positive")
        if order.limit_price < 0:
            raise InvalidPayload("negative limit price")
        if order.order_id in book.orders:
            raise DuplicateOrderId(order.order_id.hex())
        if len(set(eo.escrow_note_ids)) != len(eo.escrow_note_ids):
            raise UnknownEscrowNote("escrow notes repeated")
        escrow = 0
        for nid in eo.escrow_note_ids:
            note = self.ledger.notes.get(nid)
            if note is None or note.pool is not Pool.TRANSPARENT or note.spent:
                raise UnknownEscrowNote(nid)
            if note.owner != sender:
                raise Unauthorized(f"escrow note {nid} not owned by the sender")
            escrow += note.value
        if order.side is Side.BUY and escrow < max_payment(order.limit_price, order.energy):
            raise InsufficientEscrow(f"escrow {escrow} < {max_payment(order.limit_price, order.energy)}")
        cap_key = None
        if order.side is Side.SELL and self.genesis.capacity_checks:
            record = self.bidders.get(eo.credential or "")
            if record is None:
                raise Unauthorized("sell order without a registered credential")
            cap_key = f"{order.slot_index}:{eo.credential}"
            bound = record.pv_capacity_watts * SLOT_HOURS_NUM // SLOT_HOURS_DEN
            if self.sell_energy.get(cap_key, 0) + order.energy > bound:
                raise CapacityExceeded(f"{self.sell_energy.get(cap_key, 0) + order.energy} Wh > {bound} Wh")
        # all checks passed
        for nid in eo.escrow_note_ids:
            self.ledger.consume(nid)
        self.escrow_locked += escrow
        if cap_key is not None:
            self.sell_energy[cap_key] = self.sell_energy.get(cap_key, 0) + order.energy
        stored = book.submit(order)
        self.entries[self.open_slot][order.order_id] = (eo, escrow)
        return {"arrival_seq": stored.arrival_seq, "escrow": escrow}

    def _auction_close(self, p: dict, sender):
        self._require(sender, self.utility_pub, "auction.close")
        slot = self.open_slot
        self.books[slot].close()
        self._book_digests[slot] = canonical.digest(_book_json(self.books[slot]))
        self.open_slot = slot + 1
        self.books[self.open_slot] = OrderBook(self.open_slot)
        self.entries[self.open_slot] = {}
        return {"closed": slot}

    def _auction_settle(self, p: dict, sender):
        slot = int(p["slot"])
        if slot not in self.books or slot in self.results:
            raise InvalidPayload(f"slot {slot} unknown or already settled")
        book = self.books[slot]
        if book.is_open:
            raise SlotStillOpen(f"slot {slot} is still open")
        result = clear(book, self.tariffs)
        entries = self.entries[slot]
        pool = self.utility_pool
        cost = {oid: 0 for oid in entries}
        income = {oid: 0 for oid in entries}
        for t in result.trades:
            cost[t.buy_order_id] += t.payment
            income[t.sell_order_id] += t.payment
        receivables = []
        for u in result.utility_fills:
            eo, escrow = entries[u.order_id]
            if u.side is Side.BUY:
                # the buyer authorized at most limit * energy; escrow above that is change
                cap = min(escrow, max_payment(eo.order.limit_price, eo.order.energy))
                charge = min(u.amount, cap - cost[u.order_id])
                cost[u.order_id] += charge
                pool += charge
                if charge < u.amount:
                    receivables.append({"slot": slot, "order_id": u.order_id.hex(), "owed_by": "bidder",
                                        "amount": u.amount - charge})
            else:
                paid = min(u.amount, pool)
                pool -= paid
                income[u.order_id] += paid
                if paid < u.amount:
                    receivables.append({"slot": slot, "order_id": u.order_id.hex(), "owed_by": "utility",
                                        "amount": u.amount - paid})
        # payouts: change to buyers, proceeds to sellers, always to the order's return address
        released = 0
        payouts = []
        for oid in sorted(entries):
            eo, escrow = entries[oid]
            released += escrow
            payout = escrow - cost[oid] + income[oid]
            if payout > 0:
                note = self.ledger.create_transparent(eo.return_address.P_o, payout, f"settle:{slot}:{oid.hex()}",
                                                      eo.return_address.R)
                payouts.append(note.note_id)
        self.escrow_locked -= released
        self.utility_pool = pool
        self.receivables.extend(receivables)
        self.results[slot] = result
        self._result_digests[slot] = canonical.digest(result.to_json())
        del self.entries[slot]
        return {"result": result.to_json(), "payouts": payouts}

    # -- registry ---------------------------------------------------------
    def _registry_register_enclave(self, p: dict, sender):
        quote = AttestationQuote.from_json(self.group, p)
        man_pub = self.manufacturers.get(quote.manufacturer_id)
        if man_pub is None:
            raise UnknownManufacturer(quote.manufacturer_id)
        if not quote.verify(self.group, man_pub):
            raise BadQuote("quote signature does not verify under the manufacturer key")
        if quote.measurement not in self.genesis.measurement_allowlist:
            raise MeasurementNotAllowed(quote.measurement)
        key_hex = self.group.encode(quote.enclave_pub).hex()
        if any(r["enclave_pub"] == key_hex for r in self.enclaves):
            raise DuplicateEnclaveKey(key_hex)
        self.epoch += 1
        record = {"enclave_pub": key_hex, "manufacturer_id": quote.manufacturer_id,
                  "measurement": quote.measurement, "epoch": self.epoch, "quote": quote.to_json(self.group)}
        self.enclaves.append(record)
        return {"epoch": self.epoch}

    def enclave_keys(self) -> list:
        return [r["enclave_pub"] for r in self.enclaves]

    def _registry_post_group_key(self, p: dict, sender):
        key_hex = self.group.encode(sender).hex() if sender is not None else None
        if key_hex not in self.enclave_keys():
            raise Unauthorized("only registered enclaves may post group keys")
        epoch = int(p["epoch"])
        if epoch < self.key_epoch:
            raise InvalidPayload(f"posting for key epoch {epoch}, latest is {self.key_epoch}")
        self._point(p["group_key"])
        self.key_epoch = epoch
        self.group_keys.setdefault(str(epoch), {})[key_hex] = p["group_key"]
        return {}

    def group_key(self, epoch: int | None = None):
        """The key every posting enclave agrees on for ``epoch`` (latest by default), else None."""
        posted = self.group_keys.get(str(self.key_epoch if epoch is None else epoch), {})
        values = set(posted.values())
        if len(values) != 1:
            return None
        return self.group.decode(bytes.fromhex(values.pop()))

    def _registry_register_bidder(self, p: dict, sender):
        self._require(sender, self.dso_pub, "registry.register_bidder")
        record = BidderRecord.from_json(p)
        self._point(record.meter_pub)
        if record.role not in ("CONSUMER", "PROSUMER"):
            raise InvalidPayload(f"bad role {record.role}")
        if record.role == "CONSUMER" and record.pv_capacity_watts:
            raise InvalidPayload("consumers have no PV capacity")
        if record.meter_pub in self.bidders:
            raise DuplicateMeter(record.meter_pub)
        self.bidders[record.meter_pub] = record
        return {}

    # -- encrypted orders and reports -------------------------------------
    def _orders_submit_encrypted(self, p: dict, sender):
        slot = int(p["slot"])
        ct = bytes.fromhex(p["ciphertext"])
        if not ct:
            raise InvalidPayload("empty ciphertext")
        entry = {"slot": slot, "ciphertext": p["ciphertext"], "seq": len(self.encrypted_orders)}
        self.encrypted_orders.append(entry)
        self._orders_chain = _extend(self._orders_chain, canonical.digest(entry))
        return {"seq": len(self.encrypted_orders) - 1}

    def _orders_publish_report(self, p: dict, sender):
        from .enclave import SettlementReport  # local import: enclave depends on chain types

        report = SettlementReport.from_json(p)
        keys = set(self.enclave_keys())
        n = len(keys)
        f = (n - 1) // 3
        valid = report.valid_signers(self.group, keys)
        if len(valid) < 2 * f + 1:
            raise Unauthorized(f"{len(valid)} valid enclave signatures, need {2 * f + 1}")
        self.reports.append(p)
        self._reports_chain = _extend(self._reports_chain, canonical.digest(p))
        return {"signers": len(valid)}

    # -- accounting and state ---------------------------------------------
    def total_value(self) -> int:
        """Every unit the chain accounts for: ledger notes, escrow, utility pool, enclave custody."""
        return self.ledger.total_unspent() + self.escrow_locked + self.utility_pool + self.enclave_custody

    def state_json(self) -> dict:
        g = self.group
        return {
            "genesis": self.genesis.to_json(),
            "ledger": self.ledger.to_json(),
            "iou": {"supply": self.iou_supply, "custody": self.enclave_custody, "events": self.custody_events},
            "auction": {
                "open_slot": self.open_slot,
                "books": {str(s): _book_json(b) for s, b in sorted(self.books.items())},
                "entries": {str(s): {oid.hex(): [eo.to_json(g), esc] for oid, (eo, esc) in sorted(e.items())}
                            for s, e in sorted(self.entries.items())},
                "results": {str(s): r.to_json() for s, r in sorted(self.results.items())},
                "escrow_locked": self.escrow_locked,
                "utility_pool": self.utility_pool,
                "receivables": self.receivables,
                "sell_energy": dict(sorted(self.sell_energy.items())),
            },
            "registry": {"epoch": self.epoch, "key_epoch": self.key_epoch, "enclaves": self.enclaves, "group_keys": self.group_keys,
                         "bidders": {k: v.to_json() for k, v in sorted(self.bidders.items())}},
            "orders": {"encrypted": self.encrypted_orders, "reports": self.reports},
            "seen": sorted(self.seen),
        }

    def state_commitment(self) -> dict:
        """What :meth:`state_hash` covers: small state inline, large state through digests."""
        g = self.group
        return {
            "genesis": canonical.digest(self.genesis.to_json()),
            "ledger": self.ledger.state_hash(),
            "iou": {"supply": self.iou_supply, "custody": self.enclave_custody,
                    "events": canonical.digest(self.custody_events)},
            "auction": {
                "open_slot": self.open_slot,
                "books": {str(s): self._book_digests.get(s) or canonical.digest(_book_json(b))
                          for s, b in sorted(self.books.items())},
                "entries": {str(s): {oid.hex(): [eo.to_json(g), esc] for oid, (eo, esc) in sorted(e.items())}
                            for s, e in sorted(self.entries.items())},
                "results": {str(s): d for s, d in sorted(self._result_digests.items())},
                "escrow_locked": self.escrow_locked,
                "utility_pool": self.utility_pool,
                "receivables": canonical.digest(self.receivables),
                "sell_energy": dict(sorted(self.sell_energy.items())),
            },
            "registry": {"epoch": self.epoch, "key_epoch": self.key_epoch, "enclaves": self.enclaves,
                         "group_keys": self.group_keys,
                         "bidders": {k: v.to_json() for k, v in sorted(self.bidders.items())}},
            "orders": {"encrypted": [len(self.encrypted_orders), self._orders_chain],
                       "reports": [len(self.reports), self._reports_chain]},
            "seen": [len(self.seen), self._seen_chain],
        }

    def state_hash(self) -> str:
        return canonical.digest(self.state_commitment())

    def verify_registry(self) -> bool:
        for r in self.enclaves:
            q = AttestationQuote.from_json(self.group, r["quote"])
            man = self.manufacturers.get(q.manufacturer_id)
            if man is None or not q.verify(self.group, man) or q.measurement not in self.genesis.measurement_allowlist:
                return False
        return True

    # -- log persistence --------------------------------------------------
    def write_log(self, path) -> None:
        with open(path, "w") as fh:
            for entry in self.log:
                fh.write(encode_log_line(entry.to_json()))


def _extend(chain: str, item: str) -> str:
    return hashlib.sha256(f"{chain}:{item}".encode()).hexdigest()


def _book_json(book) -> list:
    orders = [o.to_json() for o in sorted(book.orders.values(), key=lambda o: o.arrival_seq)]
    return orders + ([] if book.is_open else ["closed"])


def encode_log_line(obj: dict) -> str:
    body = canonical.dumps(obj)
    return f"{len(body.encode())} {body}\n"


def read_log(path) -> list:
    """Parse a length-prefixed JSON-lines log; raises ValueError naming the bad line."""
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            size, _, body = line.partition(" ")
            if not size.isdigit() or int(size) != len(body.encode()):
                raise ValueError(f"line {lineno}: length prefix mismatch")
            entries.append(json.loads(body))
    return entries


@dataclass
class ReplayReport:
    ok: bool
    applied: int
    state_hash: str
    bad_index: int | None = None
    bad_tx: str | None = None
    reason: str = ""


def replay(genesis: Genesis, entries) -> ReplayReport:
    chain = Chain(genesis)
    for i, obj in enumerate(entries):
        try:
            tx = ChainTx.from_json(obj["tx"])
        except (KeyError, TypeError) as exc:
            return ReplayReport(False, i, chain.state_hash(), i, None, f"malformed entry: {exc}")
        try:
            chain.apply(tx)
        except ChainError as exc:
            return ReplayReport(False, i, chain.state_hash(), i, tx.tx_id, f"{type(exc).__name__}: {exc}")
        want = obj.get("checkpoint")
        if want is not None and chain.log[-1].checkpoint != want:
            return ReplayReport(False, i, chain.state_hash(), i, tx.tx_id, "state hash mismatch at checkpoint")
    return ReplayReport(True, len(entries), chain.state_hash())


def log_digest(entries) -> str:
    return hashlib.sha256(b"".join(canonical.encode(e) for e in entries)).hexdigest()
