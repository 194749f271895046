"""Emulated auction enclave for the off-chain variant.

An :class:`Enclave` keeps its signing key, DKG share and prepaid-balance ledger
behind private attributes. Everything it hands out (quotes, partial
decryptions, report signatures, sealed checkpoints) goes through explicit
methods, and :func:`scan_public` checks serialized outputs for sealed fields.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from . import canonical
from .attestation import AttestationQuote, issue_quote, measure
from .chain import make_tx
from .crypto.dkg import InvalidDealing, SecretShare, VssDealing, commitment_eval, deal, open_share
from .crypto.drbg import Seed, child_seed
from .crypto.groups import Group
from .crypto.keys import KeyPair, keygen, schnorr_sign, schnorr_verify
from .crypto.threshold import (
    AuthenticationFailure, NotEnoughShares, PartialDecryption, ThresholdCiphertext, combine, partial_decrypt,
    threshold_encrypt, verify_partial,
)
from .market import Order, OrderBook, Side, Tariffs, clear, max_payment

ROTATION_SLOTS = 96


class EnclaveError(Exception):
    pass


class UnknownBidder(EnclaveError):
    pass


class InsufficientPrepaid(EnclaveError):
    pass


class BadWalletSignature(EnclaveError):
    pass


class DuplicateOrder(EnclaveError):
    pass


class DiversityViolation(EnclaveError):
    pass


class SlotClosed(EnclaveError):
    pass


# -- public data types --------------------------------------------------------

@dataclass(frozen=True)
class EnclaveIdentity:
    public: object
    measurement: str
    manufacturer_id: str


@dataclass(frozen=True)
class EncryptedOrder:
    slot_index: int
    key_epoch: int
    ciphertext: bytes

    @property
    def digest(self) -> str:
        return hashlib.sha256(b"%d:%d:" % (self.slot_index, self.key_epoch) + self.ciphertext).hexdigest()

    def to_json(self) -> dict:
        return {"slot": self.slot_index, "key_epoch": self.key_epoch, "ciphertext": self.ciphertext.hex()}

    @classmethod
    def from_json(cls, obj: dict) -> "EncryptedOrder":
        return cls(int(obj["slot"]), int(obj["key_epoch"]), bytes.fromhex(obj["ciphertext"]))


def _order_aad(slot: int, key_epoch: int) -> bytes:
    return b"order:%d:%d" % (slot, key_epoch)


def encrypt_order(group: Group, K_c, key_epoch: int, order: Order, wallet: KeyPair, rng_seed: Seed) -> EncryptedOrder:
    """Bidder side: sign the order with the wallet key and encrypt it to the enclave group key."""
    body = {"order": order.to_json(), "credential": wallet.public_bytes.hex()}
    inner = canonical.encode(body)
    payload = canonical.encode(dict(body, signature=schnorr_sign(group, wallet.secret, inner).hex()))
    ct = threshold_encrypt(group, K_c, payload, rng_seed, _order_aad(order.slot_index, key_epoch))
    return EncryptedOrder(order.slot_index, key_epoch, ct.to_bytes(group))


@dataclass
class SettlementReport:
    slot_index: int
    epoch: int
    trades: list | None  # (price, energy) pairs, or None when only aggregates are published
    aggregates: dict
    signatures: dict = field(default_factory=dict)  # enclave pub hex -> signature hex

    def body(self) -> dict:
        out = {"slot": self.slot_index, "epoch": self.epoch, "aggregates": self.aggregates}
        if self.trades is not None:
            out["trades"] = [list(t) for t in self.trades]
        return out

    def message(self) -> bytes:
        return canonical.encode(self.body())

    def to_json(self) -> dict:
        return dict(self.body(), signatures=dict(sorted(self.signatures.items())))

    @classmethod
    def from_json(cls, obj: dict) -> "SettlementReport":
        trades = [tuple(t) for t in obj["trades"]] if "trades" in obj else None
        return cls(int(obj["slot"]), int(obj["epoch"]), trades, dict(obj["aggregates"]), dict(obj["signatures"]))

    def valid_signers(self, group: Group, keys) -> list:
        msg = self.message()
        good = []
        for pub_hex, sig_hex in sorted(self.signatures.items()):
            if pub_hex not in keys:
                continue
            try:
                pub = group.decode(bytes.fromhex(pub_hex))
                ok = schnorr_verify(group, pub, msg, bytes.fromhex(sig_hex))
            except ValueError:
                ok = False
            if ok:
                good.append(pub_hex)
        return good


# -- the enclave --------------------------------------------------------------

class Enclave:
    """One replica. Construct through :func:`boot`."""

    def __init__(self, group: Group, key: KeyPair, measurement: str, manufacturer_id: str, seed: bytes,
                 tariffs: Tariffs | None = None, utility_credential: str = "utility", report_trades: bool = True):
        self.group = group
        self._key = key
        self._seed = seed
        self.identity = EnclaveIdentity(key.public, measurement, manufacturer_id)
        self.tariffs = tariffs or Tariffs()
        self.utility_credential = utility_credential
        self.report_trades = report_trades
        # sealed state
        self._balances: dict = {}
        self._reserved: dict = {}  # order_id hex -> (credential, amount)
        self._processed: set = set()
        self._order_ids: set = set()
        self._topups: set = set()
        self._receivables: list = []
        self._books: dict = {}
        self._owners: dict = {}  # order_id -> credential
        self._bidders: set = set()
        self._closed_through = -1
        self.key_epoch = 0
        self._share: SecretShare | None = None
        self._verification_keys: dict = {}
        self.group_key = None
        self.dkg_index = 0
        self._dkg_transport: KeyPair | None = None
        self._dkg_opened: dict = {}

    @property
    def pub_hex(self) -> str:
        return self._key.public_bytes.hex()

    # -- registry mirror -------------------------------------------------
    def observe_bidder(self, credential: str) -> None:
        self._bidders.add(credential)

    def topup(self, tx_id: str, credential: str, amount: int) -> bool:
        """Credit a committed custody mint; repeated delivery of the same tx is ignored."""
        if tx_id in self._topups:
            return False
        if amount <= 0:
            raise ValueError("top-up amount must be positive")
        self._topups.add(tx_id)
        self._balances[credential] = self._balances.get(credential, 0) + amount
        return True

    def balance(self, credential: str) -> int:
        return self._balances.get(credential, 0)

    def available(self, credential: str) -> int:
        held = sum(a for c, a in self._reserved.values() if c == credential)
        return self.balance(credential) - held

    # -- distributed key generation ---------------------------------------
    def dkg_transport_key(self, key_epoch: int, index: int):
        """Fresh per-epoch transport key for receiving encrypted shares."""
        self.dkg_index = index
        self._dkg_transport = keygen(self.group, child_seed(self._seed, "transport", key_epoch))
        self._dkg_opened = {}
        return self._dkg_transport.public

    def dkg_deal(self, key_epoch: int, recipients: dict, threshold: int) -> VssDealing:
        return deal(self.group, self.dkg_index, recipients, threshold, child_seed(self._seed, "deal", key_epoch))

    def dkg_check(self, dealings) -> list:
        """Open the shares addressed to this enclave; returns complained-about dealer indices."""
        complaints = []
        for d in dealings:
            try:
                self._dkg_opened[d.dealer] = open_share(self.group, d, self.dkg_index, self._dkg_transport.secret)
            except InvalidDealing:
                complaints.append(d.dealer)
        return complaints

    def dkg_finish(self, key_epoch: int, dealings, qualified, threshold: int, participants) -> object:
        g = self.group
        by_dealer = {d.dealer: d for d in dealings}
        value = sum(self._dkg_opened[i] for i in qualified) % g.q
        self._share = SecretShare(self.dkg_index, value)
        self._verification_keys = {
            j: g.sum(commitment_eval(g, by_dealer[i].commitments, j) for i in qualified) for j in participants}
        self.group_key = g.sum(by_dealer[i].commitments[0] for i in qualified)
        self.key_epoch = key_epoch
        self.threshold = threshold
        self._dkg_transport = None
        self._dkg_opened = {}
        return self.group_key

    # -- order ingest ----------------------------------------------------
    def partial_for(self, enc: EncryptedOrder) -> PartialDecryption | None:
        if self._share is None or enc.key_epoch != self.key_epoch:
            return None
        try:
            ct = ThresholdCiphertext.from_bytes(self.group, enc.ciphertext)
        except ValueError:
            return None
        return partial_decrypt(self.group, self._share, ct)

    def open_order(self, enc: EncryptedOrder, partials) -> tuple:
        """Combine the first t+1 valid partials and check the wallet signature; no state change."""
        g = self.group
        if enc.key_epoch != self.key_epoch or self._share is None:
            raise AuthenticationFailure("ciphertext is for another key epoch")
        try:
            ct = ThresholdCiphertext.from_bytes(g, enc.ciphertext)
        except ValueError:
            raise AuthenticationFailure("malformed ciphertext") from None
        valid = {}
        for part in sorted(partials, key=lambda p: p.index):
            vk = self._verification_keys.get(part.index)
            if vk is not None and part.index not in valid and verify_partial(g, part, vk, ct):
                valid[part.index] = part
        chosen = list(valid.values())[: self.threshold + 1]
        if len(chosen) < self.threshold + 1:
            raise NotEnoughShares(f"{len(chosen)} valid partial decryptions, need {self.threshold + 1}")
        payload = combine(g, chosen, ct, _order_aad(enc.slot_index, enc.key_epoch))
        try:
            body = json.loads(payload)
            credential = body["credential"]
            sig = bytes.fromhex(body["signature"])
            order = Order.from_json(body["order"])
            wallet = g.decode(bytes.fromhex(credential))
        except (KeyError, TypeError, ValueError):
            raise BadWalletSignature("malformed order payload") from None
        inner = canonical.encode({"order": body["order"], "credential": credential})
        if not schnorr_verify(g, wallet, inner, sig):
            raise BadWalletSignature(credential[:16])
        if order.slot_index != enc.slot_index:
            raise BadWalletSignature("slot mismatch between envelope and order")
        return order, credential

    def ingest_order(self, enc: EncryptedOrder, partials) -> Order:
        if enc.digest in self._processed:
            raise DuplicateOrder(enc.digest)
        order, credential = self.open_order(enc, partials)
        if order.slot_index <= self._closed_through:
            raise SlotClosed(f"slot {order.slot_index} already cleared")
        if credential not in self._bidders:
            raise UnknownBidder(credential[:16])
        if order.order_id in self._order_ids:
            raise DuplicateOrder(order.order_id.hex())
        need = max_payment(order.limit_price, order.energy) if order.side is Side.BUY else 0
        if need > self.available(credential):
            raise InsufficientPrepaid(f"need {need}, available {self.available(credential)}")
        book = self._books.setdefault(order.slot_index, OrderBook(order.slot_index))
        stored = book.submit(order)
        self._processed.add(enc.digest)
        self._order_ids.add(order.order_id)
        self._owners[order.order_id] = credential
        if need:
            self._reserved[order.order_id.hex()] = (credential, need)
        return stored

    # -- settlement --------------------------------------------------------
    def clear_and_settle(self, slot: int) -> SettlementReport:
        book = self._books.pop(slot, None) or OrderBook(slot)
        self._closed_through = max(self._closed_through, slot)
        book.close()
        result = clear(book, self.tariffs)
        cost: dict = {}
        income: dict = {}
        for t in result.trades:
            cost[t.buy_order_id] = cost.get(t.buy_order_id, 0) + t.payment
            income[t.sell_order_id] = income.get(t.sell_order_id, 0) + t.payment
        util = self.utility_credential
        bal = self._balances
        grid_energy = feedin_energy = 0
        for u in result.utility_fills:
            if u.side is Side.BUY:
                _, held = self._reserved.get(u.order_id.hex(), (None, 0))
                charge = min(u.amount, held - cost.get(u.order_id, 0))
                cost[u.order_id] = cost.get(u.order_id, 0) + charge
                bal[util] = bal.get(util, 0) + charge
                grid_energy += u.energy
                if charge < u.amount:
                    self._receivables.append([slot, "bidder", u.amount - charge])
            else:
                paid = min(u.amount, bal.get(util, 0))
                bal[util] = bal.get(util, 0) - paid
                income[u.order_id] = income.get(u.order_id, 0) + paid
                feedin_energy += u.energy
                if paid < u.amount:
                    self._receivables.append([slot, "utility", u.amount - paid])
        for oid in sorted(book.orders):
            cred = self._owners.pop(oid)
            self._reserved.pop(oid.hex(), None)
            delta = income.get(oid, 0) - cost.get(oid, 0)
            if delta:
                bal[cred] = bal.get(cred, 0) + delta
            if bal.get(cred, 0) < 0:
                raise AssertionError("prepaid balance went negative")
        aggregates = {
            "volume": result.volume, "vwap": result.vwap, "trade_count": len(result.trades),
            "buy_orders": len(book.buys), "sell_orders": len(book.sells),
            "grid_energy": grid_energy, "feedin_energy": feedin_energy,
            "dust_thousandths": result.dust_thousandths,
        }
        trades = [(t.trade_price, t.energy) for t in result.trades] if self.report_trades else None
        report = SettlementReport(slot, self.key_epoch, trades, aggregates)
        self.last_result = result
        return report

    def sign_report(self, report: SettlementReport) -> str:
        return schnorr_sign(self.group, self._key.secret, report.message()).hex()

    def group_key_tx(self, nonce: int = 0):
        """Chain transaction announcing the current group key, signed with K_e."""
        payload = {"epoch": self.key_epoch, "group_key": self.group.encode(self.group_key).hex()}
        return make_tx(self._key, "registry", "post_group_key", payload, nonce)

    # -- sealed state ------------------------------------------------------
    def sealed_json(self) -> dict:
        """Replicated part of the sealed state (the DKG share is per replica and excluded)."""
        return {
            "balances": dict(sorted(self._balances.items())),
            "reserved": {k: list(v) for k, v in sorted(self._reserved.items())},
            "processed": sorted(self._processed),
            "topups": sorted(self._topups),
            "receivables": self._receivables,
            "open_books": {str(s): [o.to_json() for o in sorted(b.orders.values(), key=lambda o: o.arrival_seq)]
                           for s, b in sorted(self._books.items())},
            "closed_through": self._closed_through,
            "key_epoch": self.key_epoch,
            "group_key": None if self.group_key is None else self.group.encode(self.group_key).hex(),
        }

    def state_hash(self) -> str:
        return canonical.digest(self.sealed_json())

    def total_prepaid(self) -> int:
        return sum(self._balances.values())

    def _seal_key(self) -> bytes:
        return hashlib.sha256(b"qstrom/seal" + self.group.encode_scalar(self._key.secret)).digest()

    def seal(self) -> bytes:
        state = dict(self.sealed_json(), share=None if self._share is None else [self._share.index, self._share.value],
                     bidders=sorted(self._bidders), order_ids=sorted(o.hex() for o in self._order_ids),
                     owners={k.hex(): v for k, v in sorted(self._owners.items())},
                     vks={str(j): self.group.encode(v).hex() for j, v in sorted(self._verification_keys.items())},
                     threshold=getattr(self, "threshold", 0), dkg_index=self.dkg_index)
        data = canonical.encode(state)
        nonce = hashlib.sha256(data).digest()[:12]
        return nonce + ChaCha20Poly1305(self._seal_key()).encrypt(nonce, data, b"qstrom/sealed")

    def unseal(self, blob: bytes) -> None:
        g = self.group
        state = json.loads(ChaCha20Poly1305(self._seal_key()).decrypt(blob[:12], blob[12:], b"qstrom/sealed"))
        self._balances = dict(state["balances"])
        self._reserved = {k: tuple(v) for k, v in state["reserved"].items()}
        self._processed = set(state["processed"])
        self._topups = set(state["topups"])
        self._receivables = state["receivables"]
        self._books = {}
        for s, orders in state["open_books"].items():
            book = OrderBook(int(s))
            for o in orders:
                book.submit(Order.from_json(o))
            self._books[int(s)] = book
        self._closed_through = state["closed_through"]
        self.key_epoch = state["key_epoch"]
        self.group_key = None if state["group_key"] is None else g.decode(bytes.fromhex(state["group_key"]))
        self._share = None if state["share"] is None else SecretShare(*state["share"])
        self._bidders = set(state["bidders"])
        self._order_ids = {bytes.fromhex(o) for o in state["order_ids"]}
        self._owners = {bytes.fromhex(k): v for k, v in state["owners"].items()}
        self._verification_keys = {int(j): g.decode(bytes.fromhex(v)) for j, v in state["vks"].items()}
        self.threshold = state["threshold"]
        self.dkg_index = state["dkg_index"]


def boot(group: Group, program_descriptor: bytes, manufacturer: KeyPair, manufacturer_id: str, rng_seed: Seed,
         **options) -> tuple:
    """Start an enclave and obtain its attestation quote."""
    seed = child_seed(rng_seed, "enclave")
    key = keygen(group, child_seed(seed, "K_e"))
    measurement = measure(program_descriptor)
    enclave = Enclave(group, key, measurement, manufacturer_id, seed, **options)
    return enclave, issue_quote(group, manufacturer, manufacturer_id, measurement, key.public)


def run_dkg(enclaves, threshold: int, key_epoch: int, tamper=None) -> dict:
    """Joint-Feldman DKG among ``enclaves`` (indexed 1..n in list order).

    ``tamper`` may rewrite a dealing before broadcast to model a cheating
    dealer. Dealers that any enclave complains about are excluded.
    """
    n = len(enclaves)
    if not 0 <= threshold < n:
        raise ValueError("need 0 <= t < n")
    transport = {i: e.dkg_transport_key(key_epoch, i) for i, e in enumerate(enclaves, 1)}
    dealings = []
    for i, e in enumerate(enclaves, 1):
        d = e.dkg_deal(key_epoch, transport, threshold)
        dealings.append(tamper(d) if tamper else d)
    excluded = set()
    for d in dealings:
        if len(d.commitments) != threshold + 1:
            excluded.add(d.dealer)
    for e in enclaves:
        excluded.update(e.dkg_check(dealings))
    qualified = sorted(d.dealer for d in dealings if d.dealer not in excluded)
    if not qualified:
        raise InvalidDealing(-1, "no qualified dealers")
    keys = {e.dkg_finish(key_epoch, dealings, qualified, threshold, range(1, n + 1)) for e in enclaves}
    if len(keys) != 1:
        raise AssertionError("enclaves disagree on the group key")
    return {"group_key": keys.pop(), "qualified": qualified, "excluded": sorted(excluded), "key_epoch": key_epoch}


def scan_public(blob, secrets) -> list:
    """Return the sealed values found in a serialized public output."""
    text = blob if isinstance(blob, str) else json.dumps(blob, sort_keys=True)
    return [s for s in secrets if s and s in text]


def check_diversity(enclaves, minimum: int = 2) -> None:
    makers = {e.identity.manufacturer_id for e in enclaves}
    if len(makers) < minimum:
        raise DiversityViolation(f"replica set spans {len(makers)} manufacturer(s), need {minimum}")
