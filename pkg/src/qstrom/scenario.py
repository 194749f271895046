"""Scenario harness: synthetic households driving both market variants.

A run derives every key, profile and shuffle from ``config.seed``:

profiles -> per-slot orders -> variant pipelines -> adversary -> report files.

Variant A settles on the chain with escrow drawn from the shielded pool, the
transparent baseline does the same with stable meter keys, and variant B
sends encrypted orders through replicated enclaves. Invariants are asserted
while the run progresses; a violation raises :class:`InvariantViolation`.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import canonical
from .bft import NetModel, ReplicaConfig, Simulation, conflicting_commits, view_changes_for
from .chain import BidderRecord, Chain, EscrowedOrder, Genesis, encode_log_line, log_digest, make_tx
from .crypto.drbg import Drbg, child_seed
from .crypto.groups import get_group
from .crypto.keys import KeyPair, keygen
from .crypto.threshold import AuthenticationFailure, NotEnoughShares
from .enclave import (
    EnclaveError, EncryptedOrder, boot, check_diversity, encrypt_order, run_dkg,
)
from .attestation import measure
from .ledger import OneTimeAddress, Pool, build_shield, build_unshield, derive_one_time, recover_one_time_secret
from .market import (
    DUST_SCALE, SLOTS_PER_DAY, Order, OrderBook, Side, Tariffs, check_result, clear, max_payment,
)
from .privacy import AdversaryView, attack, ciphertext_target, score

PROGRAM = b"qstrom-auction-enclave/1"
SLOT_HOURS = 0.25


class InvalidConfig(ValueError):
    pass


class ScenarioError(RuntimeError):
    pass


class InvariantViolation(ScenarioError):
    pass


# -- configuration ------------------------------------------------------------

@dataclass
class ScenarioConfig:
    seed: int = 0
    households: int = 20
    prosumer_fraction: float = 0.4
    pv_capacity_watts: list = field(default_factory=lambda: [3000, 9000])
    base_load_wh: float = 120.0
    load_sigma: float = 0.35
    daylight_slots: list = field(default_factory=lambda: [28, 80])
    weather: list = field(default_factory=lambda: [0.4, 1.0])
    buy_limits: list = field(default_factory=lambda: [12000, 24000])
    sell_limits: list = field(default_factory=lambda: [6000, 18000])
    slots: int = 96
    start_slot: int = 0
    variant: str = "A"
    baseline: bool = True
    group_profile: str = "demo"
    denominations: list = field(default_factory=lambda: [10 ** i for i in range(8)])
    deposit: int = 10 ** 7
    ring_size: int = 5
    enclaves: int = 4
    threshold: int = 1
    faults: dict = field(default_factory=dict)
    grid_tariff: int = 25000
    feedin_tariff: int = 8000
    utility_treasury: int = 10 ** 7
    change_reuse: bool = False
    diversity: bool = True
    report_trades: bool = True
    rotation_slots: int = 96
    slot_ms: int = 4000
    latency_ms: list = field(default_factory=lambda: [5, 40])
    drop_prob: float = 0.0
    network_timing: bool = False
    attack: bool = True
    runs: int = 1

    @classmethod
    def from_json(cls, obj: dict) -> "ScenarioConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**obj)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidConfig(f"{path}: {exc}") from None
        if not isinstance(obj, dict):
            raise InvalidConfig("config must be a JSON object")
        return cls.from_json(obj)

    def to_json(self) -> dict:
        return asdict(self)

    @property
    def variants(self) -> list:
        return {"A": ["A"], "B": ["B"], "BOTH": ["A", "B"]}[self.variant]

    def validate(self) -> None:
        def band(name, lo_min=0):
            v = getattr(self, name)
            if len(v) != 2 or not lo_min <= v[0] <= v[1]:
                raise InvalidConfig(f"{name} must be [min, max] with {lo_min} <= min <= max")

        if not isinstance(self.seed, int) or self.seed < 0:
            raise InvalidConfig("seed must be a non-negative integer")
        if self.households < 1:
            raise InvalidConfig("need at least one household")
        if not 0.0 <= self.prosumer_fraction <= 1.0:
            raise InvalidConfig("prosumer_fraction must lie in [0, 1]")
        for name in ("pv_capacity_watts", "buy_limits", "sell_limits", "latency_ms"):
            band(name)
        band("weather")
        if self.weather[1] > 1.0:
            raise InvalidConfig("weather factors lie in [0, 1]")
        rise, sunset = self.daylight_slots
        if not 0 <= rise < sunset <= SLOTS_PER_DAY:
            raise InvalidConfig("daylight_slots must satisfy 0 <= sunrise < sunset <= 96")
        if self.base_load_wh < 0 or self.load_sigma < 0:
            raise InvalidConfig("load parameters must be non-negative")
        if self.slots < 0 or self.start_slot < 0:
            raise InvalidConfig("slots and start_slot must be non-negative")
        if self.variant not in ("A", "B", "BOTH"):
            raise InvalidConfig(f"variant must be A, B or BOTH, not {self.variant!r}")
        try:
            get_group(self.group_profile)
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from None
        if not self.denominations or min(self.denominations) <= 0 or 1 not in self.denominations:
            raise InvalidConfig("denominations must be positive and include 1")
        if self.deposit <= 0 or self.utility_treasury < 0:
            raise InvalidConfig("deposit must be positive and the treasury non-negative")
        if self.ring_size < 2:
            raise InvalidConfig("ring_size must be at least 2")
        if self.grid_tariff < 0 or self.feedin_tariff < 0:
            raise InvalidConfig("tariffs must be non-negative")
        if self.slot_ms < 500 or self.rotation_slots < 1 or self.runs < 1:
            raise InvalidConfig("slot_ms >= 500, rotation_slots >= 1 and runs >= 1 required")
        if not 0.0 <= self.drop_prob < 1.0:
            raise InvalidConfig("drop_prob must lie in [0, 1)")
        if "B" in self.variants:
            n, f = self.enclaves, len(self.faults)
            if n < 3 * f + 1 or n < 1:
                raise InvalidConfig(f"{n} enclaves cannot tolerate {f} faulty replicas (need n >= 3f + 1)")
            if not 0 <= self.threshold < n:
                raise InvalidConfig("threshold must satisfy 0 <= t < n")
            for rid, script in self.faults.items():
                if not str(rid).isdigit() or int(rid) >= n:
                    raise InvalidConfig(f"fault for unknown replica {rid!r}")
                if script not in ("equivocate", "mutate", "silent"):
                    raise InvalidConfig(f"unknown fault script {script!r}")


# -- household profiles -------------------------------------------------------

@dataclass(frozen=True)
class HouseholdProfile:
    index: int
    prosumer: bool
    pv_capacity_watts: int
    consumption: tuple  # Wh per slot
    production: tuple  # Wh per slot
    net: tuple  # consumption - production
    limit: tuple  # milli-cents per kWh for the slot's order (0 when net is 0)


def generate_profiles(cfg: ScenarioConfig) -> list:
    cfg.validate()
    rng = np.random.default_rng(int.from_bytes(child_seed(cfg.seed, "profiles"), "big"))
    k, n = cfg.households, cfg.slots
    prosumers = set(rng.permutation(k)[: int(round(cfg.prosumer_fraction * k))].tolist())
    caps = rng.integers(cfg.pv_capacity_watts[0], cfg.pv_capacity_watts[1] + 1, size=k)
    sigma = cfg.load_sigma
    load = cfg.base_load_wh * rng.lognormal(-sigma ** 2 / 2, sigma, size=(k, n))  # mean base_load_wh
    absolute = cfg.start_slot + np.arange(n)
    sod, day = absolute % SLOTS_PER_DAY, absolute // SLOTS_PER_DAY
    weather = rng.uniform(cfg.weather[0], cfg.weather[1], size=int(day.max()) + 1 if n else 0)
    rise, sunset = cfg.daylight_slots
    daylight = (sod >= rise) & (sod < sunset)
    sun = np.where(daylight, np.sin(np.pi * (sod + 0.5 - rise) / (sunset - rise)), 0.0)
    buy = rng.integers(cfg.buy_limits[0], cfg.buy_limits[1] + 1, size=(k, n))
    sell = rng.integers(cfg.sell_limits[0], cfg.sell_limits[1] + 1, size=(k, n))
    out = []
    for h in range(k):
        cap = int(caps[h]) if h in prosumers else 0
        prod = np.floor(cap * SLOT_HOURS * sun * (weather[day] if n else 0)).astype(np.int64)
        cons = np.floor(load[h]).astype(np.int64)
        net = cons - prod
        limit = np.where(net > 0, buy[h], np.where(net < 0, sell[h], 0))
        out.append(HouseholdProfile(h, h in prosumers, cap, tuple(cons.tolist()), tuple(prod.tolist()),
                                    tuple(net.tolist()), tuple(limit.tolist())))
    return out


# -- parties and orders ---------------------------------------------------------

@dataclass
class Parties:
    group: object
    dso: KeyPair
    utility: KeyPair
    households: list
    makers: list

    @classmethod
    def derive(cls, cfg: ScenarioConfig) -> "Parties":
        g = get_group(cfg.group_profile)
        s = cfg.seed
        return cls(g, keygen(g, child_seed(s, "dso")), keygen(g, child_seed(s, "utility")),
                   [keygen(g, child_seed(s, "household", h)) for h in range(cfg.households)],
                   [keygen(g, child_seed(s, "maker", i)) for i in range(2)])

    def meter_hex(self, h: int) -> str:
        return self.households[h].public_bytes.hex()


def slot_orders(profiles, parties: Parties, pos: int, slot: int) -> dict:
    """household -> Order for every household with non-zero net energy in the slot."""
    g = parties.group
    out = {}
    for p in profiles:
        net = p.net[pos]
        if net == 0:
            continue
        secret = g.encode_scalar(parties.households[p.index].secret)
        oid = hashlib.sha256(b"qstrom/order" + secret + slot.to_bytes(8, "big")).digest()
        out[p.index] = Order(oid, Side.BUY if net > 0 else Side.SELL, int(p.limit[pos]), abs(int(net)), slot)
    return out


@dataclass
class SlotRecord:
    slot: int
    trades: int
    volume: int
    vwap: int
    dust_thousandths: int = 0


# -- variant A and the transparent baseline -------------------------------------

class LedgerMarket:
    """On-chain market; ``shielded`` selects variant A, else the transparent baseline."""

    def __init__(self, cfg: ScenarioConfig, parties: Parties, shielded: bool):
        self.cfg, self.parties, self.shielded = cfg, parties, shielded
        self.name = "A" if shielded else "TRANSPARENT_BASELINE"
        g = self.g = parties.group
        self.genesis = Genesis(
            group_profile=cfg.group_profile, dso_pub=parties.dso.public_bytes.hex(),
            utility_pub=parties.utility.public_bytes.hex(), manufacturers={}, measurement_allowlist=[],
            denominations=list(cfg.denominations), ring_size=cfg.ring_size, grid_tariff=cfg.grid_tariff,
            feedin_tariff=cfg.feedin_tariff, utility_treasury=cfg.utility_treasury, first_slot=cfg.start_slot)
        self.chain = Chain(self.genesis)
        self.rng = Drbg(child_seed(cfg.seed, "market", self.name))
        self.nonce = 0
        self.labels = 0
        k = cfg.households
        self.addr = {parties.meter_hex(h): (h, parties.households[h].secret, "identity") for h in range(k)}
        self.shielded_notes = [dict() for _ in range(k)]  # note id -> owner secret
        self.loose = [dict() for _ in range(k)]  # transparent notes awaiting use or reshielding
        self.truth: dict = {}
        self.records: list = []
        self.skipped = 0
        self.submitted = 0
        self.accepted: dict = {}  # slot -> [Order] in arrival order

    # -- plumbing ------------------------------------------------------------
    def _tx(self, key, contract, method, payload) -> dict:
        self.nonce += 1
        return self.chain.apply(make_tx(key, contract, method, payload, self.nonce))

    def _seed(self, *labels):
        return child_seed(self.cfg.seed, self.name, *labels)

    def _fresh(self, h: int, role: str):
        self.labels += 1
        owner = self.parties.households[h]
        ota, _ = derive_one_time(self.g, owner.public, self._seed("ota", self.labels))
        x = recover_one_time_secret(self.g, owner.secret, ota.R)
        self.addr[self.g.encode(ota.P_o).hex()] = (h, x, role)
        return ota, x

    def _own(self, nid: str) -> None:
        note = self.chain.ledger.notes[nid]
        entry = self.addr.get(self.g.encode(note.owner).hex())
        if entry is None or entry[2] == "escrow":
            return
        h, x, _ = entry
        (self.shielded_notes if note.pool is Pool.SHIELDED else self.loose)[h][nid] = x

    def _check_conservation(self, where: str) -> None:
        c = self.chain
        if c.total_value() != c.genesis.utility_treasury + c.iou_supply:
            raise InvariantViolation(f"{self.name} {where}: ledger value {c.total_value()} != "
                                     f"treasury + minted {c.genesis.utility_treasury + c.iou_supply}")

    # -- lifecycle -------------------------------------------------------------
    def setup(self, profiles) -> None:
        p = self.parties
        for prof in profiles:
            record = BidderRecord(p.meter_hex(prof.index), "lv-0", "PROSUMER" if prof.prosumer else "CONSUMER",
                                  prof.pv_capacity_watts)
            self._tx(p.dso, "registry", "register_bidder", record.to_json())
        for h in range(self.cfg.households):
            receipt = self._tx(p.utility, "iou", "mint", {"beneficiary": p.meter_hex(h), "amount": self.cfg.deposit})
            self._own(receipt["note_id"])
        if self.shielded:
            self._reshield_all()
        self._check_conservation("setup")

    def _reshield_all(self) -> None:
        hs = [h for h in range(self.cfg.households) if self.loose[h]]
        self.rng.shuffle(hs)
        for h in hs:
            owner = self.parties.households[h]
            for nid, x in sorted(self.loose[h].items()):
                req = build_shield(self.chain.ledger, nid, owner.public, x, self._seed("shield", nid))
                for ota in req.outputs:
                    self.addr[self.g.encode(ota.P_o).hex()] = (
                        h, recover_one_time_secret(self.g, owner.secret, ota.R), "shielded")
                for out in self._tx(None, "ledger", "shield", req.to_json(self.g))["note_ids"]:
                    self._own(out)
            self.loose[h] = {}

    def _pick(self, h: int, need: int):
        """Smallest single note covering ``need``, else largest-first; None if funds fall short."""
        ledger = self.chain.ledger
        notes = [(ledger.notes[nid].value, nid) for nid in self.shielded_notes[h]
                 if len(ledger.by_denomination[ledger.notes[nid].value]) >= 2]
        covering = sorted(v for v in notes if v[0] >= need)
        if covering:
            return [covering[0][1]]
        picked, total = [], 0
        for v, nid in sorted(notes, reverse=True):
            picked.append(nid)
            total += v
            if total >= need:
                return picked
        return None

    def run_slot(self, slot: int, orders: dict) -> SlotRecord:
        g, p, cfg = self.g, self.parties, self.cfg
        if self.shielded:
            self._reshield_all()
        plan, withdrawals = {}, []
        for h in sorted(orders):
            o = orders[h]
            need = max_payment(o.limit_price, o.energy) if o.side is Side.BUY else 0
            if self.shielded:
                picks = self._pick(h, need) if need else []
                if picks is None:
                    self.skipped += 1
                    continue
                ota, x = self._fresh(h, "escrow")
                for nid in picks:
                    withdrawals.append((h, nid, self.shielded_notes[h].pop(nid), ota))
                sender = KeyPair.from_secret(g, x)
                ret = OneTimeAddress(None, p.households[h].public) if cfg.change_reuse else self._fresh(h, "return")[0]
                plan[h] = (o, sender, [], ret)
            else:
                funds = sorted(self.loose[h].items())
                if need and sum(self.chain.ledger.notes[nid].value for nid, _ in funds) < need:
                    self.skipped += 1
                    continue
                escrow = [nid for nid, _ in funds] if need else []
                for nid in escrow:
                    del self.loose[h][nid]
                plan[h] = (o, p.households[h], escrow, OneTimeAddress(None, p.households[h].public))
        self.rng.shuffle(withdrawals)
        for h, nid, x, ota in withdrawals:
            spend = build_unshield(self.chain.ledger, nid, x, ota, self._seed("ring", nid), cfg.ring_size)
            plan[h][2].append(self._tx(None, "ledger", "unshield", spend.to_json(g))["note_id"])
        order_keys = sorted(plan)
        self.rng.shuffle(order_keys)
        for h in order_keys:
            o, sender, escrow, ret = plan[h]
            self._tx(sender, "auction", "submit", EscrowedOrder(o, tuple(escrow), ret).to_json(g))
            self.truth[o.order_id.hex()] = p.meter_hex(h)
            self.submitted += 1
        before = self.chain.total_value()
        self._tx(p.utility, "auction", "close", {})
        receipt = self._tx(p.utility, "auction", "settle", {"slot": slot})
        for nid in receipt["payouts"]:
            self._own(nid)
        book = self.chain.books[slot]
        accepted = sorted(book.orders.values(), key=lambda o: o.arrival_seq)
        self.accepted[slot] = accepted
        result = self.chain.results[slot]
        try:
            check_result(result, accepted)
        except AssertionError as exc:
            raise InvariantViolation(f"{self.name} slot {slot}: clearing check failed: {exc}") from None
        if any(t.dust >= DUST_SCALE for t in result.trades) or self.chain.total_value() != before:
            raise InvariantViolation(f"{self.name} slot {slot}: settlement is not budget balanced")
        self._check_conservation(f"slot {slot}")
        rec = SlotRecord(slot, len(result.trades), result.volume, result.vwap, result.dust_thousandths)
        self.records.append(rec)
        return rec

    # -- outputs -----------------------------------------------------------------
    def log_entries(self) -> list:
        return [e.to_json() for e in self.chain.log]

    def summary(self) -> dict:
        c = self.chain
        entries = self.log_entries()
        return {
            "slots": len(self.records), "orders_submitted": self.submitted, "orders_skipped": self.skipped,
            "trades": sum(r.trades for r in self.records), "volume": sum(r.volume for r in self.records),
            "dust_thousandths": sum(r.dust_thousandths for r in self.records),
            "iou_supply": c.iou_supply, "utility_pool": c.utility_pool, "total_value": c.total_value(),
            "transparent": c.ledger.transparent_unspent(), "shielded": c.ledger.shielded_unspent(),
            "escrow_locked": c.escrow_locked, "receivables": len(c.receivables),
            "state_hash": c.state_hash(), "log_digest": log_digest(entries), "transactions": len(entries),
        }


# -- variant B ------------------------------------------------------------------

class EnclaveMarket:
    name = "B"

    def __init__(self, cfg: ScenarioConfig, parties: Parties):
        self.cfg, self.parties = cfg, parties
        g = self.g = parties.group
        makers = {f"maker-{i}": m.public_bytes.hex() for i, m in enumerate(parties.makers)}
        self.genesis = Genesis(
            group_profile=cfg.group_profile, dso_pub=parties.dso.public_bytes.hex(),
            utility_pub=parties.utility.public_bytes.hex(), manufacturers=makers,
            measurement_allowlist=[measure(PROGRAM)], denominations=list(cfg.denominations),
            ring_size=cfg.ring_size, grid_tariff=cfg.grid_tariff, feedin_tariff=cfg.feedin_tariff,
            first_slot=cfg.start_slot)
        self.chain = Chain(self.genesis)
        self.rng = Drbg(child_seed(cfg.seed, "market", "B"))
        self.nonce = 0
        tariffs = Tariffs(cfg.grid_tariff, cfg.feedin_tariff)
        self.enclaves = []
        self.manufacturers = []
        for i in range(cfg.enclaves):
            m = i % 2 if cfg.diversity else 0
            enclave, quote = boot(g, PROGRAM, parties.makers[m], f"maker-{m}", child_seed(cfg.seed, "enclave", i),
                                  tariffs=tariffs, utility_credential=parties.utility.public_bytes.hex(),
                                  report_trades=cfg.report_trades)
            self._tx(None, "registry", "register_enclave", quote.to_json(g))
            self.enclaves.append(enclave)
            self.manufacturers.append(f"maker-{m}")
        if cfg.diversity:
            check_diversity(self.enclaves)
        self.replica_keys = [keygen(g, child_seed(cfg.seed, "replica", i)) for i in range(cfg.enclaves)]
        self.gateway = keygen(g, child_seed(cfg.seed, "gateway"))
        self.faults = {int(k): v for k, v in cfg.faults.items()}
        n = cfg.enclaves
        self.credited = [0] * n
        self.accepted = [dict() for _ in range(n)]  # replica -> slot -> [Order]
        self.rejected = [list() for _ in range(n)]
        self.slot_records = [dict() for _ in range(n)]  # replica -> slot -> (report, hash, prepaid, result)
        self._partials: dict = {}
        self.truth: dict = {}
        self.transcript: list = []
        self.reports: list = []
        self.records: list = []
        self.max_view_changes = 0
        self.submitted = 0
        self.key_epoch = 0

    def _tx(self, key, contract, method, payload) -> dict:
        self.nonce += 1
        return self.chain.apply(make_tx(key, contract, method, payload, self.nonce))

    def setup(self, profiles) -> None:
        p = self.parties
        for prof in profiles:
            record = BidderRecord(p.meter_hex(prof.index), "lv-0", "PROSUMER" if prof.prosumer else "CONSUMER",
                                  prof.pv_capacity_watts)
            self._tx(p.dso, "registry", "register_bidder", record.to_json())
        for e in self.enclaves:
            for meter in sorted(self.chain.bidders):
                e.observe_bidder(meter)
        if self.cfg.utility_treasury:
            self._tx(p.utility, "iou", "mint", {"custody": "enclave", "credential": p.utility.public_bytes.hex(),
                                                "amount": self.cfg.utility_treasury})
        for h in range(self.cfg.households):
            self._tx(p.utility, "iou", "mint", {"custody": "enclave", "credential": p.meter_hex(h),
                                                "amount": self.cfg.deposit})

    # -- replicated execution --------------------------------------------------
    def _partials_for(self, enc: EncryptedOrder) -> list:
        # partial decryptions are exchanged among enclaves; every replica sees the same set
        parts = self._partials.get(enc.digest)
        if parts is None:
            parts = [q for q in (e.partial_for(enc) for e in self.enclaves) if q is not None]
            self._partials[enc.digest] = parts
        return parts

    def _execute(self, rid: int, seq: int, reqs) -> None:
        e = self.enclaves[rid]
        for req in reqs:
            kind, data = req["kind"], req["data"]
            if kind == "topup":
                ev = self.chain.custody_events[data["event"]]
                if e.topup(f"custody:{ev['index']}", ev["credential"], ev["amount"]):
                    self.credited[rid] += ev["amount"]
            elif kind == "order":
                enc = EncryptedOrder.from_json(data)
                try:
                    order = e.ingest_order(enc, self._partials_for(enc))
                except (EnclaveError, AuthenticationFailure, NotEnoughShares) as exc:
                    self.rejected[rid].append((enc.digest, type(exc).__name__))
                else:
                    self.accepted[rid].setdefault(order.slot_index, []).append(order)
            elif kind == "close":
                slot = req["slot"]
                report = e.clear_and_settle(slot)
                if e.total_prepaid() != self.credited[rid]:
                    raise InvariantViolation(f"B replica {rid} slot {slot}: prepaid total {e.total_prepaid()} "
                                             f"!= credited top-ups {self.credited[rid]}")
                self.slot_records[rid][slot] = (report, e.state_hash(), e.total_prepaid(), e.last_result)

    def run(self, slots: list) -> None:
        """``slots`` is a list of (slot, {household: Order})."""
        R = self.cfg.rotation_slots
        for c in range(0, len(slots), R):
            self._run_chunk(c // R, slots[c:c + R])

    def _run_chunk(self, chunk: int, slots: list) -> None:
        cfg, g, p = self.cfg, self.g, self.parties
        self.key_epoch += 1
        run_dkg(self.enclaves, cfg.threshold, self.key_epoch)
        self._partials = {}
        for e in self.enclaves:
            self.nonce += 1
            self.chain.apply(e.group_key_tx(self.nonce))
        K = self.chain.group_key()
        if K is None:
            raise InvariantViolation("enclaves posted different group keys")
        workload = []
        if chunk == 0:
            workload += [(10 + 5 * i, "topup", -1, {"event": i}) for i in range(len(self.chain.custody_events))]
        for i, (slot, orders) in enumerate(slots):
            base = (i + 1) * cfg.slot_ms
            hs = sorted(orders)
            self.rng.shuffle(hs)
            gap = max(1, (cfg.slot_ms // 2) // max(1, len(hs)))
            for j, h in enumerate(hs):
                enc = encrypt_order(g, K, self.key_epoch, orders[h], p.households[h],
                                    child_seed(cfg.seed, "encrypt", slot, h))
                self._tx(None, "orders", "submit_encrypted",
                         {"slot": slot, "key_epoch": self.key_epoch, "ciphertext": enc.ciphertext.hex()})
                self.truth[ciphertext_target(enc.ciphertext.hex())] = p.meter_hex(h)
                workload.append((base + 20 + j * gap, "order", slot, enc.to_json()))
                self.submitted += 1
            workload.append((base + cfg.slot_ms - 100, "close", slot, {}))
        rcfg = ReplicaConfig(n=cfg.enclaves, manufacturers=tuple(self.manufacturers), require_diversity=cfg.diversity)
        net = NetModel(seed=child_seed(cfg.seed, "bft", chunk), latency_ms=tuple(cfg.latency_ms),
                       drop_prob=cfg.drop_prob, byzantine=dict(self.faults))
        sim = Simulation(rcfg, net, group=g, keys=self.replica_keys, client=self.gateway, on_execute=self._execute)
        for at, kind, slot, data in workload:
            sim.submit(at, kind, slot, data)
        horizon = (max((w[0] for w in workload), default=0)) + 60 * rcfg.timeout_ms
        res = sim.run(horizon)
        for entry in res.transcript:
            self.transcript.append(dict(entry, chunk=chunk))
        bad = conflicting_commits(res)
        if bad:
            raise InvariantViolation(f"B chunk {chunk}: conflicting commits {bad[:3]}")
        for rid in res.request_times:
            vc = view_changes_for(res, rid)
            if vc < 0:
                raise InvariantViolation(f"B chunk {chunk}: request {rid[:16]} never executed by every honest replica")
            self.max_view_changes = max(self.max_view_changes, vc)
        for slot, _ in slots:
            self._publish(slot, res.honest)

    def _publish(self, slot: int, honest) -> None:
        recs = {rid: self.slot_records[rid].get(slot) for rid in range(self.cfg.enclaves)}
        if any(recs[r] is None for r in honest):
            raise InvariantViolation(f"B slot {slot}: an honest replica did not settle")
        present = {r: v for r, v in recs.items() if v is not None}
        messages = {v[0].message() for v in present.values()}
        hashes = {v[1] for v in present.values()}
        if len(messages) != 1 or len(hashes) != 1:
            raise InvariantViolation(f"B slot {slot}: replicas disagree on the report or sealed state")
        report, state_hash, _, result = present[honest[0]]
        for rid in sorted(present):
            e = self.enclaves[rid]
            report.signatures[e.pub_hex] = e.sign_report(report)
        self._tx(None, "orders", "publish_report", report.to_json())
        self.reports.append(report.to_json())
        agg = report.aggregates
        self.records.append(SlotRecord(slot, agg["trade_count"], agg["volume"], agg["vwap"],
                                       agg["dust_thousandths"]))
        self.slot_hashes = getattr(self, "slot_hashes", [])
        self.slot_hashes.append({"slot": slot, "state_hash": state_hash, "replicas": len(present),
                                 "report": canonical.digest(report.body())})

    def result(self, slot: int):
        for rid in range(self.cfg.enclaves):
            rec = self.slot_records[rid].get(slot)
            if rec is not None and rid not in self.faults:
                return rec[3]
        return None

    def accepted_orders(self, slot: int) -> list:
        rid = next(r for r in range(self.cfg.enclaves) if r not in self.faults)
        return self.accepted[rid].get(slot, [])

    def log_entries(self) -> list:
        return [e.to_json() for e in self.chain.log]

    def summary(self) -> dict:
        rid = next(r for r in range(self.cfg.enclaves) if r not in self.faults)
        entries = self.log_entries()
        return {
            "slots": len(self.records), "orders_submitted": self.submitted,
            "orders_rejected": len(self.rejected[rid]),
            "trades": sum(r.trades for r in self.records), "volume": sum(r.volume for r in self.records),
            "dust_thousandths": sum(r.dust_thousandths for r in self.records),
            "iou_supply": self.chain.iou_supply, "enclave_custody": self.chain.enclave_custody,
            "total_prepaid": self.enclaves[rid].total_prepaid(), "key_epochs": self.key_epoch,
            "max_view_changes": self.max_view_changes, "slot_hashes": getattr(self, "slot_hashes", []),
            "state_hash": self.chain.state_hash(), "log_digest": log_digest(entries),
            "transactions": len(entries),
        }


# -- whole scenario -------------------------------------------------------------

CLEARING_HEADER = ["variant", "slot", "trades", "volume", "vwap"]
PRIVACY_HEADER = ["seed", "variant", "k", "ring_size", "change_reuse", "targets", "accuracy",
                  "mean_anonymity_set", "mean_entropy_bits"]


@dataclass
class ScenarioReport:
    config: ScenarioConfig
    profiles: list
    markets: dict  # variant name -> LedgerMarket | EnclaveMarket
    metrics: dict  # variant name -> AnonymityMetrics
    checks: dict

    def clearing_rows(self) -> list:
        return [[name, r.slot, r.trades, r.volume, r.vwap]
                for name, m in self.markets.items() for r in m.records]

    def privacy_rows(self) -> list:
        cfg = self.config
        return [[cfg.seed, name, m.k, cfg.ring_size, int(cfg.change_reuse), m.targets, f"{m.accuracy:.6f}",
                 f"{m.mean_anonymity_set:.6f}", f"{m.mean_entropy_bits:.6f}"] for name, m in self.metrics.items()]

    def truth(self) -> dict:
        return {name: dict(sorted(m.truth.items())) for name, m in self.markets.items()}

    def summary(self) -> dict:
        return {
            "config": self.config.to_json(),
            "variants": {name: m.summary() for name, m in self.markets.items()},
            "privacy": {name: m.to_json() for name, m in self.metrics.items()},
            "checks": self.checks,
        }

    def files(self) -> dict:
        """relative path -> text content of every output file."""
        out = {}
        out["config.json"] = json.dumps(self.config.to_json(), indent=2, sort_keys=True) + "\n"
        out["clearing.csv"] = _csv(CLEARING_HEADER, self.clearing_rows())
        out["privacy.csv"] = _csv(PRIVACY_HEADER, self.privacy_rows())
        out["summary.json"] = json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"
        out["truth.json"] = json.dumps(self.truth(), indent=2, sort_keys=True) + "\n"
        for name, m in self.markets.items():
            tag = {"A": "a", "TRANSPARENT_BASELINE": "baseline", "B": "b"}[name]
            out[f"transcripts/genesis_{tag}.json"] = json.dumps(m.genesis.to_json(), indent=2, sort_keys=True) + "\n"
            out[f"transcripts/chain_{tag}.jsonl"] = "".join(encode_log_line(e) for e in m.log_entries())
            if name == "B":
                out["transcripts/bft.jsonl"] = "".join(canonical.dumps(e) + "\n" for e in m.transcript)
                out["transcripts/reports.jsonl"] = "".join(canonical.dumps(r) + "\n" for r in m.reports)
        return out

    def write(self, out_dir) -> None:
        for rel, text in self.files().items():
            path = os.path.join(out_dir, rel)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            with open(path, "w", newline="") as fh:
                fh.write(text)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _cross_variant(a: LedgerMarket, b: EnclaveMarket, tariffs: Tariffs) -> dict:
    """Re-clear B's book in A's arrival order wherever both variants accepted the same orders."""
    compared = equal = 0
    for slot, a_orders in a.accepted.items():
        b_orders = {o.order_id: o for o in b.accepted_orders(slot)}
        if {o.order_id for o in a_orders} != set(b_orders):
            continue
        book = OrderBook(slot)
        for o in a_orders:
            book.submit(b_orders[o.order_id])
        book.close()
        compared += 1
        if clear(book, tariffs).canonical() == a.chain.results[slot].canonical():
            equal += 1
        else:
            raise InvariantViolation(f"slot {slot}: variants clear identical books differently")
    return {"compared": compared, "equal": equal}


def run_scenario(cfg: ScenarioConfig) -> ScenarioReport:
    cfg.validate()
    profiles = generate_profiles(cfg)
    parties = Parties.derive(cfg)
    slots = [(cfg.start_slot + i, slot_orders(profiles, parties, i, cfg.start_slot + i)) for i in range(cfg.slots)]
    markets: dict = {}
    if "A" in cfg.variants:
        kinds = [True] + ([False] if cfg.baseline else [])
        for shielded in kinds:
            m = LedgerMarket(cfg, parties, shielded)
            markets[m.name] = m
            try:
                m.setup(profiles)
                for slot, orders in slots:
                    m.run_slot(slot, orders)
            except InvariantViolation:
                raise
            except Exception as exc:
                raise ScenarioError(f"seed {cfg.seed} variant {m.name}: {type(exc).__name__}: {exc}") from exc
    if "B" in cfg.variants:
        m = EnclaveMarket(cfg, parties)
        markets["B"] = m
        try:
            m.setup(profiles)
            m.run(slots)
        except InvariantViolation:
            raise
        except Exception as exc:
            raise ScenarioError(f"seed {cfg.seed} variant B: {type(exc).__name__}: {exc}") from exc
    checks = {"budget_balance": True, "conservation": True}
    if "B" in markets:
        checks["replica_agreement"] = True
    if "A" in markets and "B" in markets:
        checks["cross_variant"] = _cross_variant(markets["A"], markets["B"], Tariffs(cfg.grid_tariff,
                                                                                     cfg.feedin_tariff))
    metrics = {}
    if cfg.attack:
        for name, m in markets.items():
            view = AdversaryView(name, m.genesis.to_json(), m.log_entries(), getattr(m, "reports", []),
                                 m.transcript if name == "B" and cfg.network_timing else [], cfg.network_timing)
            metrics[name] = score(attack(view, child_seed(cfg.seed, "attack")), m.truth)
        if "A" in metrics and "TRANSPARENT_BASELINE" in metrics:
            if metrics["TRANSPARENT_BASELINE"].accuracy < metrics["A"].accuracy:
                raise InvariantViolation(f"seed {cfg.seed}: baseline accuracy below variant A")
            checks["baseline_dominance"] = True
    return ScenarioReport(cfg, profiles, markets, metrics, checks)


def _batch_worker(args):
    cfg_json, out_dir = args
    cfg = ScenarioConfig.from_json(cfg_json)
    report = run_scenario(cfg)
    if out_dir is not None:
        report.write(out_dir)
    return report.privacy_rows(), report.summary()


def run_batch(cfg: ScenarioConfig, out_dir=None, parallel: int = 1) -> list:
    """Run ``cfg.runs`` scenarios with seeds seed, seed+1, ...; returns (privacy rows, summary) per run."""
    jobs = []
    for i in range(cfg.runs):
        obj = dict(cfg.to_json(), seed=cfg.seed + i, runs=1)
        sub = None if out_dir is None else (out_dir if cfg.runs == 1 else os.path.join(out_dir, f"run-{cfg.seed + i:05d}"))
        jobs.append((obj, sub))
    if parallel > 1 and len(jobs) > 1:
        import multiprocessing

        with multiprocessing.get_context("spawn").Pool(parallel) as pool:
            results = pool.map(_batch_worker, jobs)
    else:
        results = [_batch_worker(j) for j in jobs]
    if out_dir is not None and cfg.runs > 1:
        rows = [r for rows, _ in results for r in rows]
        with open(os.path.join(out_dir, "privacy.csv"), "w", newline="") as fh:
            fh.write(_csv(PRIVACY_HEADER, rows))
    return results
