"""Linking adversary over public transcripts.

The adversary sees what any chain observer sees: the genesis record, the
transaction log (which it replays to recover note ids), settlement reports
and, optionally, replication timing. It keeps a probability vector over the
registered households for every note and order and propagates it through the
funding graph:

* address reuse: a note or order tied to a registered meter key is a point mass;
* funding-graph tracing: shield and transfer outputs inherit their input;
* ring analysis: a withdrawal is the average of its ring members, and an
  order funded by several withdrawals is their normalized product;
* change chaining: a settlement payout inherits the order whose return
  address it pays.

Ground truth never enters :func:`attack`; :func:`score` compares afterwards.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .chain import Chain, ChainTx, Genesis, read_log
from .crypto.drbg import Drbg, Seed

VARIANTS = ("A", "B", "TRANSPARENT_BASELINE")
SEALED_KEYS = frozenset({"secret", "share", "balances", "reserved", "plaintext", "truth", "owners", "household"})
TRANSCRIPT_NAMES = {"A": "a", "TRANSPARENT_BASELINE": "baseline", "B": "b"}


class SealedFieldPresent(ValueError):
    pass


class MismatchedScenario(ValueError):
    pass


def _sealed_keys(obj, path="$"):
    if isinstance(obj, dict):
        for k, v in obj.items():
            if k in SEALED_KEYS:
                yield f"{path}.{k}"
            yield from _sealed_keys(v, f"{path}.{k}")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _sealed_keys(v, f"{path}[{i}]")


@dataclass(frozen=True)
class AdversaryView:
    variant: str
    genesis: dict
    log: list  # chain log entries as written by Chain.write_log
    reports: list = field(default_factory=list)
    bft: list = field(default_factory=list)
    network_timing: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        for part in (self.genesis, self.log, self.reports, self.bft):
            found = next(_sealed_keys(part), None)
            if found is not None:
                raise SealedFieldPresent(found)

    @classmethod
    def from_dir(cls, run_dir, variant: str, network_timing: bool = False) -> "AdversaryView":
        tdir = os.path.join(run_dir, "transcripts")
        name = TRANSCRIPT_NAMES[variant]
        with open(os.path.join(tdir, f"genesis_{name}.json")) as fh:
            genesis = json.load(fh)
        log = read_log(os.path.join(tdir, f"chain_{name}.jsonl"))
        reports, bft = [], []
        if variant == "B":
            reports = _read_jsonl(os.path.join(tdir, "reports.jsonl"))
            if network_timing:
                bft = _read_jsonl(os.path.join(tdir, "bft.jsonl"))
        return cls(variant, genesis, log, reports, bft, network_timing)


def _read_jsonl(path) -> list:
    if not os.path.exists(path):
        return []
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def ciphertext_target(ct_hex: str) -> str:
    """Public handle of an encrypted order."""
    return hashlib.sha256(bytes.fromhex(ct_hex)).hexdigest()


@dataclass
class LinkageHypothesis:
    households: list  # registered meter keys (hex), in registration order
    guesses: dict  # target -> household hex
    confidence: dict  # target -> probability of the guess
    distributions: dict  # target -> np.ndarray over households


@dataclass(frozen=True)
class AnonymityMetrics:
    accuracy: float
    mean_anonymity_set: float
    mean_entropy_bits: float
    k: int
    targets: int

    def to_json(self) -> dict:
        return {"accuracy": round(self.accuracy, 6), "mean_anonymity_set": round(self.mean_anonymity_set, 6),
                "mean_entropy_bits": round(self.mean_entropy_bits, 6), "k": self.k, "targets": self.targets}


# -- distribution helpers ------------------------------------------------------

def _normalize(v, k):
    total = v.sum()
    if not np.isfinite(total) or total <= 0:
        return np.full(k, 1.0 / k)
    return v / total


def _registered(log) -> list:
    return [e["tx"]["payload"]["meter_pub"] for e in log
            if e["tx"]["contract"] == "registry" and e["tx"]["method"] == "register_bidder"]


class _Tracer:
    def __init__(self, households, timing: bool):
        self.k = len(households)
        self.index = {h: i for i, h in enumerate(households)}
        self.uniform = np.full(self.k, 1.0 / self.k) if self.k else np.zeros(0)
        self.notes: dict = {}
        self.orders: dict = {}
        self.return_dist: dict = {}  # return address -> distribution of the order(s) using it
        self.timing = timing
        self.prev = None  # (method, distribution of the input) of the previous ledger tx

    def point(self, owner_hex):
        v = np.zeros(self.k)
        v[self.index[owner_hex]] = 1.0
        return v

    def owner_dist(self, owner_hex):
        if owner_hex in self.index:
            return self.point(owner_hex)
        return self.return_dist.get(owner_hex)

    def note(self, nid):
        d = self.notes.get(nid)
        return self.uniform if d is None else d

    def step(self, tx: ChainTx, receipt: dict, chain: Chain):
        g = chain.group
        kind = (tx.contract, tx.method)
        p = tx.payload
        prev, self.prev = self.prev, None
        if kind == ("iou", "mint") and "note_id" in receipt:
            self.notes[receipt["note_id"]] = self.owner_dist(p["beneficiary"])
        elif kind in (("ledger", "shield"), ("ledger", "transfer")):
            src = self.note(p["note_id"])
            for nid in receipt["note_ids"]:
                self.notes[nid] = src
            self.prev = (kind, src)
        elif kind == ("ledger", "unshield"):
            out = _normalize(np.sum([self.note(nid) for nid in p["ring"]], axis=0), self.k)
            if self.timing and prev is not None and prev[0] == ("ledger", "shield"):
                # adjacency in the log: the same actor often reshields and then withdraws
                out = _normalize(out * prev[1], self.k)
            owner = p["output"]["P_o"]
            self.notes[receipt["note_id"]] = self.point(owner) if owner in self.index else out
            self.prev = (kind, out)
        elif kind == ("auction", "submit"):
            oid = p["order"]["order_id"]
            ret = p["return"]["P_o"]
            if tx.sender in self.index:
                d = self.point(tx.sender)
            elif ret in self.index:
                d = self.point(ret)
            else:
                d = np.ones(self.k)
                for nid in p["escrow"]:
                    d = d * self.note(nid)
                if ret in self.return_dist:  # a reused change address clusters its orders
                    d = d * self.return_dist[ret]
                d = _normalize(d, self.k)
            self.orders[oid] = d
            self.return_dist[ret] = d
        elif kind == ("auction", "settle"):
            for nid in receipt.get("payouts", ()):
                owner = g.encode(chain.ledger.notes[nid].owner).hex()
                self.notes[nid] = self.owner_dist(owner)


def _targets_b(log) -> list:
    return [ciphertext_target(e["tx"]["payload"]["ciphertext"]) for e in log
            if e["tx"]["contract"] == "orders" and e["tx"]["method"] == "submit_encrypted"]


def attack(view: AdversaryView, seed: Seed = 0) -> LinkageHypothesis:
    households = _registered(view.log)
    k = len(households)
    if view.variant == "B":
        # orders are encrypted end to end; reports carry only prices and volumes
        uniform = np.full(k, 1.0 / k) if k else np.zeros(0)
        dists = {t: uniform for t in _targets_b(view.log)}
    else:
        chain = Chain(Genesis.from_json(view.genesis))
        tracer = _Tracer(households, view.network_timing)
        for entry in view.log:
            tx = ChainTx.from_json(entry["tx"])
            receipt = chain.apply(tx)
            tracer.step(tx, receipt, chain)
        dists = tracer.orders
    rng = Drbg(seed, "attack")
    guesses, confidence = {}, {}
    for target in sorted(dists):
        d = dists[target]
        if not k:
            continue
        best = np.flatnonzero(d >= d.max() - 1e-12)
        pick = int(best[rng.randbelow(len(best))])
        guesses[target] = households[pick]
        confidence[target] = float(d[pick])
    return LinkageHypothesis(households, guesses, confidence, {t: dists[t] for t in guesses})


def entropy_bits(d) -> float:
    nz = d[d > 0]
    return float(-(nz * np.log2(nz)).sum()) + 0.0


def score(hyp: LinkageHypothesis, truth: dict) -> AnonymityMetrics:
    if set(hyp.guesses) != set(truth):
        missing = len(set(truth) - set(hyp.guesses))
        extra = len(set(hyp.guesses) - set(truth))
        raise MismatchedScenario(f"{missing} targets missing from the hypothesis, {extra} unknown to the truth")
    k = len(hyp.households)
    n = len(truth)
    if not n:
        return AnonymityMetrics(0.0, 0.0, 0.0, k, 0)
    correct = sum(hyp.guesses[t] == truth[t] for t in truth)
    sizes = [int((hyp.distributions[t] > 1e-9).sum()) for t in truth]
    ent = [entropy_bits(hyp.distributions[t]) for t in truth]
    return AnonymityMetrics(correct / n, float(np.mean(sizes)), float(np.mean(ent)), k, n)
