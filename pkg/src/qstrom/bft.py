"""pBFT-style replication over a deterministic simulated network.

Replicas are plain state machines driven by :meth:`Replica.step` and
:meth:`Replica.on_timer`; :func:`run_sim` wires them to a discrete-event
scheduler whose latencies, drops, partitions and Byzantine rewrites all come
from one seeded DRBG, so a run is a pure function of its inputs.

Protocol outline (n = 3f + 1):

* PRE-PREPARE / PREPARE / COMMIT with 2f+1 quorums; the primary's
  pre-prepare counts as its prepare vote.
* CHECKPOINT after every executed batch; 2f+1 matching checkpoints make a
  stable low watermark, f+1 matching ones let a lagging replica fetch the
  batches it missed (FETCH / BATCHES) and verify them against the hash chain.
* VIEW-CHANGE carries prepared certificates above the stable checkpoint;
  NEW-VIEW carries 2f+1 of them and the re-proposals every replica recomputes.
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field, replace
from functools import lru_cache

from . import canonical
from .crypto.drbg import Drbg, Seed, child_seed
from .crypto.groups import DEMO, Group
from .crypto.keys import KeyPair, keygen, schnorr_sign, schnorr_verify

PRE_PREPARE, PREPARE, COMMIT = "PRE-PREPARE", "PREPARE", "COMMIT"
VIEW_CHANGE, NEW_VIEW = "VIEW-CHANGE", "NEW-VIEW"
CHECKPOINT, FETCH, BATCHES = "CHECKPOINT", "FETCH", "BATCHES"
GENESIS_CHAIN = "00" * 32


class NotPrimary(Exception):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ReplicaConfig:
    n: int = 4
    timeout_ms: int = 2000
    tick_ms: int = 500
    watermark: int = 128
    manufacturers: tuple = ()
    require_diversity: bool = False

    @property
    def f(self) -> int:
        return (self.n - 1) // 3

    def primary(self, view: int) -> int:
        return view % self.n

    def validate(self) -> None:
        if self.n < 3 * self.f + 1 or self.n < 1:
            raise ConfigError("need n >= 3f + 1")
        if self.require_diversity and len(set(self.manufacturers)) < 2:
            raise ConfigError("replica set must span at least two manufacturers")


@dataclass(frozen=True)
class NetModel:
    seed: Seed = 0
    latency_ms: tuple = (5, 40)
    drop_prob: float = 0.0
    duplicate_prob: float = 0.0
    partitions: tuple = ()  # (start_ms, end_ms, (group, group, ...)) with groups as tuples of ids
    byzantine: dict = field(default_factory=dict)  # replica id -> "equivocate" | "mutate" | "silent"

    def partitioned(self, a: int, b: int, now: int) -> bool:
        for start, end, groups in self.partitions:
            if start <= now < end:
                ga = next((i for i, grp in enumerate(groups) if a in grp), None)
                gb = next((i for i, grp in enumerate(groups) if b in grp), None)
                if ga != gb:
                    return True
        return False


# -- messages -----------------------------------------------------------------

@dataclass(frozen=True)
class ConsensusMsg:
    kind: str
    view: int
    seq: int
    digest: str
    sender: int
    body: dict = field(default_factory=dict, compare=False, hash=False)
    sig: bytes = b""

    def signed_part(self) -> bytes:
        return canonical.encode({"k": self.kind, "v": self.view, "n": self.seq, "d": self.digest, "s": self.sender,
                                 "b": canonical.digest(self.body)})

    def to_json(self) -> dict:
        return {"kind": self.kind, "view": self.view, "seq": self.seq, "digest": self.digest, "sender": self.sender,
                "body": self.body, "sig": self.sig.hex()}

    @classmethod
    def from_json(cls, obj: dict) -> "ConsensusMsg":
        return cls(obj["kind"], obj["view"], obj["seq"], obj["digest"], obj["sender"], obj["body"],
                   bytes.fromhex(obj["sig"]))


def sign_msg(group: Group, key: KeyPair, msg: ConsensusMsg) -> ConsensusMsg:
    return replace(msg, sig=schnorr_sign(group, key.secret, msg.signed_part()))


@lru_cache(maxsize=1 << 16)
def _verify_cached(group: Group, pub_bytes: bytes, part: bytes, sig: bytes) -> bool:
    try:
        return schnorr_verify(group, group.decode(pub_bytes), part, sig)
    except ValueError:
        return False


def request_id(req: dict) -> str:
    return canonical.digest({k: req[k] for k in ("kind", "slot", "data")})


def batch_digest(batch) -> str:
    return hashlib.sha256(canonical.encode([request_id(r) for r in batch])).hexdigest()


def make_request(group: Group, client: KeyPair, kind: str, slot: int, data) -> dict:
    req = {"kind": kind, "slot": slot, "data": data}
    return dict(req, sig=schnorr_sign(group, client.secret, bytes.fromhex(request_id(req))).hex())


NULL_DIGEST = batch_digest([])


def chain_step(chain: str, seq: int, digest: str) -> str:
    return hashlib.sha256(f"{chain}:{seq}:{digest}".encode()).hexdigest()


# -- replica ------------------------------------------------------------------

class Replica:
    def __init__(self, rid: int, cfg: ReplicaConfig, group: Group, key: KeyPair, pubs: list, client_pub):
        self.id = rid
        self.cfg = cfg
        self.n, self.f = cfg.n, cfg.f
        self.group = group
        self.key = key
        self.pubs = [group.encode(p) for p in pubs]
        self.client_pub = group.encode(client_pub)
        self.view = 0
        self.in_view_change = False
        self.h = 0
        self.stable_proof: list = []
        self.executed = 0
        self.chain = GENESIS_CHAIN
        self.history: dict = {}  # seq -> (digest, batch, chain after)
        self.pre_prepares: dict = {}  # (v, n) -> msg
        self.prepares: dict = {}  # (v, n, d) -> {sender: msg}
        self.commits: dict = {}  # (v, n, d) -> {sender}
        self.prepared: dict = {}  # n -> (v, d, pre-prepare msg, [prepare msgs])
        self.sent_commit: set = set()
        self.committed: dict = {}  # n -> (d, batch)
        self.requests: dict = {}
        self.executed_rids: set = set()
        self.pending: dict = {}  # rid -> arrival time
        self.proposed: set = set()
        self.next_seq = 0
        self.checkpoints: dict = {}  # (n, chain) -> {sender: msg}
        self.vc_msgs: dict = {}  # view -> {sender: msg}
        self.sent_new_view: set = set()
        self.fetching: tuple | None = None
        self.timer_token = 0
        self.timer_due: int | None = None
        self.vc_attempts = 0
        self.out: list = []  # (dest or None, msg)
        self.timers: list = []  # (due, token)
        self.executions: list = []  # (seq, digest, batch) in execution order
        self.view_log: list = []  # (time, "start" | "enter", view)
        self.future: list = []  # normal-case messages for a view not entered yet

    # -- helpers ----------------------------------------------------------
    def primary(self, v=None) -> int:
        return self.cfg.primary(self.view if v is None else v)

    def _send(self, kind, view, seq, digest, body=None, dest=None):
        msg = sign_msg(self.group, self.key, ConsensusMsg(kind, view, seq, digest, self.id, body or {}))
        self.out.append((dest, msg))
        return msg

    def verify(self, msg: ConsensusMsg) -> bool:
        if not isinstance(msg.sender, int) or not 0 <= msg.sender < self.n:
            return False
        return _verify_cached(self.group, self.pubs[msg.sender], msg.signed_part(), msg.sig)

    def _valid_request(self, req) -> bool:
        try:
            rid = request_id(req)
            return _verify_cached(self.group, self.client_pub, bytes.fromhex(rid), bytes.fromhex(req["sig"]))
        except (KeyError, TypeError, ValueError):
            return False

    def _in_window(self, n: int) -> bool:
        return self.h < n <= self.h + self.cfg.watermark

    def _arm_timer(self, now: int, span: int | None = None):
        self.timer_token += 1
        self.timer_due = now + (span or self.cfg.timeout_ms)
        self.timers.append((self.timer_due, self.timer_token))

    def _disarm(self):
        self.timer_token += 1
        self.timer_due = None

    # -- inputs -----------------------------------------------------------
    def on_request(self, req: dict, now: int):
        if not self._valid_request(req):
            return
        rid = request_id(req)
        if rid in self.executed_rids:
            return
        self.requests[rid] = req
        if rid not in self.pending:
            self.pending[rid] = now
        if self.timer_due is None and not self.in_view_change:
            self._arm_timer(now)

    def on_tick(self, now: int):
        if self.in_view_change or self.primary() != self.id:
            return
        todo = [rid for rid in sorted(self.pending) if rid not in self.proposed and rid in self.requests]
        orders = [self.requests[r] for r in todo if self.requests[r]["kind"] != "close"]
        closes = sorted((self.requests[r] for r in todo if self.requests[r]["kind"] == "close"),
                        key=lambda r: (r["slot"], request_id(r)))
        batches = ([orders] if orders else []) + [[c] for c in closes]
        for batch in batches:
            if self.next_seq + 1 > self.h + self.cfg.watermark:
                break
            self.propose(batch, now)

    def propose(self, batch, now: int):
        if self.primary() != self.id or self.in_view_change:
            raise NotPrimary(f"replica {self.id} is not primary of view {self.view}")
        self.next_seq = max(self.next_seq, self.executed) + 1
        d = batch_digest(batch)
        msg = self._send(PRE_PREPARE, self.view, self.next_seq, d, {"batch": batch})
        self.proposed.update(request_id(r) for r in batch)
        self._accept_pre_prepare(msg, now)

    def step(self, msg: ConsensusMsg, now: int):
        if not isinstance(msg, ConsensusMsg) or not self.verify(msg):
            return
        if msg.kind in (PRE_PREPARE, PREPARE, COMMIT) and (
                msg.view > self.view or (msg.view == self.view and self.in_view_change)):
            if len(self.future) < 4096:
                self.future.append(msg)
            return
        handler = {PRE_PREPARE: self._on_pre_prepare, PREPARE: self._on_prepare, COMMIT: self._on_commit,
                   CHECKPOINT: self._on_checkpoint, VIEW_CHANGE: self._on_view_change, NEW_VIEW: self._on_new_view,
                   FETCH: self._on_fetch, BATCHES: self._on_batches}.get(msg.kind)
        if handler is not None:
            try:
                handler(msg, now)
            except (KeyError, TypeError, ValueError, AttributeError):
                pass  # malformed Byzantine input is dropped

    def on_timer(self, token: int, now: int):
        if token != self.timer_token:
            return
        self.timer_due = None
        if self.in_view_change:
            self.vc_attempts += 1
            self._start_view_change(self.view + 1, now)
        elif self.pending:
            ahead = self._behind()
            if ahead is not None:
                # the others are making progress; catch up instead of suspecting the primary
                self._fetch(*ahead, force=True)
                self._arm_timer(now)
            else:
                self._start_view_change(self.view + 1, now)

    # -- normal case ------------------------------------------------------
    def _check_pre_prepare(self, msg) -> bool:
        batch = msg.body.get("batch")
        if not isinstance(batch, list) or batch_digest(batch) != msg.digest:
            return False
        return all(self._valid_request(r) for r in batch)

    def _on_pre_prepare(self, msg, now):
        if msg.sender != self.primary(msg.view) or msg.view != self.view or self.in_view_change:
            return
        if not self._in_window(msg.seq) or not self._check_pre_prepare(msg):
            return
        self._accept_pre_prepare(msg, now)

    def _accept_pre_prepare(self, msg, now):
        key = (msg.view, msg.seq)
        have = self.pre_prepares.get(key)
        if have is not None:
            return
        self.pre_prepares[key] = msg
        for r in msg.body["batch"]:
            rid = request_id(r)
            if rid not in self.executed_rids:
                self.requests.setdefault(rid, r)
                self.pending.setdefault(rid, now)
        if self.timer_due is None and self.pending:
            self._arm_timer(now)
        if self.id != msg.sender:
            p = self._send(PREPARE, msg.view, msg.seq, msg.digest)
            self.prepares.setdefault((msg.view, msg.seq, msg.digest), {})[self.id] = p
        self._maybe_prepared(msg.view, msg.seq, msg.digest, now)

    def _on_prepare(self, msg, now):
        if msg.view != self.view or self.in_view_change or msg.sender == self.primary(msg.view):
            return
        if not self._in_window(msg.seq):
            return
        self.prepares.setdefault((msg.view, msg.seq, msg.digest), {})[msg.sender] = msg
        self._maybe_prepared(msg.view, msg.seq, msg.digest, now)

    def _maybe_prepared(self, v, n, d, now):
        pp = self.pre_prepares.get((v, n))
        if pp is None or pp.digest != d:
            return
        votes = self.prepares.get((v, n, d), {})
        if len(votes) < 2 * self.f:
            return
        if (v, n) in self.sent_commit:
            return
        self.sent_commit.add((v, n))
        cur = self.prepared.get(n)
        if cur is None or cur[0] <= v:
            self.prepared[n] = (v, d, pp, [votes[s] for s in sorted(votes)][: 2 * self.f])
        self._send(COMMIT, v, n, d)
        self.commits.setdefault((v, n, d), set()).add(self.id)
        self._maybe_committed(v, n, d, now)

    def _on_commit(self, msg, now):
        if msg.view != self.view or self.in_view_change or not self._in_window(msg.seq):
            return
        self.commits.setdefault((msg.view, msg.seq, msg.digest), set()).add(msg.sender)
        self._maybe_committed(msg.view, msg.seq, msg.digest, now)

    def _maybe_committed(self, v, n, d, now):
        if (v, n) not in self.sent_commit or n in self.committed or n <= self.executed:
            return
        pp = self.pre_prepares.get((v, n))
        if pp is None or pp.digest != d or len(self.commits.get((v, n, d), ())) < 2 * self.f + 1:
            return
        self.committed[n] = (d, pp.body["batch"])
        self._execute_ready(now)

    def _execute_ready(self, now):
        progressed = False
        while self.executed + 1 in self.committed:
            n = self.executed + 1
            d, batch = self.committed.pop(n)
            self._execute(n, d, batch)
            progressed = True
        if progressed:
            self._after_progress(now)

    def _execute(self, n, d, batch):
        fresh = []
        for r in batch:
            rid = request_id(r)
            if rid not in self.executed_rids:
                self.executed_rids.add(rid)
                fresh.append(r)
            self.pending.pop(rid, None)
            self.proposed.discard(rid)
        self.executed = n
        self.chain = chain_step(self.chain, n, d)
        self.history[n] = (d, batch, self.chain)
        self.executions.append((n, d, fresh))
        own = self._send(CHECKPOINT, self.view, n, self.chain)
        self._note_checkpoint(own)

    def _after_progress(self, now):
        self.vc_attempts = 0
        if self.pending and not self.in_view_change:
            self._arm_timer(now)
        elif not self.pending:
            self._disarm()

    # -- checkpoints and state transfer -----------------------------------
    def _note_checkpoint(self, msg):
        votes = self.checkpoints.setdefault((msg.seq, msg.digest), {})
        votes[msg.sender] = msg
        if len(votes) >= 2 * self.f + 1 and msg.seq > self.h and self.executed >= msg.seq:
            self._make_stable(msg.seq, msg.digest, votes)
        return votes

    def _on_checkpoint(self, msg, now):
        votes = self._note_checkpoint(msg)
        if msg.seq > self.executed and len(votes) >= self.f + 1:
            prepared = self.prepared.get(msg.seq)
            if prepared is None or prepared[0] != self.view or msg.seq > self.executed + 1:
                self._fetch(msg.seq, msg.digest)

    def _behind(self):
        best = None
        for (n, chain), votes in self.checkpoints.items():
            if n > self.executed and len(votes) >= self.f + 1 and (best is None or n > best[0]):
                best = (n, chain)
        return best

    def _fetch(self, n, chain, force=False):
        if self.fetching is not None and self.fetching[0] >= n and not force:
            return
        self.fetching = (n, chain)
        for s in sorted(self.checkpoints.get((n, chain), {})):
            if s != self.id:
                self._send(FETCH, self.view, self.executed + 1, chain, {"to": n}, dest=s)

    def _make_stable(self, n, chain, votes):
        proof = [votes[s] for s in sorted(votes)][: 2 * self.f + 1]
        self.h = n
        self.stable_proof = [m.to_json() for m in proof]
        for store in (self.pre_prepares, self.prepares, self.commits):
            for k in [k for k in store if k[1] <= n]:
                del store[k]
        for k in [k for k in self.prepared if k <= n]:
            del self.prepared[k]
        for k in [k for k in self.checkpoints if k[0] < n]:
            del self.checkpoints[k]

    def _on_fetch(self, msg, now):
        lo, hi = msg.seq, min(int(msg.body["to"]), self.executed)
        items = [[k, self.history[k][0], self.history[k][1]] for k in range(lo, hi + 1) if k in self.history]
        if items:
            self._send(BATCHES, self.view, lo, self.history[hi][2], {"items": items}, dest=msg.sender)

    def _on_batches(self, msg, now):
        chain, n = self.chain, self.executed
        usable = 0
        for k, (seq, d, batch) in enumerate(msg.body["items"]):
            if seq != n + 1 or batch_digest(batch) != d or not all(self._valid_request(r) for r in batch):
                break
            chain, n = chain_step(chain, seq, d), seq
            if len(self.checkpoints.get((n, chain), ())) >= self.f + 1:
                usable = k + 1
        if not usable:
            return
        for seq, d, batch in msg.body["items"][:usable]:
            self.committed.pop(seq, None)
            self._execute(seq, d, batch)
        if self.fetching and self.fetching[0] <= self.executed:
            self.fetching = None
        for k in [k for k in self.committed if k <= self.executed]:
            del self.committed[k]
        self._execute_ready(now)
        self._after_progress(now)

    # -- view change ------------------------------------------------------
    def _start_view_change(self, v, now):
        if v <= self.view:
            return
        self.view = v
        self.in_view_change = True
        self.proposed.clear()
        self.future = [m for m in self.future if m.view >= v]
        self.view_log.append((now, "start", v))
        certs = []
        for n in sorted(self.prepared):
            if n > self.h:
                pv, d, pp, preps = self.prepared[n]
                certs.append({"pre_prepare": pp.to_json(), "prepares": [p.to_json() for p in preps]})
        body = {"h": self.h, "proof": self.stable_proof, "certs": certs}
        msg = self._send(VIEW_CHANGE, v, self.h, "", body)
        self.vc_msgs.setdefault(v, {})[self.id] = msg
        self._arm_timer(now, self.cfg.timeout_ms * (2 ** min(self.vc_attempts + 1, 6)))
        self._maybe_new_view(v, now)

    def _valid_cert(self, cert) -> tuple | None:
        pp = ConsensusMsg.from_json(cert["pre_prepare"])
        if pp.kind != PRE_PREPARE or pp.sender != self.primary(pp.view) or not self.verify(pp):
            return None
        if not self._check_pre_prepare(pp):
            return None
        senders = set()
        for pj in cert["prepares"]:
            p = ConsensusMsg.from_json(pj)
            if (p.kind, p.view, p.seq, p.digest) != (PREPARE, pp.view, pp.seq, pp.digest):
                return None
            if p.sender == pp.sender or not self.verify(p):
                return None
            senders.add(p.sender)
        if len(senders) < 2 * self.f:
            return None
        return pp.view, pp.seq, pp.digest, pp.body["batch"]

    def _valid_proof(self, h, proof) -> str | None:
        if h == 0:
            return GENESIS_CHAIN
        chains = {}
        for mj in proof:
            m = ConsensusMsg.from_json(mj)
            if m.kind != CHECKPOINT or m.seq != h or not self.verify(m):
                return None
            chains.setdefault(m.digest, set()).add(m.sender)
        for chain, senders in chains.items():
            if len(senders) >= 2 * self.f + 1:
                return chain
        return None

    def _parse_view_change(self, msg):
        h = int(msg.body["h"])
        chain = self._valid_proof(h, msg.body["proof"])
        if chain is None or msg.seq != h:
            return None
        certs = []
        for c in msg.body["certs"]:
            parsed = self._valid_cert(c)
            if parsed is None or parsed[1] <= h or parsed[0] >= msg.view:
                return None
            certs.append(parsed)
        return h, chain, certs

    def _on_view_change(self, msg, now):
        if msg.view < self.view or (msg.view == self.view and not self.in_view_change):
            return
        if self._parse_view_change(msg) is None:
            return
        self.vc_msgs.setdefault(msg.view, {})[msg.sender] = msg
        # join the smallest view that f+1 other replicas have already moved to
        ahead = {}
        for v, msgs in self.vc_msgs.items():
            if v > self.view:
                for s in msgs:
                    if s != self.id:
                        ahead[s] = min(ahead.get(s, v), v)
        if len(ahead) >= self.f + 1:
            self._start_view_change(min(ahead.values()), now)
        self._maybe_new_view(msg.view, now)

    def _compute_o(self, vcs) -> tuple:
        parsed = [self._parse_view_change(m) for m in vcs]
        min_s = max(p[0] for p in parsed)
        best = {}
        for _, _, certs in parsed:
            for v, n, d, batch in certs:
                if n > min_s and (n not in best or best[n][0] < v):
                    best[n] = (v, d, batch)
        max_s = max(best, default=min_s)
        plan = []
        for n in range(min_s + 1, max_s + 1):
            if n in best:
                plan.append((n, best[n][1], best[n][2]))
            else:
                plan.append((n, NULL_DIGEST, []))
        chain = next(p[1] for p in parsed if p[0] == min_s)
        return min_s, chain, plan

    def _maybe_new_view(self, v, now):
        if self.primary(v) != self.id or v in self.sent_new_view or v != self.view:
            return
        msgs = self.vc_msgs.get(v, {})
        if len(msgs) < 2 * self.f + 1:
            return
        chosen = [msgs[s] for s in sorted(msgs)][: 2 * self.f + 1]
        min_s, chain, plan = self._compute_o(chosen)
        pps = [sign_msg(self.group, self.key, ConsensusMsg(PRE_PREPARE, v, n, d, self.id, {"batch": b}))
               for n, d, b in plan]
        self.sent_new_view.add(v)
        nv = self._send(NEW_VIEW, v, min_s, chain, {"vcs": [m.to_json() for m in chosen],
                                                     "pre_prepares": [p.to_json() for p in pps]})
        self._enter_view(nv, min_s, chain, pps, now)

    def _on_new_view(self, msg, now):
        v = msg.view
        if msg.sender != self.primary(v) or v < self.view or (v == self.view and not self.in_view_change):
            return
        vcs = [ConsensusMsg.from_json(m) for m in msg.body["vcs"]]
        senders = set()
        for m in vcs:
            if m.kind != VIEW_CHANGE or m.view != v or not self.verify(m) or self._parse_view_change(m) is None:
                return
            senders.add(m.sender)
        if len(senders) < 2 * self.f + 1 or len(senders) != len(vcs):
            return
        min_s, chain, plan = self._compute_o(vcs)
        pps = [ConsensusMsg.from_json(p) for p in msg.body["pre_prepares"]]
        if [(p.seq, p.digest) for p in pps] != [(n, d) for n, d, _ in plan]:
            return
        if any(p.kind != PRE_PREPARE or p.view != v or p.sender != msg.sender or not self.verify(p)
               or not self._check_pre_prepare(p) for p in pps):
            return
        if msg.seq != min_s or msg.digest != chain:
            return
        self._enter_view(msg, min_s, chain, pps, now)

    def _enter_view(self, nv, min_s, chain, pps, now):
        self.view = nv.view
        self.in_view_change = False
        self.vc_attempts = 0
        self.proposed.clear()
        self.view_log.append((now, "enter", nv.view))
        for k in [k for k in self.vc_msgs if k <= nv.view]:
            del self.vc_msgs[k]
        if min_s > self.executed:
            for mj in nv.body["vcs"]:
                if int(mj["body"]["h"]) == min_s:
                    for pj in mj["body"]["proof"]:
                        p = ConsensusMsg.from_json(pj)
                        self.checkpoints.setdefault((min_s, chain), {}).setdefault(p.sender, p)
            self._fetch(min_s, chain)
        self.next_seq = max([min_s] + [p.seq for p in pps])
        for p in pps:
            if p.seq > self.h:
                self._accept_pre_prepare(p, now)
                self.proposed.update(request_id(r) for r in p.body["batch"])
        buffered, self.future = self.future, []
        for m in buffered:
            if m.view == self.view:
                self.step(m, now)
            elif m.view > self.view:
                self.future.append(m)
        if self.pending:
            self._arm_timer(now)
        else:
            self._disarm()


# -- simulator ----------------------------------------------------------------

@dataclass
class SimResult:
    transcript: list
    executions: dict  # replica -> [(seq, digest, [requests])]
    view_changes: dict  # replica -> [(time, view)]
    request_times: dict  # rid -> (submitted, {replica: executed_at})
    final_views: dict
    honest: list

    def committed_digests(self, replica: int) -> dict:
        return {n: d for n, d, _ in self.executions[replica]}

    def to_jsonl(self) -> str:
        return "".join(canonical.dumps(e) + "\n" for e in self.transcript)


def _conflicting_batch(batch):
    if len(batch) > 1:
        return batch[:-1]
    return []


class Simulation:
    def __init__(self, cfg: ReplicaConfig, net: NetModel, group: Group = DEMO, keys=None, client: KeyPair = None,
                 on_execute=None, log_messages: bool = True):
        cfg.validate()
        self.cfg, self.net, self.group = cfg, net, group
        self.rng = Drbg(net.seed, "bft/net")
        self.byz_rng = Drbg(net.seed, "bft/byzantine")
        keys = keys or [keygen(group, child_seed(net.seed, "bft/replica", i)) for i in range(cfg.n)]
        self.keys = keys
        self.client = client or keygen(group, child_seed(net.seed, "bft/client"))
        pubs = [k.public for k in keys]
        self.replicas = [Replica(i, cfg, group, keys[i], pubs, self.client.public) for i in range(cfg.n)]
        self.queue: list = []
        self.counter = 0
        self.transcript: list = []
        self.on_execute = on_execute
        self.log_messages = log_messages
        self.requests: dict = {}
        self.submitted: dict = {}
        self.unsubmitted = 0
        self.done: dict = {}
        self.now = 0

    def _push(self, at, kind, payload):
        self.counter += 1
        heapq.heappush(self.queue, (at, self.counter, kind, payload))

    def _latency(self):
        lo, hi = self.net.latency_ms
        return lo + self.rng.randbelow(hi - lo + 1)

    def _deliver(self, src, dst, msg, now):
        if src != dst:
            if self.net.partitioned(src, dst, now):
                return
            if self.net.drop_prob and self.rng.randbelow(10 ** 6) < self.net.drop_prob * 10 ** 6:
                return
        at = now + (0 if src == dst else self._latency())
        self._push(at, "msg", (dst, msg))
        if src != dst and self.net.duplicate_prob and self.rng.randbelow(10 ** 6) < self.net.duplicate_prob * 10 ** 6:
            self._push(at + self._latency(), "msg", (dst, msg))

    def _byzantine_rewrite(self, src, dest, msg):
        """Turn one honest outbound message into what a scripted faulty replica sends."""
        mode = self.net.byzantine.get(src)
        targets = [d for d in range(self.cfg.n) if d != src] if dest is None else [dest]
        if mode is None:
            return [(d, msg) for d in targets]
        if mode == "silent":
            return []
        key = self.keys[src]
        if mode == "mutate":
            out = []
            for d in targets:
                roll = self.byz_rng.randbelow(4)
                if roll == 0:
                    out.append((d, msg))
                elif roll == 1:
                    out.append((d, replace(msg, sig=bytes(b ^ 1 for b in msg.sig))))
                elif roll == 2:
                    out.append((d, sign_msg(self.group, key, replace(msg, digest=self.byz_rng.bytes(32).hex()))))
                else:
                    body = dict(msg.body)
                    if "batch" in body:
                        body["batch"] = _conflicting_batch(body["batch"])
                    out.append((d, sign_msg(self.group, key, replace(msg, body=body, seq=msg.seq + 1))))
            return out
        if mode == "equivocate":
            half = set(targets[: len(targets) // 2 + (self.byz_rng.randbelow(2) if len(targets) % 2 else 0)])
            out = []
            if msg.kind == PRE_PREPARE:
                alt_batch = _conflicting_batch(msg.body["batch"])
                alt = sign_msg(self.group, key, replace(msg, digest=batch_digest(alt_batch), body={"batch": alt_batch}))
                for d in targets:
                    out.append((d, msg if d in half else alt))
                return out
            if msg.kind in (PREPARE, COMMIT, CHECKPOINT):
                alt = sign_msg(self.group, key, replace(msg, digest=self.byz_rng.bytes(32).hex()))
                return [(d, msg if d in half else alt) for d in targets]
            return [(d, msg) for d in targets]
        raise ValueError(f"unknown Byzantine script {mode!r}")

    def _flush(self, r: Replica, now):
        out, r.out = r.out, []
        for dest, msg in out:
            for d, m in self._byzantine_rewrite(r.id, dest, msg):
                if self.log_messages:
                    self.transcript.append({"t": now, "ev": "send", "kind": m.kind, "from": r.id, "to": d,
                                            "view": m.view, "seq": m.seq, "digest": m.digest})
                self._deliver(r.id, d, m, now)
        timers, r.timers = r.timers, []
        for due, token in timers:
            self._push(due, "timer", (r.id, token))
        while len(r.executions) > self.done.setdefault(r.id, 0):
            n, d, reqs = r.executions[self.done[r.id]]
            self.done[r.id] += 1
            rids = [request_id(q) for q in reqs]
            self.transcript.append({"t": now, "ev": "execute", "replica": r.id, "seq": n, "digest": d,
                                    "requests": rids})
            for rid in rids:
                if rid in self.submitted:
                    self.submitted[rid][1].setdefault(r.id, now)
            if self.on_execute is not None:
                self.on_execute(r.id, n, reqs)

    def submit(self, at: int, kind: str, slot: int, data):
        req = make_request(self.group, self.client, kind, slot, data)
        self.unsubmitted += 1
        self._push(at, "request", req)
        return req

    def run(self, until_ms: int) -> SimResult:
        for r in self.replicas:
            self._push(self.cfg.tick_ms, "tick", r.id)
        while self.queue:
            at, _, kind, payload = heapq.heappop(self.queue)
            if at > until_ms:
                break
            self.now = at
            if kind == "request":
                self.unsubmitted -= 1
                rid = request_id(payload)
                self.submitted.setdefault(rid, (at, {}))
                self.requests[rid] = payload
                self.transcript.append({"t": at, "ev": "request", "rid": rid, "kind": payload["kind"],
                                        "slot": payload["slot"]})
                for r in self.replicas:
                    self._push(at + self._latency(), "deliver_request", (r.id, payload))
                self._push(at + self.cfg.timeout_ms, "retransmit", rid)
            elif kind == "deliver_request":
                rid, req = payload
                self.replicas[rid].on_request(req, at)
                self._flush(self.replicas[rid], at)
            elif kind == "retransmit":
                done = self.submitted[payload][1]
                if len(done) < self.cfg.f + 1:
                    for r in self.replicas:
                        self._push(at + self._latency(), "deliver_request", (r.id, self.requests[payload]))
                    self._push(at + self.cfg.timeout_ms, "retransmit", payload)
            elif kind == "msg":
                dst, msg = payload
                self.replicas[dst].step(msg, at)
                self._flush(self.replicas[dst], at)
            elif kind == "timer":
                rid, token = payload
                self.replicas[rid].on_timer(token, at)
                self._flush(self.replicas[rid], at)
            elif kind == "tick":
                r = self.replicas[payload]
                r.on_tick(at)
                self._flush(r, at)
                if not self._quiescent():
                    self._push(at + self.cfg.tick_ms, "tick", payload)
        honest = self._honest()
        return SimResult(self.transcript, {r.id: r.executions for r in self.replicas},
                         {r.id: r.view_log for r in self.replicas}, self.submitted,
                         {r.id: r.view for r in self.replicas}, honest)

    def _quiescent(self) -> bool:
        """No requests left to submit and every honest replica executed all submitted ones."""
        if self.unsubmitted:
            return False
        honest = self._honest()
        return all(all(r in done for r in honest) for _, done in self.submitted.values())

    def _honest(self):
        return [i for i in range(self.cfg.n) if i not in self.net.byzantine]


def run_sim(cfg: ReplicaConfig, net: NetModel, workload, until_ms: int | None = None, **kw) -> SimResult:
    """``workload`` is a list of (time_ms, kind, slot, data) tuples."""
    sim = Simulation(cfg, net, **kw)
    for at, kind, slot, data in workload:
        sim.submit(at, kind, slot, data)
    horizon = until_ms if until_ms is not None else max((w[0] for w in workload), default=0) + 60 * cfg.timeout_ms
    return sim.run(horizon)


# -- analysis helpers ---------------------------------------------------------

def conflicting_commits(result: SimResult) -> list:
    """(seq, replica_a, replica_b) triples where two honest replicas executed different digests."""
    seen = {}
    bad = []
    for r in result.honest:
        for n, d, _ in result.executions[r]:
            if n in seen and seen[n][1] != d:
                bad.append((n, seen[n][0], r))
            seen.setdefault(n, (r, d))
    return bad


def gap_free(result: SimResult) -> bool:
    return all([n for n, _, _ in result.executions[r]] == list(range(1, len(result.executions[r]) + 1))
               for r in result.honest)


def view_changes_for(result: SimResult, rid: str) -> int:
    """Views entered by honest replicas between a request's submission and its execution.

    Returns the maximum over honest replicas, or -1 if some honest replica never
    executed the request.
    """
    submitted, done = result.request_times[rid]
    worst = 0
    for r in result.honest:
        if r not in done:
            return -1
        entered = {v for t, what, v in result.view_changes[r] if what == "enter" and submitted <= t <= done[r]}
        worst = max(worst, len(entered))
    return worst
