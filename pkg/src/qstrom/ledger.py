"""UTXO token ledger with a transparent pool and a fixed-denomination shielded pool.

Public state only: shielded notes carry no spent flag (which note a ring spend
consumed is unobservable); double spends are caught through key images, and
the unspent shielded value is the shielded total minus the value withdrawn.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field

from . import canonical
from .crypto.drbg import Drbg, Seed, child_seed
from .crypto.groups import Group
from .crypto.keys import schnorr_sign, schnorr_verify
from .crypto.lsag import RingSignature, lsag_sign, lsag_verify


class LedgerError(Exception):
    pass


class AlreadySpent(LedgerError):
    pass


class UnknownNote(LedgerError):
    pass


class NonDecomposableValue(LedgerError):
    pass


class BadSignature(LedgerError):
    pass


class DuplicateKeyImage(LedgerError):
    pass


class MixedDenominations(LedgerError):
    pass


class RingTooSmall(LedgerError):
    pass


class ValueMismatch(LedgerError):
    pass


class Pool(str, enum.Enum):
    TRANSPARENT = "TRANSPARENT"
    SHIELDED = "SHIELDED"


@dataclass
class Note:
    note_id: str
    seq: int
    value: int
    owner: object
    pool: Pool
    ephemeral: object = None  # R published with a one-time address
    spent: bool = False  # tracked for transparent notes only

    def to_json(self, group: Group) -> dict:
        obj = {"id": self.note_id, "seq": self.seq, "value": self.value, "owner": group.encode(self.owner).hex(),
               "pool": self.pool.value, "R": None if self.ephemeral is None else group.encode(self.ephemeral).hex()}
        if self.pool is Pool.TRANSPARENT:
            obj["spent"] = self.spent
        return obj


# -- one-time addresses ------------------------------------------------------

@dataclass(frozen=True)
class OneTimeAddress:
    R: object
    P_o: object
    recipient: object = field(default=None, compare=False, repr=False)  # sender-side only

    def to_json(self, group: Group) -> dict:
        return {"R": None if self.R is None else group.encode(self.R).hex(), "P_o": group.encode(self.P_o).hex()}

    @classmethod
    def from_json(cls, group: Group, obj: dict) -> "OneTimeAddress":
        R = None if obj["R"] is None else group.decode(bytes.fromhex(obj["R"]))
        return cls(R, group.decode(bytes.fromhex(obj["P_o"])))


def _ota_scalar(group: Group, shared) -> int:
    return group.hash_to_scalar(b"ota", group.encode(shared))


def derive_one_time(group: Group, recipient_pub, rng_seed: Seed):
    """P_o = Hs(r*B)*G + B with ephemeral R = r*G."""
    r = Drbg(rng_seed, "ota").scalar(group.q)
    R = group.base_mul(r)
    P_o = group.add(group.base_mul(_ota_scalar(group, group.mul(recipient_pub, r))), recipient_pub)
    return OneTimeAddress(R, P_o, recipient_pub), R


def recover_one_time_secret(group: Group, recipient_secret: int, R) -> int:
    return (_ota_scalar(group, group.mul(R, recipient_secret)) + recipient_secret) % group.q


def decompose(value: int, denominations) -> list:
    """Greedy decomposition, largest denomination first; raises if a remainder is left."""
    out = []
    for d in sorted(denominations, reverse=True):
        n, value = divmod(value, d)
        out.extend([d] * n)
    if value:
        raise NonDecomposableValue(f"remainder {value} not representable")
    return out


# -- requests ---------------------------------------------------------------

def _addr_json(group, owner, R):
    return {"owner": group.encode(owner).hex(), "R": None if R is None else group.encode(R).hex()}


@dataclass(frozen=True)
class ShieldRequest:
    note_id: str
    outputs: tuple  # OneTimeAddress per denomination unit, largest first
    denominations: tuple
    signature: bytes = b""

    def message(self, group: Group) -> bytes:
        return canonical.encode({"op": "shield", "note": self.note_id, "denoms": list(self.denominations),
                                 "outputs": [a.to_json(group) for a in self.outputs]})

    def to_json(self, group: Group) -> dict:
        return {"note_id": self.note_id, "outputs": [a.to_json(group) for a in self.outputs],
                "denominations": list(self.denominations), "signature": self.signature.hex()}

    @classmethod
    def from_json(cls, group, obj):
        return cls(obj["note_id"], tuple(OneTimeAddress.from_json(group, a) for a in obj["outputs"]),
                   tuple(obj["denominations"]), bytes.fromhex(obj["signature"]))


@dataclass(frozen=True)
class ShieldedSpend:
    ring: tuple  # note ids, ledger order
    denomination: int
    output: OneTimeAddress
    signature: RingSignature = None

    def message(self, group: Group) -> bytes:
        return canonical.encode({"op": "unshield", "ring": list(self.ring), "denom": self.denomination,
                                 "output": self.output.to_json(group)})

    @property
    def key_image(self):
        return self.signature.key_image

    def to_json(self, group: Group) -> dict:
        return {"ring": list(self.ring), "denomination": self.denomination, "output": self.output.to_json(group),
                "key_image": group.encode(self.signature.key_image).hex(),
                "c0": group.encode_scalar(self.signature.c0).hex(),
                "s": [group.encode_scalar(s).hex() for s in self.signature.responses]}

    @classmethod
    def from_json(cls, group, obj, ledger: "Ledger"):
        ring_pubs = tuple(ledger.notes[nid].owner for nid in obj["ring"]) if all(
            nid in ledger.notes for nid in obj["ring"]) else ()
        sig = RingSignature(ring_pubs, group.decode(bytes.fromhex(obj["key_image"])),
                            group.decode_scalar(bytes.fromhex(obj["c0"])),
                            tuple(group.decode_scalar(bytes.fromhex(h)) for h in obj["s"]))
        return cls(tuple(obj["ring"]), obj["denomination"], OneTimeAddress.from_json(group, obj["output"]), sig)


@dataclass(frozen=True)
class TransferRequest:
    note_id: str
    outputs: tuple  # (owner point, value, R or None)
    signature: bytes = b""

    def message(self, group: Group) -> bytes:
        return canonical.encode({"op": "transfer", "note": self.note_id,
                                 "outputs": [dict(_addr_json(group, o, R), value=v) for o, v, R in self.outputs]})

    def to_json(self, group: Group) -> dict:
        return {"note_id": self.note_id, "signature": self.signature.hex(),
                "outputs": [dict(_addr_json(group, o, R), value=v) for o, v, R in self.outputs]}

    @classmethod
    def from_json(cls, group, obj):
        outs = tuple((group.decode(bytes.fromhex(o["owner"])), o["value"],
                      None if o["R"] is None else group.decode(bytes.fromhex(o["R"]))) for o in obj["outputs"])
        return cls(obj["note_id"], outs, bytes.fromhex(obj["signature"]))


# -- ledger -----------------------------------------------------------------

class Ledger:
    def __init__(self, group: Group, denominations=(1, 10, 100, 1000, 10000, 100000, 1000000), ring_size: int = 5):
        if not denominations or min(denominations) <= 0:
            raise ValueError("denominations must be positive")
        self.group = group
        self.denominations = tuple(sorted(set(denominations)))
        self.ring_size = ring_size
        self.notes: dict = {}
        self.by_denomination: dict = {d: [] for d in self.denominations}
        self.key_images: set = set()
        self.shielded_total = 0
        self.withdrawn_total = 0
        self._seq = 0
        self._digests: dict = {}  # note id -> (spent flag, digest)

    # -- internal helpers used by contracts (authorization done by caller) --
    def _new_id(self, context: str) -> str:
        return hashlib.sha256(f"{context}:{self._seq}".encode()).hexdigest()[:32]

    def create_transparent(self, owner, value: int, context: str, R=None) -> Note:
        if value <= 0:
            raise ValueMismatch("note value must be positive")
        note = Note(self._new_id(context), self._seq, value, owner, Pool.TRANSPARENT, R)
        self._seq += 1
        self.notes[note.note_id] = note
        return note

    def _create_shielded(self, addr: OneTimeAddress, denom: int, context: str) -> Note:
        note = Note(self._new_id(context), self._seq, denom, addr.P_o, Pool.SHIELDED, addr.R)
        self._seq += 1
        self.notes[note.note_id] = note
        self.by_denomination[denom].append(note.note_id)
        self.shielded_total += denom
        return note

    def spendable(self, note_id: str) -> Note:
        note = self.notes.get(note_id)
        if note is None or note.pool is not Pool.TRANSPARENT:
            raise UnknownNote(note_id)
        if note.spent:
            raise AlreadySpent(note_id)
        return note

    def consume(self, note_id: str) -> Note:
        note = self.spendable(note_id)
        note.spent = True
        return note

    # -- public operations ------------------------------------------------
    def apply_shield(self, req: ShieldRequest) -> list:
        g = self.group
        note = self.spendable(req.note_id)
        denoms = decompose(note.value, self.denominations)
        if list(req.denominations) != denoms or len(req.outputs) != len(denoms):
            raise NonDecomposableValue("outputs do not match the greedy decomposition")
        if not schnorr_verify(g, note.owner, req.message(g), req.signature):
            raise BadSignature("shield not signed by the note owner")
        note.spent = True
        return [self._create_shielded(a, d, f"shield:{req.note_id}:{i}")
                for i, (a, d) in enumerate(zip(req.outputs, denoms))]

    def min_ring(self, denomination: int) -> int:
        return max(2, min(self.ring_size, len(self.by_denomination.get(denomination, ()))))

    def apply_unshield(self, spend: ShieldedSpend) -> Note:
        g = self.group
        if spend.denomination not in self.by_denomination:
            raise MixedDenominations(f"unknown denomination {spend.denomination}")
        if len(set(spend.ring)) != len(spend.ring) or len(spend.ring) < self.min_ring(spend.denomination):
            raise RingTooSmall(f"ring of {len(set(spend.ring))} below {self.min_ring(spend.denomination)}")
        members = []
        for nid in spend.ring:
            n = self.notes.get(nid)
            if n is None or n.pool is not Pool.SHIELDED:
                raise UnknownNote(nid)
            if n.value != spend.denomination:
                raise MixedDenominations(f"ring member {nid} has value {n.value}")
            members.append(n.owner)
        sig = spend.signature
        if sig is None or not lsag_verify(g, spend.message(g), members, sig):
            raise BadSignature("ring signature does not verify")
        image = g.encode(sig.key_image)
        if image in self.key_images:
            raise DuplicateKeyImage(image.hex())
        self.key_images.add(image)
        self.withdrawn_total += spend.denomination
        return self.create_transparent(spend.output.P_o, spend.denomination, f"unshield:{image.hex()}",
                                       spend.output.R)

    def apply_transfer(self, req: TransferRequest) -> list:
        g = self.group
        note = self.spendable(req.note_id)
        if not req.outputs or any(v <= 0 for _, v, _ in req.outputs) or sum(v for _, v, _ in req.outputs) != note.value:
            raise ValueMismatch("outputs must be positive and sum to the input value")
        if not schnorr_verify(g, note.owner, req.message(g), req.signature):
            raise BadSignature("transfer not signed by the note owner")
        note.spent = True
        return [self.create_transparent(o, v, f"transfer:{req.note_id}:{i}", R)
                for i, (o, v, R) in enumerate(req.outputs)]

    # -- accounting -------------------------------------------------------
    def transparent_unspent(self) -> int:
        return sum(n.value for n in self.notes.values() if n.pool is Pool.TRANSPARENT and not n.spent)

    def shielded_unspent(self) -> int:
        return self.shielded_total - self.withdrawn_total

    def total_unspent(self) -> int:
        return self.transparent_unspent() + self.shielded_unspent()

    def to_json(self) -> dict:
        g = self.group
        return {
            "denominations": list(self.denominations),
            "ring_size": self.ring_size,
            "notes": [n.to_json(g) for n in sorted(self.notes.values(), key=lambda n: n.seq)],
            "key_images": sorted(i.hex() for i in self.key_images),
            "shielded_total": self.shielded_total,
            "withdrawn_total": self.withdrawn_total,
        }

    def _note_digest(self, note: Note) -> bytes:
        cached = self._digests.get(note.note_id)
        if cached is None or cached[0] != note.spent:
            cached = (note.spent, hashlib.sha256(canonical.encode(note.to_json(self.group))).digest())
            self._digests[note.note_id] = cached
        return cached[1]

    def state_hash(self) -> str:
        """Commitment to the full ledger; note digests are cached, notes are hashed in creation order."""
        root = hashlib.sha256(b"".join(self._note_digest(n) for n in self.notes.values())).hexdigest()
        return canonical.digest({
            "denominations": list(self.denominations), "ring_size": self.ring_size, "notes": len(self.notes),
            "notes_root": root, "key_images": sorted(i.hex() for i in self.key_images),
            "shielded_total": self.shielded_total, "withdrawn_total": self.withdrawn_total,
        })


# -- client-side builders -----------------------------------------------------

def build_shield(ledger: Ledger, note_id: str, recipient_pub, owner_secret: int, rng_seed: Seed) -> ShieldRequest:
    g = ledger.group
    note = ledger.notes[note_id]
    denoms = decompose(note.value, ledger.denominations)
    outs = tuple(derive_one_time(g, recipient_pub, child_seed(rng_seed, "shield", i))[0] for i in range(len(denoms)))
    req = ShieldRequest(note_id, outs, tuple(denoms))
    return ShieldRequest(note_id, outs, tuple(denoms), schnorr_sign(g, owner_secret, req.message(g)))


def sample_ring(ledger: Ledger, note_id: str, ring_size: int, rng_seed: Seed) -> tuple:
    """Real note plus decoys drawn uniformly from every same-denomination shielded note."""
    note = ledger.notes[note_id]
    others = [nid for nid in ledger.by_denomination[note.value] if nid != note_id]
    decoys = Drbg(rng_seed, "ring").sample(others, min(ring_size, len(others) + 1) - 1)
    members = decoys + [note_id]
    return tuple(sorted(members, key=lambda nid: ledger.notes[nid].seq))


def build_unshield(ledger: Ledger, note_id: str, owner_secret: int, output: OneTimeAddress, rng_seed: Seed,
                   ring_size: int | None = None) -> ShieldedSpend:
    g = ledger.group
    note = ledger.notes[note_id]
    ring = sample_ring(ledger, note_id, ring_size or ledger.ring_size, rng_seed)
    unsigned = ShieldedSpend(ring, note.value, output)
    pubs = [ledger.notes[nid].owner for nid in ring]
    sig = lsag_sign(g, unsigned.message(g), pubs, ring.index(note_id), owner_secret, rng_seed)
    return ShieldedSpend(ring, note.value, output, sig)


def build_transfer(ledger: Ledger, note_id: str, outputs, owner_secret: int) -> TransferRequest:
    g = ledger.group
    req = TransferRequest(note_id, tuple(outputs))
    return TransferRequest(note_id, tuple(outputs), schnorr_sign(g, owner_secret, req.message(g)))


def shield(ledger: Ledger, note_id: str, recipient_pub, owner_secret: int, rng_seed: Seed) -> list:
    return ledger.apply_shield(build_shield(ledger, note_id, recipient_pub, owner_secret, rng_seed))


def unshield(ledger: Ledger, spend: ShieldedSpend) -> Note:
    return ledger.apply_unshield(spend)


def transfer(ledger: Ledger, note_id: str, outputs, owner_secret: int) -> list:
    return ledger.apply_transfer(build_transfer(ledger, note_id, outputs, owner_secret))
