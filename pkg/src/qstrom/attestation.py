"""Mock remote attestation: a manufacturer key signs (measurement, enclave key)."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from . import canonical
from .crypto.groups import Group
from .crypto.keys import KeyPair, schnorr_sign, schnorr_verify


def measure(program_descriptor: bytes) -> str:
    return hashlib.sha256(b"qstrom/measurement" + program_descriptor).hexdigest()


@dataclass(frozen=True)
class AttestationQuote:
    measurement: str
    enclave_pub: object
    manufacturer_id: str
    signature: bytes

    def body(self, group: Group) -> bytes:
        return canonical.encode({"measurement": self.measurement, "enclave": group.encode(self.enclave_pub).hex(),
                                 "manufacturer": self.manufacturer_id})

    def verify(self, group: Group, manufacturer_pub) -> bool:
        return schnorr_verify(group, manufacturer_pub, self.body(group), self.signature)

    def to_json(self, group: Group) -> dict:
        return {"measurement": self.measurement, "enclave_pub": group.encode(self.enclave_pub).hex(),
                "manufacturer_id": self.manufacturer_id, "signature": self.signature.hex()}

    @classmethod
    def from_json(cls, group: Group, obj: dict) -> "AttestationQuote":
        return cls(obj["measurement"], group.decode(bytes.fromhex(obj["enclave_pub"])), obj["manufacturer_id"],
                   bytes.fromhex(obj["signature"]))


def issue_quote(group: Group, manufacturer: KeyPair, manufacturer_id: str, measurement: str, enclave_pub) -> AttestationQuote:
    unsigned = AttestationQuote(measurement, enclave_pub, manufacturer_id, b"")
    return AttestationQuote(measurement, enclave_pub, manufacturer_id,
                            schnorr_sign(group, manufacturer.secret, unsigned.body(group)))
