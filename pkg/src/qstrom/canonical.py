"""Canonical JSON: sorted keys, no whitespace, UTF-8. Hashes are taken over this form."""

import hashlib
import json


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def encode(obj) -> bytes:
    return dumps(obj).encode()


def digest(obj) -> str:
    return hashlib.sha256(encode(obj)).hexdigest()
