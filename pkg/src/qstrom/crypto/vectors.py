"""Deterministic crypto test vectors (emitted by ``qstrom vectors``)."""

from __future__ import annotations

from .dkg import dkg_round
from .groups import get_group
from .keys import keygen, schnorr_sign
from .lsag import lsag_sign
from .threshold import partial_decrypt, threshold_encrypt


def generate_vectors(profile: str = "demo") -> dict:
    g = get_group(profile)
    keys = [keygen(g, s) for s in range(4)]
    ring = [k.public for k in keys]
    sig = lsag_sign(g, b"qstrom vector", ring, 2, keys[2].secret, 7)
    dkg = dkg_round(g, 4, 1, "vector-dkg")
    ct = threshold_encrypt(g, dkg.group_key, b"BUY 10000 mc/kWh x 1000 Wh", "vector-enc")
    return {
        "group": {"name": g.name, "label": g.label, "order": hex(g.q), "generator": g.encode(g.G).hex()},
        "keygen": [{"seed": s, "secret": g.encode_scalar(k.secret).hex(), "public": k.public_bytes.hex()}
                   for s, k in enumerate(keys)],
        "hash_to_group": [{"input": m.hex(), "point": g.encode(g.hash_to_group(m)).hex()}
                          for m in (b"", b"meter-1", bytes(range(32)))],
        "schnorr": {"public": keys[0].public_bytes.hex(), "message": b"tx".hex(),
                    "signature": schnorr_sign(g, keys[0].secret, b"tx").hex()},
        "lsag": {"message": b"qstrom vector".hex(), "signer_index": 2, "signature": sig.to_json(g)},
        "dkg": {"n": 4, "t": 1, "seed": "vector-dkg", "group_key": g.encode(dkg.group_key).hex(),
                "shares": {str(s.index): g.encode_scalar(s.value).hex() for s in dkg.shares}},
        "threshold": {
            "ciphertext": ct.to_bytes(g).hex(),
            "partials": {str(s.index): g.encode(partial_decrypt(g, s, ct).D).hex() for s in dkg.shares},
        },
    }
