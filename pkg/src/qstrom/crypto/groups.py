"""Prime-order groups behind one additive interface.

Two profiles are provided:

* ``demo``: the quadratic-residue subgroup of Z_p* for the 62-bit safe prime
  p = 2q + 1. Fast enough for exhaustive tests; not secure.
* ``standard``: secp256k1 in pure Python (Jacobian coordinates).

Group elements are opaque to callers: ints for the demo group, affine
``(x, y)`` tuples (``None`` for infinity) for the curve. All code outside this
module goes through ``add``/``mul``/``double_mul``/``encode``.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache

from .. import kernels


def _h(*parts: bytes) -> bytes:
    h = hashlib.sha512()
    for part in parts:
        h.update(len(part).to_bytes(4, "big"))
        h.update(part)
    return h.digest()


class Group:
    name: str
    label: str
    q: int
    G: object
    identity: object
    point_size: int
    scalar_size: int

    # -- scalars -------------------------------------------------------
    def encode_scalar(self, k: int) -> bytes:
        return (k % self.q).to_bytes(self.scalar_size, "big")

    def decode_scalar(self, data: bytes) -> int:
        if len(data) != self.scalar_size:
            raise ValueError("bad scalar length")
        k = int.from_bytes(data, "big")
        if k >= self.q:
            raise ValueError("non-canonical scalar")
        return k

    def hash_to_scalar(self, tag: bytes, *parts: bytes) -> int:
        return int.from_bytes(_h(b"qstrom/h2s/" + tag, *parts), "big") % self.q

    def base_mul(self, k: int):
        return self.mul(self.G, k)

    def sum(self, points):
        acc = self.identity
        for p in points:
            acc = self.add(acc, p)
        return acc

    def __repr__(self):
        return f"<Group {self.name} ({self.label})>"


class SchnorrGroup(Group):
    """Order-q subgroup of Z_p* with p = 2q + 1, written additively."""

    def __init__(self, p: int, g: int, name: str = "schnorr", label: str = "demo"):
        q = (p - 1) // 2
        if pow(g, q, p) != 1 or g in (0, 1, p - 1):
            raise ValueError("generator does not have order q")
        self.name, self.label = name, label
        self.p, self.q, self.G = p, q, g
        self.identity = 1
        self.point_size = (p.bit_length() + 7) // 8
        self.scalar_size = (q.bit_length() + 7) // 8
        self._h2g = lru_cache(maxsize=1 << 16)(self._hash_to_group)

    def add(self, a, b):
        return a * b % self.p

    def neg(self, a):
        return pow(a, -1, self.p)

    def mul(self, a, k):
        return kernels.powmod(a, k % self.q, self.p)

    def double_mul(self, a, P, b, Q):
        return kernels.dual_powmod(P, a % self.q, Q, b % self.q, self.p)

    def is_element(self, a) -> bool:
        return isinstance(a, int) and 0 < a < self.p and kernels.powmod(a, self.q, self.p) == 1

    def encode(self, a) -> bytes:
        return a.to_bytes(self.point_size, "big")

    def decode(self, data: bytes):
        if len(data) != self.point_size:
            raise ValueError("bad point length")
        a = int.from_bytes(data, "big")
        if not self.is_element(a):
            raise ValueError("not a group element")
        return a

    def hash_to_group(self, data: bytes):
        return self._h2g(bytes(data))

    def _hash_to_group(self, data: bytes):
        # try-and-increment: accept the first candidate that is a quadratic
        # residue; its discrete log to G is unknown to everyone
        ctr = 0
        while True:
            c = int.from_bytes(_h(b"qstrom/h2g", data, ctr.to_bytes(4, "big"))[:32], "big") % self.p
            if c > 1 and kernels.powmod(c, self.q, self.p) == 1:
                return c
            ctr += 1


class CurveGroup(Group):
    """Short Weierstrass curve y^2 = x^3 + a*x + b with prime order and cofactor 1."""

    def __init__(self, p, a, b, gx, gy, n, name="secp256k1", label="standard"):
        self.name, self.label = name, label
        self.p, self.a, self.b, self.q = p, a, b, n
        self.G = (gx, gy)
        self.identity = None
        self.point_size = 1 + (p.bit_length() + 7) // 8
        self.scalar_size = (n.bit_length() + 7) // 8
        if not self._on_curve(self.G):
            raise ValueError("generator not on curve")
        self._h2g = lru_cache(maxsize=1 << 14)(self._hash_to_group)

    def _on_curve(self, P) -> bool:
        x, y = P
        return (y * y - (x * x * x + self.a * x + self.b)) % self.p == 0

    # Jacobian helpers: (X, Y, Z) with x = X/Z^2, y = Y/Z^3
    def _to_jac(self, P):
        return (1, 1, 0) if P is None else (P[0], P[1], 1)

    def _from_jac(self, J):
        X, Y, Z = J
        if Z == 0:
            return None
        zi = pow(Z, -1, self.p)
        zi2 = zi * zi % self.p
        return (X * zi2 % self.p, Y * zi2 * zi % self.p)

    def _jdouble(self, J):
        X, Y, Z = J
        p = self.p
        if Z == 0 or Y == 0:
            return (1, 1, 0)
        ysq = Y * Y % p
        S = 4 * X * ysq % p
        M = (3 * X * X + self.a * pow(Z, 4, p)) % p
        nx = (M * M - 2 * S) % p
        ny = (M * (S - nx) - 8 * ysq * ysq) % p
        nz = 2 * Y * Z % p
        return (nx, ny, nz)

    def _jadd(self, J1, J2):
        X1, Y1, Z1 = J1
        X2, Y2, Z2 = J2
        p = self.p
        if Z1 == 0:
            return J2
        if Z2 == 0:
            return J1
        z1z1 = Z1 * Z1 % p
        z2z2 = Z2 * Z2 % p
        U1 = X1 * z2z2 % p
        U2 = X2 * z1z1 % p
        S1 = Y1 * Z2 * z2z2 % p
        S2 = Y2 * Z1 * z1z1 % p
        if U1 == U2:
            if S1 != S2:
                return (1, 1, 0)
            return self._jdouble(J1)
        H = (U2 - U1) % p
        R = (S2 - S1) % p
        H2 = H * H % p
        H3 = H * H2 % p
        U1H2 = U1 * H2 % p
        nx = (R * R - H3 - 2 * U1H2) % p
        ny = (R * (U1H2 - nx) - S1 * H3) % p
        nz = H * Z1 * Z2 % p
        return (nx, ny, nz)

    def add(self, P, Q):
        return self._from_jac(self._jadd(self._to_jac(P), self._to_jac(Q)))

    def neg(self, P):
        return None if P is None else (P[0], (-P[1]) % self.p)

    def mul(self, P, k):
        k %= self.q
        acc = (1, 1, 0)
        base = self._to_jac(P)
        for bit in bin(k)[2:] if k else "":
            acc = self._jdouble(acc)
            if bit == "1":
                acc = self._jadd(acc, base)
        return self._from_jac(acc)

    def double_mul(self, a, P, b, Q):
        a %= self.q
        b %= self.q
        JP, JQ = self._to_jac(P), self._to_jac(Q)
        JPQ = self._jadd(JP, JQ)
        acc = (1, 1, 0)
        for i in range(max(a.bit_length(), b.bit_length()) - 1, -1, -1):
            acc = self._jdouble(acc)
            ba, bb = (a >> i) & 1, (b >> i) & 1
            if ba and bb:
                acc = self._jadd(acc, JPQ)
            elif ba:
                acc = self._jadd(acc, JP)
            elif bb:
                acc = self._jadd(acc, JQ)
        return self._from_jac(acc)

    def is_element(self, P) -> bool:
        if P is None:
            return True
        return (isinstance(P, tuple) and len(P) == 2 and 0 <= P[0] < self.p
                and 0 <= P[1] < self.p and self._on_curve(P))

    def encode(self, P) -> bytes:
        size = self.point_size - 1
        if P is None:
            return b"\x00" * self.point_size
        return bytes([2 + (P[1] & 1)]) + P[0].to_bytes(size, "big")

    def _lift_x(self, x: int, odd: int):
        rhs = (x * x * x + self.a * x + self.b) % self.p
        y = pow(rhs, (self.p + 1) // 4, self.p)
        if y * y % self.p != rhs:
            return None
        if y & 1 != odd:
            y = self.p - y
        return (x, y)

    def decode(self, data: bytes):
        if len(data) != self.point_size:
            raise ValueError("bad point length")
        if data == b"\x00" * self.point_size:
            return None
        if data[0] not in (2, 3):
            raise ValueError("bad point prefix")
        x = int.from_bytes(data[1:], "big")
        if x >= self.p:
            raise ValueError("x out of range")
        P = self._lift_x(x, data[0] - 2)
        if P is None:
            raise ValueError("not on curve")
        return P

    def hash_to_group(self, data: bytes):
        return self._h2g(bytes(data))

    def _hash_to_group(self, data: bytes):
        ctr = 0
        while True:
            x = int.from_bytes(_h(b"qstrom/h2g", data, ctr.to_bytes(4, "big")), "big") % self.p
            P = self._lift_x(x, 0)
            if P is not None:
                return P
            ctr += 1


DEMO_P = 4611686018427377339  # largest safe prime below 2**62

DEMO = SchnorrGroup(DEMO_P, 4, name="schnorr62", label="demo")

SECP256K1 = CurveGroup(
    p=2**256 - 2**32 - 977,
    a=0,
    b=7,
    gx=0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798,
    gy=0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8,
    n=0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141,
)

PROFILES = {"demo": DEMO, "standard": SECP256K1}


def get_group(profile: str = "demo") -> Group:
    try:
        return PROFILES[profile]
    except KeyError:
        raise ValueError(f"unknown group profile {profile!r}") from None
