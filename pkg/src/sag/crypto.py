"""Paillier cryptosystem over arbitrary-precision integers and a signed fixed-point codec.

The public key uses ``g = N + 1`` by default, so ``g^m = 1 + m N (mod N^2)`` and
encryption costs a single modular exponentiation (``R^N``).  Keys loaded from disk
may carry any generator co-prime with ``N^2``; encryption and decryption handle the
general case.

Ciphertexts support ``+`` (with another ciphertext or a plaintext integer), ``-``
and ``*`` (by an integer), mirroring ``E(a)E(b) = E(a+b)`` and ``E(a)^k = E(ka)``.
"""

from __future__ import annotations

import hashlib
import secrets
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Union

import gmpy2
from gmpy2 import invert, mpz, powmod

from .errors import (
    EncodingBudgetError,
    KeyGenerationError,
    KeyMismatchError,
    PlaintextRangeError,
)

MILLER_RABIN_ROUNDS = 40
KEY_MAGIC = b"SAGK1"
_KIND_PUBLIC = 0
_KIND_PRIVATE = 1


def to_signed(z: int, n: int) -> int:
    """Map ``z`` in ``Z_n`` to the signed representative in ``(-n/2, n/2]``."""
    z = int(z) % int(n)
    return z - int(n) if 2 * z > n else z


def _random_prime(bits: int, max_tries: int = 100_000) -> mpz:
    for _ in range(max_tries):
        candidate = mpz(secrets.randbits(bits)) | (mpz(3) << (bits - 2)) | 1
        if gmpy2.is_prime(candidate, MILLER_RABIN_ROUNDS):
            return candidate
    raise KeyGenerationError(f"no {bits}-bit prime found after {max_tries} candidates")


class PaillierPublicKey:
    __slots__ = ("n", "g", "nsquare", "key_id", "_simple_g")

    def __init__(self, n: int, g: Optional[int] = None):
        self.n = mpz(n)
        self.nsquare = self.n * self.n
        self.g = self.n + 1 if g is None else mpz(g) % self.nsquare
        if gmpy2.gcd(self.g, self.nsquare) != 1:
            raise KeyGenerationError("generator g must be co-prime with N^2")
        self._simple_g = self.g == self.n + 1
        digest = hashlib.sha256(int(self.n).to_bytes((self.n.bit_length() + 7) // 8, "big"))
        self.key_id = digest.hexdigest()[:16]

    @property
    def bits(self) -> int:
        return int(self.n.bit_length())

    def __eq__(self, other) -> bool:
        return isinstance(other, PaillierPublicKey) and self.n == other.n and self.g == other.g

    def __hash__(self) -> int:
        return hash((int(self.n), int(self.g)))

    def __repr__(self) -> str:
        return f"PaillierPublicKey(bits={self.bits}, key_id={self.key_id})"

    def random_r(self) -> mpz:
        while True:
            r = mpz(secrets.randbelow(int(self.n)))
            if r > 1 and gmpy2.gcd(r, self.n) == 1:
                return r

    def g_pow(self, m: int) -> mpz:
        m = mpz(m) % self.n
        if self._simple_g:
            return (1 + m * self.n) % self.nsquare
        return powmod(self.g, m, self.nsquare)

    def encrypt(self, m: int, r: Optional[int] = None) -> "Ciphertext":
        """Encrypt ``m`` in ``Z_N``.  Signed callers should reduce mod N first."""
        m = int(m)
        if not 0 <= m < self.n:
            raise PlaintextRangeError(f"plaintext must lie in [0, N); got {m}")
        if r is None:
            r = self.random_r()
        else:
            r = mpz(r)
            if gmpy2.gcd(r, self.n) != 1:
                raise PlaintextRangeError("randomness R must be co-prime with N")
        value = self.g_pow(m) * powmod(r, self.n, self.nsquare) % self.nsquare
        return Ciphertext(value, self)

    def encrypt_signed(self, m: int) -> "Ciphertext":
        return self.encrypt(int(m) % self.n)

    def zero_noise(self) -> mpz:
        """A fresh encryption of zero, as a raw group element."""
        return powmod(self.random_r(), self.n, self.nsquare)

    def to_bytes(self) -> bytes:
        return KEY_MAGIC + bytes([_KIND_PUBLIC]) + _pack_ints([self.n, self.g])


class PaillierPrivateKey:
    """Decryption key holding the primes; decryption uses the CRT."""

    __slots__ = ("p", "q", "public_key", "_psq", "_qsq", "_hp", "_hq", "_q_inv_p",
                 "_n_mod_phi_p2", "_n_mod_phi_q2", "_p2_inv_q2")

    def __init__(self, p: int, q: int, public_key: Optional[PaillierPublicKey] = None):
        p, q = mpz(p), mpz(q)
        if p == q:
            raise KeyGenerationError("p and q must differ")
        if public_key is None:
            public_key = PaillierPublicKey(p * q)
        if public_key.n != p * q:
            raise KeyGenerationError("N does not equal p*q")
        self.p, self.q, self.public_key = p, q, public_key
        self._psq, self._qsq = p * p, q * q
        g = public_key.g
        self._hp = invert(self._l(powmod(g, p - 1, self._psq), p), p)
        self._hq = invert(self._l(powmod(g, q - 1, self._qsq), q), q)
        self._q_inv_p = invert(q, p)
        self._n_mod_phi_p2 = public_key.n % (p * (p - 1))
        self._n_mod_phi_q2 = public_key.n % (q * (q - 1))
        self._p2_inv_q2 = invert(self._psq, self._qsq)

    @staticmethod
    def _l(x: mpz, d: mpz) -> mpz:
        return (x - 1) // d

    def decrypt(self, ct: "Ciphertext") -> int:
        if ct.pk != self.public_key:
            raise KeyMismatchError(
                f"ciphertext under key {ct.pk.key_id} cannot be decrypted with {self.public_key.key_id}"
            )
        c = ct.value
        mp = self._l(powmod(c, self.p - 1, self._psq), self.p) * self._hp % self.p
        mq = self._l(powmod(c, self.q - 1, self._qsq), self.q) * self._hq % self.q
        # Garner recombination
        return int(mq + ((mp - mq) * self._q_inv_p % self.p) * self.q)

    def decrypt_signed(self, ct: "Ciphertext") -> int:
        return to_signed(self.decrypt(ct), self.public_key.n)

    def encrypt(self, m: int) -> "Ciphertext":
        """Owner-side encryption; computes ``R^N`` with the CRT, several times faster."""
        pk = self.public_key
        m = int(m)
        if not 0 <= m < pk.n:
            raise PlaintextRangeError(f"plaintext must lie in [0, N); got {m}")
        r = pk.random_r()
        rp = powmod(r, self._n_mod_phi_p2, self._psq)
        rq = powmod(r, self._n_mod_phi_q2, self._qsq)
        rn = rp + ((rq - rp) * self._p2_inv_q2 % self._qsq) * self._psq
        return Ciphertext(pk.g_pow(m) * rn % pk.nsquare, pk)

    def encrypt_signed(self, m: int) -> "Ciphertext":
        return self.encrypt(int(m) % self.public_key.n)

    def to_bytes(self) -> bytes:
        pk = self.public_key
        return KEY_MAGIC + bytes([_KIND_PRIVATE]) + _pack_ints([pk.n, pk.g, self.p, self.q])


class Ciphertext:
    __slots__ = ("value", "pk")

    def __init__(self, value: int, pk: PaillierPublicKey):
        self.value = mpz(value)
        self.pk = pk

    @property
    def key_id(self) -> str:
        return self.pk.key_id

    def __repr__(self) -> str:
        return f"Ciphertext(key_id={self.pk.key_id})"

    def _check(self, other: "Ciphertext") -> None:
        if other.pk is not self.pk and other.pk != self.pk:
            raise KeyMismatchError(f"cannot combine ciphertexts under {self.key_id} and {other.key_id}")

    def __add__(self, other: Union["Ciphertext", int]) -> "Ciphertext":
        if isinstance(other, Ciphertext):
            self._check(other)
            return Ciphertext(self.value * other.value % self.pk.nsquare, self.pk)
        return Ciphertext(self.value * self.pk.g_pow(other) % self.pk.nsquare, self.pk)

    __radd__ = __add__

    def __neg__(self) -> "Ciphertext":
        return Ciphertext(invert(self.value, self.pk.nsquare), self.pk)

    def __sub__(self, other: Union["Ciphertext", int]) -> "Ciphertext":
        if isinstance(other, Ciphertext):
            return self + (-other)
        return self + (-int(other))

    def __rsub__(self, other: int) -> "Ciphertext":
        return (-self) + other

    def __mul__(self, k: int) -> "Ciphertext":
        n = self.pk.n
        k = mpz(k) % n
        if 2 * k > n:
            # E(a)^(-k') through the inverse keeps exponents short for negative factors
            return Ciphertext(powmod(invert(self.value, self.pk.nsquare), n - k, self.pk.nsquare), self.pk)
        return Ciphertext(powmod(self.value, k, self.pk.nsquare), self.pk)

    __rmul__ = __mul__

    def rerandomize(self) -> "Ciphertext":
        return Ciphertext(self.value * self.pk.zero_noise() % self.pk.nsquare, self.pk)


def keygen(bits: int = 1024) -> tuple[PaillierPublicKey, PaillierPrivateKey]:
    """Generate a Paillier key pair with an N of exactly ``bits`` bits."""
    if bits < 64:
        raise KeyGenerationError("key size must be at least 64 bits")
    half = bits // 2
    for _ in range(1000):
        p = _random_prime(half)
        q = _random_prime(bits - half)
        if p != q and (p * q).bit_length() == bits and gmpy2.gcd(p * q, (p - 1) * (q - 1)) == 1:
            sk = PaillierPrivateKey(p, q)
            return sk.public_key, sk
    raise KeyGenerationError(f"could not produce a {bits}-bit modulus")


def keypair_from_primes(p: int, q: int) -> tuple[PaillierPublicKey, PaillierPrivateKey]:
    sk = PaillierPrivateKey(p, q)
    return sk.public_key, sk


def add_ct(ct_a: Ciphertext, ct_b: Ciphertext) -> Ciphertext:
    return ct_a + ct_b


def scalar_mul(ct: Ciphertext, k: int) -> Ciphertext:
    return ct * k


def encrypt(pk: PaillierPublicKey, m: int, r: Optional[int] = None) -> Ciphertext:
    return pk.encrypt(m, r)


def decrypt(sk: PaillierPrivateKey, ct: Ciphertext) -> int:
    return sk.decrypt(ct)


# -- serialization -----------------------------------------------------------------

def _pack_ints(values: Iterable[int]) -> bytes:
    out = bytearray()
    for v in values:
        v = int(v)
        raw = v.to_bytes(max(1, (v.bit_length() + 7) // 8), "big")
        out += struct.pack(">I", len(raw)) + raw
    return bytes(out)


def _unpack_ints(buf: bytes, count: int, offset: int = 0) -> tuple[list[int], int]:
    values = []
    for _ in range(count):
        (length,) = struct.unpack_from(">I", buf, offset)
        offset += 4
        values.append(int.from_bytes(buf[offset:offset + length], "big"))
        offset += length
    return values, offset


def key_from_bytes(data: bytes) -> Union[PaillierPublicKey, PaillierPrivateKey]:
    if data[:5] != KEY_MAGIC:
        raise ValueError("not a key file (bad magic)")
    kind = data[5]
    if kind == _KIND_PUBLIC:
        (n, g), _ = _unpack_ints(data, 2, 6)
        return PaillierPublicKey(n, g)
    if kind == _KIND_PRIVATE:
        (n, g, p, q), _ = _unpack_ints(data, 4, 6)
        return PaillierPrivateKey(p, q, PaillierPublicKey(n, g))
    raise ValueError(f"unknown key kind {kind}")


def save_key(key: Union[PaillierPublicKey, PaillierPrivateKey], path: Union[str, Path]) -> None:
    Path(path).write_bytes(key.to_bytes())


def load_key(path: Union[str, Path]) -> Union[PaillierPublicKey, PaillierPrivateKey]:
    return key_from_bytes(Path(path).read_bytes())


# -- fixed point -------------------------------------------------------------------

@dataclass(frozen=True)
class FixedPointCodec:
    """Signed fixed-point encoding of reals into ``Z_N`` with magnification ``M``.

    A value at stage scale ``k`` is represented by ``round(x * M**k)``; negative values
    wrap to ``N - |v|``.  Multiplying two encoded values adds their scales.
    """

    M: int
    N: Optional[int] = None

    def factor(self, scale: int) -> int:
        return self.M ** scale

    def to_fixed(self, x, scale: int = 1) -> int:
        """Signed integer ``round(x * M**scale)``, computed exactly from the float value."""
        return round(Fraction(x) * self.M ** scale)

    def _modulus(self, n: Optional[int]) -> int:
        n = self.N if n is None else n
        if n is None:
            raise ValueError("codec has no modulus; pass n explicitly")
        return int(n)

    def check(self, v: int, n: Optional[int] = None) -> int:
        n = self._modulus(n)
        if 2 * abs(v) >= n:
            raise EncodingBudgetError(f"|value| = {abs(v)} does not fit below N/2")
        return v

    def encode(self, x, scale: int = 1, n: Optional[int] = None) -> int:
        n = self._modulus(n)
        return self.check(self.to_fixed(x, scale), n) % n

    def decode(self, z: int, scale: int = 1, n: Optional[int] = None) -> float:
        return float(self.decode_exact(z, scale, n))

    def decode_exact(self, z: int, scale: int = 1, n: Optional[int] = None) -> Fraction:
        return Fraction(to_signed(z, self._modulus(n)), self.M ** scale)

    def fits(self, max_abs: float, scale: int, n: Optional[int] = None) -> bool:
        return 2 * Fraction(max_abs) * self.M ** scale < self._modulus(n)
