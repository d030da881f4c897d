"""Cryptographic primitives consumed by the handshake.

* RSA key pairs generated from an explicit seeded RNG. Encryption is RSA-KEM:
  a random ``r < N`` is sent as ``r^e mod N`` and ``SHA-256(r)`` keys AES-GCM
  over the payload, so decrypting with the wrong private key fails the tag
  check instead of returning garbage.
* Full-domain-hash RSA signatures for filter snapshots.
* Diffie-Hellman arithmetic over a prime modulus with a primitive root.
* Timestamp freshness and the AES-GCM session channel keyed by HKDF over the
  agreed DH value.

Key sizes: ``TEST_KEY_BITS`` keeps test suites fast; ``FULL_KEY_BITS`` is the
1024-bit modulus used for demonstrations.
"""

from __future__ import annotations

import hashlib
import hmac
import random
import struct
from dataclasses import dataclass, field

import gmpy2
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import AuthFailure, DecryptionFailure, PeerValueOutOfRange

TEST_KEY_BITS = 512
FULL_KEY_BITS = 1024
PUBLIC_EXPONENT = 65537
NONCE_SIZE = 12

DEFAULT_FRESHNESS_WINDOW = 2000  # ms of simulated clock


# ---------------------------------------------------------------------------
# primes


def is_probable_prime(n: int, rounds: int = 40) -> bool:
    """Miller-Rabin; 40 rounds bounds the error below 2**-80."""
    return n >= 2 and bool(gmpy2.is_prime(n, rounds))


def random_prime(bits: int, rng: random.Random) -> int:
    """Smallest prime at or above a random ``bits``-bit start with the top two bits set."""
    start = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
    p = int(gmpy2.next_prime(start - 1))
    if p.bit_length() != bits:
        return random_prime(bits, rng)
    return p


# ---------------------------------------------------------------------------
# asymmetric keys


@dataclass(frozen=True)
class PublicKey:
    n: int
    e: int = PUBLIC_EXPONENT

    @property
    def size(self) -> int:
        return (self.n.bit_length() + 7) // 8

    def to_bytes(self) -> bytes:
        nb = self.n.to_bytes(self.size, "big")
        return struct.pack(">H", len(nb)) + nb + struct.pack(">I", self.e)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PublicKey":
        if len(data) < 2:
            raise DecryptionFailure("truncated public key")
        (ln,) = struct.unpack_from(">H", data)
        if len(data) != 2 + ln + 4 or ln == 0:
            raise DecryptionFailure("malformed public key")
        n = int.from_bytes(data[2:2 + ln], "big")
        (e,) = struct.unpack_from(">I", data, 2 + ln)
        return cls(n, e)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()[:16]


@dataclass(frozen=True)
class PrivateKey:
    n: int
    d: int = field(repr=False)
    p: int = field(repr=False)
    q: int = field(repr=False)

    @property
    def size(self) -> int:
        return (self.n.bit_length() + 7) // 8

    def secret_bytes(self) -> bytes:
        """Encoding of the private exponent; used only for leak scans."""
        return self.d.to_bytes(self.size, "big")


@dataclass(frozen=True)
class KeyPair:
    public: PublicKey
    private: PrivateKey


def generate_keypair(rng: random.Random, bits: int = TEST_KEY_BITS) -> KeyPair:
    if bits < 128 or bits % 2:
        raise ValueError("key size must be an even number of bits >= 128")
    while True:
        p = random_prime(bits // 2, rng)
        q = random_prime(bits // 2, rng)
        if p == q:
            continue
        phi = (p - 1) * (q - 1)
        if gmpy2.gcd(PUBLIC_EXPONENT, phi) != 1:
            continue
        n = p * q
        d = pow(PUBLIC_EXPONENT, -1, phi)
        return KeyPair(PublicKey(n), PrivateKey(n, d, p, q))


def _kem_key(r: int, size: int) -> bytes:
    return hashlib.sha256(b"rpm-kem" + r.to_bytes(size, "big")).digest()


def encrypt(public: PublicKey, plaintext: bytes, rng: random.Random) -> bytes:
    """``c1 || nonce || AES-GCM(ct)``, with ``c1`` bound as associated data."""
    size = public.size
    r = rng.randrange(2, public.n - 1)
    c1 = pow(r, public.e, public.n).to_bytes(size, "big")
    nonce = rng.randbytes(NONCE_SIZE)
    return c1 + nonce + AESGCM(_kem_key(r, size)).encrypt(nonce, plaintext, c1)


def decrypt(private: PrivateKey, ciphertext: bytes) -> bytes:
    size = private.size
    if len(ciphertext) < size + NONCE_SIZE + 16:
        raise DecryptionFailure("ciphertext too short")
    c1 = ciphertext[:size]
    c = int.from_bytes(c1, "big")
    if c >= private.n:
        raise DecryptionFailure("KEM value out of range")
    r = pow(c, private.d, private.n)
    nonce = ciphertext[size:size + NONCE_SIZE]
    try:
        return AESGCM(_kem_key(r, size)).decrypt(nonce, ciphertext[size + NONCE_SIZE:], c1)
    except InvalidTag:
        raise DecryptionFailure("integrity check failed") from None


def _fdh(data: bytes, n: int) -> int:
    size = (n.bit_length() - 1) // 8
    return int.from_bytes(hashlib.shake_256(b"rpm-sig" + data).digest(size), "big")


def sign(private: PrivateKey, data: bytes) -> bytes:
    return pow(_fdh(data, private.n), private.d, private.n).to_bytes(private.size, "big")


def verify(public: PublicKey, data: bytes, signature: bytes) -> bool:
    """True iff ``signature`` is a valid signature over ``data``; never raises."""
    try:
        if len(signature) != public.size:
            return False
        s = int.from_bytes(signature, "big")
        if s >= public.n:
            return False
        return pow(s, public.e, public.n) == _fdh(data, public.n)
    except Exception:
        return False


# ---------------------------------------------------------------------------
# Diffie-Hellman


def _prime_factors(n: int) -> list[int]:
    factors = []
    d = 2
    while d * d <= n:
        if n % d == 0:
            factors.append(d)
            while n % d == 0:
                n //= d
        d += 1 if d == 2 else 2
    if n > 1:
        factors.append(n)
    return factors


# RFC 3526 group 14 modulus (a safe prime p = 2q + 1).
_MODP_2048 = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
    "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
    "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05"
    "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
    "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718"
    "3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF",
    16,
)


@dataclass(frozen=True)
class DhGroup:
    alpha: int
    g: int

    TEST_SCALE_LIMIT = 1 << 16

    def is_primitive_root(self) -> bool:
        """Order test via the factorisation of ``alpha - 1``.

        Only practical when ``alpha - 1`` factors quickly: small moduli, or safe
        primes where the factors are 2 and ``(alpha - 1) / 2``.
        """
        a, g = self.alpha, self.g
        if not 1 < g < a:
            return False
        q = (a - 1) // 2
        if a >= self.TEST_SCALE_LIMIT and is_probable_prime(q):
            factors = [2, q]
        elif a < 1 << 40:
            factors = _prime_factors(a - 1)
        else:
            raise ValueError("cannot verify a primitive root for this modulus")
        return all(pow(g, (a - 1) // f, a) != 1 for f in factors)

    def validate(self) -> None:
        if self.alpha < 5 or not is_probable_prime(self.alpha):
            raise ValueError(f"alpha={self.alpha} is not prime")
        if not self.is_primitive_root():
            raise ValueError(f"g={self.g} is not a primitive root of alpha")

    @classmethod
    def generate(cls, rng: random.Random, bits: int = 16) -> "DhGroup":
        """Random prime ``alpha`` of ``bits`` bits and a random primitive root."""
        if bits > 40:
            raise ValueError("use DhGroup.demo() for large groups")
        while True:
            alpha = random_prime(bits, rng)
            factors = _prime_factors(alpha - 1)
            for _ in range(64):
                g = rng.randrange(2, alpha - 1)
                if all(pow(g, (alpha - 1) // f, alpha) != 1 for f in factors):
                    return cls(alpha, g)

    @classmethod
    def demo(cls) -> "DhGroup":
        return _demo_group()


_DEMO_GROUP: DhGroup | None = None


def _demo_group() -> DhGroup:
    # g = 2 only generates the prime-order subgroup of this modulus; take the
    # smallest actual primitive root instead.
    global _DEMO_GROUP
    if _DEMO_GROUP is None:
        q = (_MODP_2048 - 1) // 2
        g = 2
        while pow(g, q, _MODP_2048) == 1 or pow(g, 2, _MODP_2048) == 1:
            g += 1
        _DEMO_GROUP = DhGroup(_MODP_2048, g)
    return _DEMO_GROUP


def dh_secret(group: DhGroup, rng: random.Random) -> int:
    return rng.randrange(2, group.alpha - 1)


def dh_public(group: DhGroup, secret: int) -> int:
    if not 1 <= secret <= group.alpha - 2:
        raise ValueError("secret out of range")
    return pow(group.g, secret, group.alpha)


def dh_shared(group: DhGroup, peer_public: int, secret: int) -> int:
    if not 1 <= peer_public <= group.alpha - 1:
        raise PeerValueOutOfRange(f"peer value {peer_public} outside [1, alpha-1]")
    return pow(peer_public, secret, group.alpha)


# ---------------------------------------------------------------------------
# freshness


def fresh(ts: int, now: int, window: int = DEFAULT_FRESHNESS_WINDOW) -> bool:
    return abs(now - ts) <= window


# ---------------------------------------------------------------------------
# session channel


def int_to_bytes(value: int) -> bytes:
    return value.to_bytes(max(1, (value.bit_length() + 7) // 8), "big")


def session_key(shared: int) -> bytes:
    """32-byte AES key derived from the agreed DH value."""
    return HKDF(
        algorithm=hashes.SHA256(), length=32, salt=b"rpm-session-v1", info=b"vitals"
    ).derive(int_to_bytes(shared))


_TS = struct.Struct(">Q")


def session_encrypt(
    shared: int, payload: bytes, ts: int, rng: random.Random, aad: bytes = b""
) -> bytes:
    """``nonce || AES-GCM(ts || payload)``; the timestamp is inside the authenticated body."""
    nonce = rng.randbytes(NONCE_SIZE)
    return nonce + AESGCM(session_key(shared)).encrypt(nonce, _TS.pack(ts) + payload, aad)


def session_decrypt(shared: int, blob: bytes, aad: bytes = b"") -> tuple[bytes, int]:
    if len(blob) < NONCE_SIZE + 16 + _TS.size:
        raise AuthFailure("session ciphertext too short")
    try:
        body = AESGCM(session_key(shared)).decrypt(blob[:NONCE_SIZE], blob[NONCE_SIZE:], aad)
    except InvalidTag:
        raise AuthFailure("session ciphertext failed authentication") from None
    (ts,) = _TS.unpack_from(body)
    return body[_TS.size:], ts


def constant_time_equal(a: bytes, b: bytes) -> bool:
    return hmac.compare_digest(a, b)
