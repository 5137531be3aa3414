"""Group arithmetic, address keys, the challenge-response proof and the
symmetric / hybrid encryption used for payloads.

Address keys live in a Schnorr group: elements are residues modulo a prime
``p`` and exponents are taken modulo a prime ``q`` dividing ``p - 1``.  An
address key is ``g^x mod p``; the exponent ``x`` is the capability.  The
exponent 0 is reserved for the wildcard, which grants a permission to
everyone without proof.
"""
from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Union

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

try:
    from gmpy2 import powmod as _powmod
except ImportError:  # pragma: no cover - gmpy2 is a declared dependency
    _powmod = None


SYSTEM_RNG = random.SystemRandom()

CONTENT_KEY_SIZE = 32
NONCE_SIZE = 12
TAG_SIZE = 16
SEAL_OVERHEAD = NONCE_SIZE + TAG_SIZE
PUBLIC_KEY_SIZE = 32
HYBRID_OVERHEAD = PUBLIC_KEY_SIZE + TAG_SIZE

# Named suite: AES-256-GCM for content, X25519 + HKDF-SHA256 + AES-256-GCM for hybrid.
CIPHER_SUITE = "x25519-hkdf-sha256-aes256gcm-v1"

WORDLIST_VERSION = "v1"
FINGERPRINT_WORDS = 8
FINGERPRINT_BITS = 112


class CryptoError(Exception):
    pass


class WildcardNeedsNoProof(CryptoError):
    """Raised when a proof is requested for a wildcard key."""


class InvalidKey(CryptoError):
    pass


class DecryptError(CryptoError):
    pass


def powmod(base: int, exponent: int, modulus: int) -> int:
    if _powmod is not None and exponent >= 0:
        return int(_powmod(base, exponent, modulus))
    return pow(base, exponent, modulus)


@dataclass(frozen=True)
class GroupParams:
    modulus: int
    order: int
    generator: int
    name: str = ""

    @property
    def p(self) -> int:
        return self.modulus

    @property
    def q(self) -> int:
        return self.order

    @property
    def g(self) -> int:
        return self.generator

    def validate(self) -> None:
        p, q, g = self.modulus, self.order, self.generator
        if (p - 1) % q != 0:
            raise ValueError("order must divide modulus - 1")
        if not 1 < g < p:
            raise ValueError("generator out of range")
        if powmod(g, q, p) != 1:
            raise ValueError("generator does not have order q")

    def in_subgroup(self, element: int) -> bool:
        return 0 < element < self.modulus and powmod(element, self.order, self.modulus) == 1

    def exp(self, exponent: int) -> int:
        return powmod(self.generator, exponent, self.modulus)


TEST_GROUP = GroupParams(modulus=23, order=11, generator=4, name="test")

# RFC 3526 group 14 (2048-bit MODP); p is a safe prime and 4 = 2^2 generates
# the subgroup of quadratic residues of order (p - 1) / 2.
_MODP_2048_P = int(
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
MODP_2048 = GroupParams(
    modulus=_MODP_2048_P, order=(_MODP_2048_P - 1) // 2, generator=4, name="modp2048"
)

# 2048-bit modulus with a 256-bit prime-order subgroup, generated by
# tools/make_schnorr_group.py.  Exponentiation with 256-bit exponents is about
# ten times faster than in MODP_2048, which keeps simulations affordable.
SCHNORR_2048_256 = GroupParams(
    modulus=int(
        "8360aec1861c6fcbcce2fa5baa8138bd104b827c2386ef9cbd554194745111d7"
        "a2658f720ea128308b65bcb4b300acf92f8e36cf9a7e2d375acb2a1d61e4dd3f"
        "81414e52439e420db86d8c2100c1ae80b038df0dd220b5207a121fa73e6bf822"
        "d5b85f50055a441d2047e9a3ac9d4f427ec3b654239b4f791806f87f30ff5687"
        "742b4f63eb7745a72ed55a2afffe7ff478b19426b865b31bd4dc93f5352d0a6c"
        "8cbfee401659555366c190c0e29af119925dca0dec156c72a595620055f6a093"
        "c3da6f009a7fcbd3ea2d81c8697e6042ce58facfb9cbf1605ca2e16ddfcf1a33"
        "a5efe2e58762fab353fce26b197b7c1f15aed5f064d1f3221cfcd2e36a418407",
        16,
    ),
    order=int("9d066ccb970b3f5d1e61dba46cf697627efe4799f6f9a967fa9c6d9d81b3d157", 16),
    generator=int(
        "7c62955c037ec3dd13733decd5597ef973e4dd93a52a1a13206ffe821398ab54"
        "0a122547663400613a7f46b6d38078492daa442ea324cebad56e51984b08429e"
        "b1ceeebbd8147223f171d92267f92426b5ee362464ab5b8bf7b49f8cdca50825"
        "b919c73ceac990b0acaa3101659cff2dec2125846b71a9d39c65b181f2b92fe1"
        "1be0a89127e006e8e55174945ff249e398f16961e1c996695526636f688759da"
        "a86d6d88bb83ef6703c57dcc3e68f6172ba390c223639f75bf01b5600d57b71b"
        "c3d90cb92c10827499e3e29eba8e29b1f66c0e848396102942e0917838cf9e25"
        "61d36572a15822ee364e7c2c53869a1d35dead5be1904581ef70ca31d6fdd835",
        16,
    ),
    name="schnorr2048-256",
)

GROUPS = {g.name: g for g in (TEST_GROUP, MODP_2048, SCHNORR_2048_256)}


def group_by_name(name: str) -> GroupParams:
    try:
        return GROUPS[name]
    except KeyError:
        raise ValueError(f"unknown group {name!r}; expected one of {sorted(GROUPS)}") from None


class _Wildcard:
    """The distinguished ``*`` address key."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "WILDCARD"

    def __reduce__(self):
        return (_Wildcard, ())


WILDCARD = _Wildcard()

AddressKey = Union[int, _Wildcard]


def wildcard() -> _Wildcard:
    return WILDCARD


def is_wildcard(key) -> bool:
    return key is WILDCARD


# -- element / key text encoding -------------------------------------------

def encode_element(element: int) -> str:
    if element < 0:
        raise ValueError("group elements are non-negative")
    return format(element, "x")


def decode_element(text: str) -> int:
    if not text or any(ch not in "0123456789abcdef" for ch in text):
        raise ValueError(f"not a lowercase hex element: {text!r}")
    if len(text) > 1 and text[0] == "0":
        raise ValueError(f"non-minimal hex element: {text!r}")
    return int(text, 16)


def encode_key(key: AddressKey) -> str:
    if is_wildcard(key):
        return "*"
    return encode_element(key)


def decode_key(text: str, params: GroupParams | None = None) -> AddressKey:
    """Parse a public address key.  ``1`` (= g^0) is reserved for ``*``."""
    if text == "*":
        return WILDCARD
    element = decode_element(text)
    if element == 1:
        raise InvalidKey("element 1 is reserved for the wildcard")
    if params is not None:
        check_public_key(params, element)
    return element


def check_public_key(params: GroupParams, key: AddressKey) -> None:
    if is_wildcard(key):
        return
    if key == 1 or not params.in_subgroup(key):
        raise InvalidKey("address key is not a non-identity subgroup element")


# -- address keys and the proof ----------------------------------------------

def public_key(params: GroupParams, secret: int) -> int:
    if not 0 < secret < params.order:
        raise ValueError("secret exponent must lie in [1, q-1]; 0 encodes the wildcard")
    return params.exp(secret)


def keygen(params: GroupParams, rng: random.Random = SYSTEM_RNG) -> tuple[int, int]:
    secret = rng.randrange(1, params.order)
    return secret, public_key(params, secret)


@dataclass(frozen=True)
class Challenge:
    c0: int
    c1: int


def encrypt_nonce(params: GroupParams, key: int, r: int, m: int) -> Challenge:
    """ElGamal-encrypt the nonce ``m`` under ``key`` with randomness ``r``."""
    p = params.modulus
    return Challenge(c0=powmod(params.generator, r, p), c1=powmod(key, r, p) * m % p)


def make_challenge(
    params: GroupParams, key: AddressKey, rng: random.Random = SYSTEM_RNG
) -> tuple[Challenge, int]:
    """Issue a challenge for ``key``; the returned nonce stays with the issuer."""
    if is_wildcard(key):
        raise WildcardNeedsNoProof("wildcard keys grant access without a proof")
    m = params.exp(rng.randrange(params.order))
    r = rng.randrange(1, params.order)
    return encrypt_nonce(params, key, r, m), m


def solve_challenge(params: GroupParams, secret: int, challenge: Challenge) -> int:
    if not 0 < secret < params.order:
        raise ValueError("cannot answer with the wildcard exponent")
    p = params.modulus
    shared = powmod(challenge.c0, secret, p)
    return challenge.c1 * pow(shared, -1, p) % p


# -- symmetric authenticated encryption --------------------------------------

def new_content_key(rng: random.Random = SYSTEM_RNG) -> bytes:
    return rng.randbytes(CONTENT_KEY_SIZE)


def _check_content_key(key: bytes) -> None:
    if not isinstance(key, (bytes, bytearray)) or len(key) != CONTENT_KEY_SIZE:
        raise CryptoError(f"content keys are {CONTENT_KEY_SIZE} bytes")


def seal(key: bytes, plaintext: bytes, rng: random.Random = SYSTEM_RNG) -> bytes:
    _check_content_key(key)
    nonce = rng.randbytes(NONCE_SIZE)
    return nonce + AESGCM(bytes(key)).encrypt(nonce, plaintext, None)


def open_sealed(key: bytes, ciphertext: bytes) -> bytes:
    _check_content_key(key)
    if len(ciphertext) < SEAL_OVERHEAD:
        raise DecryptError("ciphertext too short")
    try:
        return AESGCM(bytes(key)).decrypt(ciphertext[:NONCE_SIZE], ciphertext[NONCE_SIZE:], None)
    except InvalidTag:
        raise DecryptError("authentication failed") from None


# -- hybrid public-key encryption --------------------------------------------

def generate_keypair(rng: random.Random = SYSTEM_RNG) -> X25519PrivateKey:
    return X25519PrivateKey.from_private_bytes(rng.randbytes(32))


def public_bytes(key: X25519PublicKey | X25519PrivateKey) -> bytes:
    if isinstance(key, X25519PrivateKey):
        key = key.public_key()
    return key.public_bytes_raw()


def private_bytes(key: X25519PrivateKey) -> bytes:
    return key.private_bytes_raw()


def load_public(data: bytes) -> X25519PublicKey:
    if len(data) != PUBLIC_KEY_SIZE:
        raise InvalidKey("X25519 public keys are 32 bytes")
    return X25519PublicKey.from_public_bytes(bytes(data))


def load_private(data: bytes) -> X25519PrivateKey:
    return X25519PrivateKey.from_private_bytes(bytes(data))


def _hybrid_key(shared: bytes, eph: bytes, recipient: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=None,
        info=b"concealed-hybrid-v1" + eph + recipient,
    ).derive(shared)


_ZERO_NONCE = bytes(NONCE_SIZE)


def hybrid_seal(recipient: X25519PublicKey | bytes, plaintext: bytes,
                rng: random.Random = SYSTEM_RNG) -> bytes:
    if isinstance(recipient, (bytes, bytearray)):
        recipient = load_public(recipient)
    eph = generate_keypair(rng)
    eph_pub = public_bytes(eph)
    key = _hybrid_key(eph.exchange(recipient), eph_pub, public_bytes(recipient))
    # Each ephemeral key encrypts exactly one message, so a fixed nonce is safe.
    return eph_pub + AESGCM(key).encrypt(_ZERO_NONCE, plaintext, eph_pub)


def hybrid_open(secret: X25519PrivateKey, ciphertext: bytes) -> bytes:
    if len(ciphertext) < HYBRID_OVERHEAD:
        raise DecryptError("ciphertext too short")
    eph_pub = bytes(ciphertext[:PUBLIC_KEY_SIZE])
    try:
        shared = secret.exchange(X25519PublicKey.from_public_bytes(eph_pub))
    except ValueError:
        raise DecryptError("invalid ephemeral key") from None
    key = _hybrid_key(shared, eph_pub, public_bytes(secret))
    try:
        return AESGCM(key).decrypt(_ZERO_NONCE, bytes(ciphertext[PUBLIC_KEY_SIZE:]), eph_pub)
    except InvalidTag:
        raise DecryptError("authentication failed") from None


# -- fingerprints -------------------------------------------------------------

@lru_cache(maxsize=None)
def wordlist() -> tuple[str, ...]:
    text = resources.files("concealed").joinpath(f"data/wordlist-{WORDLIST_VERSION}.txt").read_text()
    words = tuple(text.split())
    if len(words) != 1 << (FINGERPRINT_BITS // FINGERPRINT_WORDS):
        raise RuntimeError("corrupt wordlist")
    return words


def fingerprint(keys: Iterable[tuple[str, bytes]]) -> str:
    """Render a key set as eight words, independent of input order.

    Entries are sorted by key id; each public key is length-prefixed before
    hashing so that adjacent keys cannot trade bytes.
    """
    entries = sorted(keys, key=lambda item: item[0])
    ids = [key_id for key_id, _ in entries]
    if len(ids) != len(set(ids)):
        raise ValueError("duplicate key id in fingerprint input")
    digest = hashlib.sha256()
    for _, material in entries:
        digest.update(struct.pack(">I", len(material)))
        digest.update(bytes(material))
    bits = int.from_bytes(digest.digest()[: FINGERPRINT_BITS // 8], "big")
    per_word = FINGERPRINT_BITS // FINGERPRINT_WORDS
    words = wordlist()
    indexes = [
        (bits >> (per_word * (FINGERPRINT_WORDS - 1 - i))) & ((1 << per_word) - 1)
        for i in range(FINGERPRINT_WORDS)
    ]
    return " ".join(words[i] for i in indexes)


def key_id_for(material: bytes) -> str:
    """Stable identifier for a public key, used to order fingerprint input."""
    return hashlib.sha256(material).hexdigest()[:8]
