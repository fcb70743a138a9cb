"""Hashing, signatures and node identities.

Two signature schemes are available behind one small interface: ``ed25519``
(the default, backed by ``cryptography``) and ``fast``, a deterministic test
double that keeps large simulation batches cheap. Protocol code never depends
on which one is active, only on the ``sign``/``verify`` contract.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

Digest = bytes
Address = str

DIGEST_SIZE = 32
ADDRESS_BYTES = 20
DEFAULT_SCHEME = "ed25519"


def hash_bytes(message: bytes) -> Digest:
    """SHA-256 of ``message``; always 32 bytes."""
    return hashlib.sha256(message).digest()


def address_of(public_key: bytes) -> Address:
    return hash_bytes(public_key)[:ADDRESS_BYTES].hex()


class AddressCollision(Exception):
    pass


class SignatureScheme:
    name = ""

    def keypair_from_seed(self, seed: bytes) -> tuple[bytes, bytes]:
        raise NotImplementedError

    def sign(self, private_key: bytes, message: bytes) -> bytes:
        raise NotImplementedError

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        raise NotImplementedError


class Ed25519Scheme(SignatureScheme):
    name = "ed25519"

    def keypair_from_seed(self, seed):
        sk = Ed25519PrivateKey.from_private_bytes(seed)
        pk = sk.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return seed, pk

    def sign(self, private_key, message):
        return _ed_private(private_key).sign(message)

    def verify(self, public_key, message, signature):
        return _ed_verify(public_key, message, signature)


@lru_cache(maxsize=4096)
def _ed_private(private_key: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(private_key)


@lru_cache(maxsize=4096)
def _ed_public(public_key: bytes) -> Ed25519PublicKey | None:
    try:
        return Ed25519PublicKey.from_public_bytes(public_key)
    except ValueError:
        return None


# verification is a pure function of its arguments, so results are memoized;
# simulated nodes re-check the same votes and authenticators many times
@lru_cache(maxsize=1 << 16)
def _ed_verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    pk = _ed_public(public_key)
    if pk is None:
        return False
    try:
        pk.verify(signature, message)
    except InvalidSignature:
        return False
    return True


class FastScheme(SignatureScheme):
    """Deterministic stand-in: the "signature" is a keyed digest.

    Not unforgeable; only meant for tests and large randomized batches.
    """

    name = "fast"

    def keypair_from_seed(self, seed):
        return seed, hash_bytes(b"fast-pub" + seed)

    def sign(self, private_key, message):
        pub = hash_bytes(b"fast-pub" + private_key)
        return hash_bytes(b"fast-sig" + pub + message)

    def verify(self, public_key, message, signature):
        return hash_bytes(b"fast-sig" + public_key + message) == signature


SCHEMES: dict[str, SignatureScheme] = {
    s.name: s for s in (Ed25519Scheme(), FastScheme())
}


def get_scheme(name: str) -> SignatureScheme:
    try:
        return SCHEMES[name]
    except KeyError:
        raise ValueError(f"unknown signature scheme {name!r}") from None


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes
    address: Address
    scheme: str = DEFAULT_SCHEME

    def __repr__(self) -> str:
        return f"KeyPair(address={self.address!r}, scheme={self.scheme!r})"


@dataclass(frozen=True)
class Signature:
    value: bytes
    signer: Address

    def to_json(self) -> dict:
        return {"value": self.value.hex(), "signer": self.signer}

    @classmethod
    def from_json(cls, d: dict) -> "Signature":
        return cls(bytes.fromhex(d["value"]), d["signer"])


def keygen(seed: bytes, scheme: str = DEFAULT_SCHEME) -> KeyPair:
    if len(seed) != 32:
        raise ValueError("seed must be 32 bytes")
    priv, pub = get_scheme(scheme).keypair_from_seed(seed)
    return KeyPair(pub, priv, address_of(pub), scheme)


def sign(key: KeyPair, message: bytes) -> Signature:
    return Signature(get_scheme(key.scheme).sign(key.private_key, message), key.address)


def verify(
    public_key: bytes,
    message: bytes,
    signature: Signature,
    scheme: str = DEFAULT_SCHEME,
) -> bool:
    """True iff ``signature`` is valid for ``message`` under ``public_key``.

    Never raises on bad input; a signer address that does not belong to the
    key is also a failure.
    """
    if signature.signer != address_of(public_key):
        return False
    return get_scheme(scheme).verify(public_key, message, signature.value)


class KeyDirectory:
    """Address -> public key lookup shared by every simulated node."""

    def __init__(self, scheme: str = DEFAULT_SCHEME):
        self.scheme = scheme
        self._keys: dict[Address, bytes] = {}

    def register(self, key: KeyPair) -> None:
        known = self._keys.get(key.address)
        if known is not None and known != key.public_key:
            raise AddressCollision(key.address)
        self._keys[key.address] = key.public_key

    def public_key(self, address: Address) -> bytes | None:
        return self._keys.get(address)

    def __contains__(self, address: object) -> bool:
        return address in self._keys

    def verify(self, message: bytes, signature: Signature) -> bool:
        pk = self._keys.get(signature.signer)
        if pk is None:
            return False
        return verify(pk, message, signature, self.scheme)
