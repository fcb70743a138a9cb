import os
import random

import pytest
from hypothesis import given, strategies as st

from coopstake.crypto import (
    AddressCollision,
    KeyDirectory,
    Signature,
    address_of,
    hash_bytes,
    keygen,
    sign,
    verify,
)
from conftest import GOLDEN


def test_hash_empty_matches_golden():
    with open(os.path.join(GOLDEN, "hash_empty.txt")) as fh:
        assert hash_bytes(b"").hex() == fh.read().strip()


@given(st.binary(max_size=512))
def test_hash_deterministic_and_32_bytes(m):
    assert hash_bytes(m) == hash_bytes(m)
    assert len(hash_bytes(m)) == 32


def test_single_bit_flips_change_digest():
    rng = random.Random(7)
    for _ in range(1000):
        m = bytearray(rng.randbytes(rng.randint(1, 200)))
        before = hash_bytes(bytes(m))
        bit = rng.randrange(len(m) * 8)
        m[bit // 8] ^= 1 << (bit % 8)
        assert hash_bytes(bytes(m)) != before


@pytest.mark.parametrize("scheme", ["ed25519", "fast"])
def test_keygen_deterministic(scheme):
    s = bytes(range(32))
    a, b = keygen(s, scheme), keygen(s, scheme)
    assert a == b
    assert a.address == address_of(a.public_key)
    assert len(a.address) == 40


def test_no_address_collisions_over_10k_seeds():
    rng = random.Random(2024)
    directory = KeyDirectory("fast")
    seen = set()
    for _ in range(10_000):
        k = keygen(rng.randbytes(32), "fast")
        directory.register(k)
        seen.add(k.address)
    assert len(seen) == 10_000


def test_registering_conflicting_key_for_address_fails():
    d = KeyDirectory("fast")
    k = keygen(b"\x01" * 32, "fast")
    d.register(k)
    forged = type(k)(b"\x00" * 32, k.private_key, k.address, "fast")
    with pytest.raises(AddressCollision):
        d.register(forged)


def test_bad_seed_length():
    with pytest.raises(ValueError):
        keygen(b"short")


@pytest.mark.parametrize("scheme", ["ed25519", "fast"])
def test_sign_verify_round_trip_and_key_mismatch(scheme):
    a, b = keygen(b"\x05" * 32, scheme), keygen(b"\x06" * 32, scheme)
    sig = sign(a, b"pay bob")
    assert verify(a.public_key, b"pay bob", sig, scheme)
    assert not verify(b.public_key, b"pay bob", sig, scheme)
    # wrong signer label also fails
    assert not verify(a.public_key, b"pay bob", Signature(sig.value, b.address), scheme)


@pytest.mark.parametrize("scheme", ["ed25519", "fast"])
def test_single_byte_perturbation_falsifies(scheme):
    rng = random.Random(99)
    key = keygen(rng.randbytes(32), scheme)
    for _ in range(1000):
        m = bytearray(rng.randbytes(rng.randint(1, 64)))
        sig = sign(key, bytes(m))
        i = rng.randrange(len(m))
        m[i] = (m[i] + rng.randint(1, 255)) % 256
        assert not verify(key.public_key, bytes(m), sig, scheme)


def test_verify_never_raises_on_garbage():
    k = keygen(b"\x09" * 32)
    assert not verify(b"\x00" * 5, b"m", Signature(b"junk", address_of(b"\x00" * 5)))
    assert not verify(k.public_key, b"m", Signature(b"", k.address))
