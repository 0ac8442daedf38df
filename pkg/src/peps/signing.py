"""Deterministic digital signatures for controllers, hosts and services.

Backed by Ed25519, which is deterministic: signing the same bytes with the
same key always yields the same signature, so simulation runs stay
byte-reproducible.  Keys are derived from an integer or byte seed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat


def _seed_bytes(seed: int | str | bytes) -> bytes:
    if isinstance(seed, int):
        seed = str(seed).encode()
    elif isinstance(seed, str):
        seed = seed.encode()
    return hashlib.sha256(b"peps-key:" + seed).digest()


@dataclass(frozen=True)
class KeyPair:
    """A signing key with its public half.

    ``public_key`` is the raw 32-byte Ed25519 public key.
    """

    public_key: bytes
    _private: Ed25519PrivateKey = field(repr=False, compare=False)

    @classmethod
    def generate(cls, seed: int | str | bytes) -> "KeyPair":
        priv = Ed25519PrivateKey.from_private_bytes(_seed_bytes(seed))
        pub = priv.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return cls(pub, priv)

    @property
    def public_hex(self) -> str:
        return self.public_key.hex()

    def sign(self, message: bytes) -> bytes:
        return self._private.sign(message)


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """Return True iff ``signature`` is valid for ``message`` under ``public_key``."""
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True
