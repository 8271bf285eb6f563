"""Ed25519 keys, SHA-256 digests and per-counterparty key rotation."""
from __future__ import annotations

import hashlib
import os
import random
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

PK_LEN = 32
SK_LEN = 32
SIG_LEN = 64
HASH_LEN = 32
KEYFILE_VERSION = 1

# Plain bytes keep transactions hashable and trivially serializable.
PublicKey = bytes
SecretKey = bytes
Signature = bytes
Hash256 = bytes


def digest(msg: bytes) -> Hash256:
    return hashlib.sha256(msg).digest()


def _public_from_secret(sk: SecretKey) -> PublicKey:
    return Ed25519PrivateKey.from_private_bytes(sk).public_key().public_bytes(
        Encoding.Raw, PublicFormat.Raw
    )


def generate_keypair(seed: bytes | None = None) -> tuple[PublicKey, SecretKey]:
    """Return ``(pk, sk)``; ``seed`` (32 bytes) makes the pair reproducible."""
    if seed is None:
        seed = os.urandom(SK_LEN)
    if len(seed) != SK_LEN:
        raise ValueError("Ed25519 seed must be 32 bytes")
    return _public_from_secret(seed), seed


def sign(sk: SecretKey, msg: bytes) -> Signature:
    return Ed25519PrivateKey.from_private_bytes(sk).sign(msg)


@lru_cache(maxsize=1 << 16)
def verify(pk: PublicKey, msg: bytes, sig: Signature) -> bool:
    """True iff ``sig`` is a valid signature of ``msg`` under ``pk``.

    Malformed keys or signatures yield False rather than raising.
    """
    if len(pk) != PK_LEN or len(sig) != SIG_LEN:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(pk).verify(sig, msg)
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass(frozen=True)
class KeyPair:
    pk: PublicKey
    sk: SecretKey = field(repr=False)

    @classmethod
    def generate(cls, rng: random.Random | None = None) -> "KeyPair":
        seed = rng.randbytes(SK_LEN) if rng is not None else None
        return cls(*generate_keypair(seed))

    def sign(self, msg: bytes) -> Signature:
        return sign(self.sk, msg)


@dataclass
class KeyRing:
    """One keypair per counterparty context.

    Repeat lookups for a context return the same key so the counterparty can
    recognise the owner; distinct contexts never share a key.
    """

    owner_label: str
    rng: random.Random | None = field(default=None, repr=False)
    keys: dict[str, KeyPair] = field(default_factory=dict, repr=False)
    generation: int = 0

    def keypair(self, context: str) -> KeyPair:
        kp = self.keys.get(context)
        if kp is None:
            kp = KeyPair.generate(self.rng)
            # Seeded rings could in principle repeat; never hand out a key twice.
            while any(other.pk == kp.pk for other in self.keys.values()):
                kp = KeyPair.generate(self.rng)
            self.keys[context] = kp
            self.generation += 1
        return kp

    def secret_for(self, pk: PublicKey) -> KeyPair | None:
        for kp in self.keys.values():
            if kp.pk == pk:
                return kp
        return None

    def public_keys(self) -> dict[str, str]:
        return {ctx: kp.pk.hex() for ctx, kp in self.keys.items()}

    def to_json(self) -> dict:
        """Public view only; secret keys are never serialized from a ring."""
        return {
            "owner_label": self.owner_label,
            "generation": self.generation,
            "keys": self.public_keys(),
        }


def fresh_pk(ring: KeyRing, context: str) -> PublicKey:
    return ring.keypair(context).pk


def save_key(path: str | Path, key: bytes, secret: bool = False) -> Path:
    """Write ``version byte || key bytes``; secret files are chmod 0600."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600 if secret else 0o644)
    with os.fdopen(fd, "wb") as fh:
        fh.write(bytes([KEYFILE_VERSION]) + key)
    if secret:
        try:
            os.chmod(path, 0o600)
        except OSError:
            pass
    return path


def load_key(path: str | Path) -> bytes:
    raw = Path(path).read_bytes()
    if len(raw) != 1 + 32 or raw[0] != KEYFILE_VERSION:
        raise ValueError(f"{path}: not a version-{KEYFILE_VERSION} key file")
    return raw[1:]
