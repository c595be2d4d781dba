"""Public key server: Ed25519 key derivation, signing and a participant registry."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from .errors import DuplicateParticipant, UnknownParticipant

_RAW = dict(encoding=serialization.Encoding.Raw, format=serialization.PublicFormat.Raw)


class Role(enum.Enum):
    AUTHORITY = "Authority"
    MINER = "Miner"
    DEVICE = "Device"
    COORDINATOR = "Coordinator"


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    secret_key: bytes  # the 32-byte Ed25519 seed


@dataclass(frozen=True)
class ParticipantRecord:
    participant_id: str
    role: Role
    public_key: bytes
    registered_at: int = 0


def generate_keypair(seed: bytes) -> KeyPair:
    if len(seed) != 32:
        raise ValueError("Ed25519 seeds are exactly 32 bytes")
    sk = Ed25519PrivateKey.from_private_bytes(bytes(seed))
    return KeyPair(sk.public_key().public_bytes(**_RAW), bytes(seed))


def derive_seed(global_seed: int, participant_id: str) -> bytes:
    """Per-participant key seed, so a scenario seed fixes every identity."""
    return hashlib.sha256(f"bcfl-key:{global_seed}:{participant_id}".encode()).digest()


@lru_cache(maxsize=4096)
def _signer(secret: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(secret)


def sign(message: bytes, secret: bytes) -> bytes:
    return _signer(bytes(secret)).sign(bytes(message))


@lru_cache(maxsize=65536)
def verify(message: bytes, signature: bytes, public: bytes) -> bool:
    # Pure in its arguments, so caching verified triples is safe; integrity
    # audits re-check the same untouched blocks many times.
    if len(signature) != 64 or len(public) != 32:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


class KeyServer:
    """Append-only registry of participant public keys."""

    def __init__(self):
        self._records: dict[str, ParticipantRecord] = {}

    def register(self, record: ParticipantRecord) -> None:
        if record.participant_id in self._records:
            raise DuplicateParticipant(record.participant_id)
        self._records[record.participant_id] = record

    def lookup(self, participant_id: str) -> bytes:
        try:
            return self._records[participant_id].public_key
        except KeyError:
            raise UnknownParticipant(participant_id) from None

    def record(self, participant_id: str) -> ParticipantRecord:
        try:
            return self._records[participant_id]
        except KeyError:
            raise UnknownParticipant(participant_id) from None

    def __contains__(self, participant_id: str) -> bool:
        return participant_id in self._records

    def participants(self) -> list[ParticipantRecord]:
        return [self._records[k] for k in sorted(self._records)]

    def verify_from(self, participant_id: str, message: bytes, signature: bytes) -> bool:
        if participant_id not in self._records:
            return False
        return verify(bytes(message), bytes(signature), self._records[participant_id].public_key)


@dataclass(frozen=True)
class Identity:
    """A participant together with its secret; what an actor signs with."""

    participant_id: str
    keys: KeyPair

    def sign(self, message: bytes) -> bytes:
        return sign(message, self.keys.secret_key)


def enroll(server: KeyServer, participant_id: str, role: Role, global_seed: int, tick: int = 0) -> Identity:
    keys = generate_keypair(derive_seed(global_seed, participant_id))
    server.register(ParticipantRecord(participant_id, role, keys.public_key, tick))
    return Identity(participant_id, keys)
