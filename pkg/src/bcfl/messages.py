"""The closed set of message types that travel over the simulated network.

Only these types are ever encoded into simnet payloads. None of them has a
field that can hold flow records or feature vectors: training data stays on
the device that owns it.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass

from .canonical import canonical_json


@dataclass(frozen=True)
class RoundAnnouncement:
    round_id: int
    base_version: int
    deadline_tick: int
    model_hex: str  # canonical model encoding of the current global model


@dataclass(frozen=True)
class ModelUpdateMessage:
    round_id: int
    miner_id: str
    base_version: int
    model_hex: str
    sample_count: int
    local_loss: float
    signature: str


@dataclass(frozen=True)
class SessionNotice:
    session_id: int
    stream_id: int
    sender: str
    size_kb: float


@dataclass(frozen=True)
class SyncRequest:
    requester: str
    target: str


MESSAGE_TYPES: dict[str, type] = {
    cls.__name__: cls for cls in (RoundAnnouncement, ModelUpdateMessage, SessionNotice, SyncRequest)
}


def encode(msg) -> bytes:
    name = type(msg).__name__
    if MESSAGE_TYPES.get(name) is not type(msg):
        raise TypeError(f"{name} is not a network message type")
    return canonical_json({"type": name, "body": dataclasses.asdict(msg)})


def decode(data: bytes):
    d = json.loads(data)
    cls = MESSAGE_TYPES[d["type"]]
    return cls(**d["body"])


def field_types(cls) -> dict[str, typing.Any]:
    return typing.get_type_hints(cls)
