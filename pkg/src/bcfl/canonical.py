"""Canonical JSON encoding and content hashing.

Canonical form: keys sorted, no insignificant whitespace, floats as the
shortest round-trip decimal (Python ``repr``), byte strings as lowercase hex.
Every hash and signature in the package is taken over these bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
from typing import Any

ZERO_HASH = bytes(32)


def canonical_hash(data: bytes) -> bytes:
    """SHA-256 digest of ``data``."""
    return hashlib.sha256(data).digest()


def _prepare(obj: Any) -> Any:
    t = type(obj)
    if t is str or t is int or t is bool or obj is None:
        return obj
    if t is dict:
        return {str(k): _prepare(v) for k, v in obj.items()}
    if isinstance(obj, (bytes, bytearray)):
        return bytes(obj).hex()
    if isinstance(obj, dict):
        return {str(k): _prepare(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_prepare(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        raise ValueError(f"non-finite number {obj!r} has no canonical form")
    return obj


def canonical_json(obj: Any) -> bytes:
    return json.dumps(
        _prepare(obj),
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    ).encode("utf-8")


def loads(data: bytes | str) -> Any:
    return json.loads(data)
