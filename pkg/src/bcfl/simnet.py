"""Deterministic discrete-event network with seeded latency, drops and partitions.

A message's fate is settled when it is sent, from a hash of (seed, msg_id),
so adding traffic later never changes what happened to earlier messages.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field
from typing import Iterable

from .canonical import canonical_json
from .errors import TimeTravel, UnknownNode


@dataclass(frozen=True)
class Partition:
    side_a: frozenset[str]
    side_b: frozenset[str]
    from_tick: int
    to_tick: int

    def separates(self, src: str, dst: str) -> bool:
        return (src in self.side_a and dst in self.side_b) or (src in self.side_b and dst in self.side_a)

    def to_dict(self) -> dict:
        return {"a": sorted(self.side_a), "b": sorted(self.side_b), "from_tick": self.from_tick, "to_tick": self.to_tick}


@dataclass(frozen=True)
class NetworkConfig:
    seed: int = 0
    base_latency_ticks: int = 1
    jitter_ticks: int = 0
    drop_probability: float = 0.0
    partitions: tuple[Partition, ...] = ()

    def __post_init__(self):
        if not (0.0 <= self.drop_probability <= 1.0):
            raise ValueError("drop_probability must lie in [0, 1]")
        if self.base_latency_ticks < 1:
            raise ValueError("base_latency_ticks must be >= 1")
        if self.jitter_ticks < 0:
            raise ValueError("jitter_ticks must be >= 0")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "base_latency_ticks": self.base_latency_ticks,
            "jitter_ticks": self.jitter_ticks,
            "drop_probability": self.drop_probability,
            "partitions": [p.to_dict() for p in self.partitions],
        }


@dataclass(frozen=True)
class Envelope:
    msg_id: int
    src: str
    dst: str
    payload: bytes
    send_tick: int
    deliver_tick: int | None  # None means dropped

    @property
    def dropped(self) -> bool:
        return self.deliver_tick is None

    def trace_record(self) -> dict:
        return {
            "msg_id": self.msg_id,
            "src": self.src,
            "dst": self.dst,
            "send_tick": self.send_tick,
            "deliver_tick": self.deliver_tick,
            "size": len(self.payload),
        }


class Network:
    def __init__(self, config: NetworkConfig, nodes: Iterable[str] = ()):
        self.config = config
        self.nodes: set[str] = set(nodes)
        self.now = 0
        self._next_id = 0
        self._queue: list[tuple[int, int, Envelope]] = []
        self.sent = 0
        self.delivered = 0
        self.dropped = 0
        self.trace: list[Envelope] = []

    def add_node(self, node: str) -> None:
        self.nodes.add(node)

    def _fate(self, msg_id: int, src: str, dst: str) -> int | None:
        cfg = self.config
        digest = hashlib.sha256(f"simnet:{cfg.seed}:{msg_id}".encode()).digest()
        u_drop = int.from_bytes(digest[:8], "big") / 2.0**64
        jitter = int.from_bytes(digest[8:16], "big") % (cfg.jitter_ticks + 1)
        if u_drop < cfg.drop_probability:
            return None
        deliver = self.now + cfg.base_latency_ticks + jitter
        for p in cfg.partitions:
            if p.separates(src, dst) and self.now <= p.to_tick and deliver >= p.from_tick:
                return None
        return deliver

    def send(self, src: str, dst: str, payload: bytes) -> int:
        for node in (src, dst):
            if node not in self.nodes:
                raise UnknownNode(node)
        msg_id = self._next_id
        self._next_id += 1
        env = Envelope(msg_id, src, dst, bytes(payload), self.now, self._fate(msg_id, src, dst))
        self.sent += 1
        self.trace.append(env)
        if env.dropped:
            self.dropped += 1
        else:
            heapq.heappush(self._queue, (env.deliver_tick, msg_id, env))
        return msg_id

    def step(self) -> list[tuple[str, bytes]]:
        """Advance one tick and return (dst, payload) pairs due now, by msg_id."""
        self.now += 1
        return [(env.dst, env.payload) for env in self._pop_due()]

    def step_envelopes(self) -> list[Envelope]:
        self.now += 1
        return self._pop_due()

    def _pop_due(self) -> list[Envelope]:
        out = []
        while self._queue and self._queue[0][0] <= self.now:
            out.append(heapq.heappop(self._queue)[2])
        self.delivered += len(out)
        return out

    def run_until(self, tick: int) -> list[tuple[int, list[tuple[str, bytes]]]]:
        if tick < self.now:
            raise TimeTravel(f"cannot run back to tick {tick} from {self.now}")
        out = []
        while self.now < tick:
            batch = self.step()
            if batch:
                out.append((self.now, batch))
        return out

    @property
    def in_flight(self) -> int:
        return len(self._queue)

    def trace_lines(self) -> bytes:
        return b"".join(canonical_json(e.trace_record()) + b"\n" for e in self.trace)
