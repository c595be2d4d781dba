"""Smart-contract registry and the deep-content-inspection (DCI) gate.

A contract binds (sender, receiver, stream id) to a routed channel. Streams
reaching the channel are scored by the anomaly detector: normal traffic gets
a session and a stream-transfer record, abnormal traffic is hidden from the
receiver and an alert transaction is written instead.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Mapping

from . import ml
from .errors import DuplicateContract, LedgerRejected, ModelUnavailable
from .keys import Identity
from .ledger import Kind, LedgerInstance, Status, Transaction, make_transaction, submit_routed
from .ml import ModelParameters, Threshold, Verdict
from .traffic import DataStream, NormalizerStats, extract_features, normalize

CONTRACT_ASSET = "contract"
STREAM_ASSET = "stream"
ALERT_ASSET = "alert"
MODEL_ASSET = "model"

# threshold_ref value meaning "use the threshold published with the model"
MODEL_THRESHOLD = "model"


@dataclass(frozen=True)
class SmartContract:
    contract_id: int
    stream_ids: frozenset[int]
    route_id: int
    senders: frozenset[str] | None = None  # None matches any account
    receivers: frozenset[str] | None = None
    model_ref: int | str = "latest"
    threshold_ref: Threshold | str = MODEL_THRESHOLD

    def __post_init__(self):
        if self.contract_id <= 0:
            raise ValueError("contract_id must be positive")
        if self.route_id <= 0:
            raise ValueError("route_id must be positive")
        object.__setattr__(self, "stream_ids", frozenset(self.stream_ids))
        for name in ("senders", "receivers"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, frozenset(v))
        if isinstance(self.model_ref, str) and self.model_ref != "latest":
            raise ValueError("model_ref must be a version number or 'latest'")
        if isinstance(self.threshold_ref, str) and self.threshold_ref != MODEL_THRESHOLD:
            raise ValueError("threshold_ref must be a Threshold or 'model'")

    def matches(self, stream: DataStream) -> bool:
        return (
            stream.stream_id in self.stream_ids
            and (self.senders is None or stream.sender.account_id in self.senders)
            and (self.receivers is None or stream.receiver.account_id in self.receivers)
        )

    def to_payload(self) -> dict:
        return {
            "kind": Kind.CONTRACT_REGISTRATION,
            "contract_id": self.contract_id,
            "stream_ids": sorted(self.stream_ids),
            "route_id": self.route_id,
            "senders": None if self.senders is None else sorted(self.senders),
            "receivers": None if self.receivers is None else sorted(self.receivers),
            "model_ref": self.model_ref,
            "threshold_ref": self.threshold_ref.to_dict()
            if isinstance(self.threshold_ref, Threshold)
            else self.threshold_ref,
            "actions": {"on_normal": "EstablishSession", "on_abnormal": "HideAndAlert"},
        }

    @classmethod
    def from_payload(cls, p: dict) -> "SmartContract":
        t = p["threshold_ref"]
        return cls(
            contract_id=int(p["contract_id"]),
            stream_ids=frozenset(p["stream_ids"]),
            route_id=int(p["route_id"]),
            senders=None if p["senders"] is None else frozenset(p["senders"]),
            receivers=None if p["receivers"] is None else frozenset(p["receivers"]),
            model_ref=p["model_ref"],
            threshold_ref=Threshold.from_dict(t) if isinstance(t, dict) else t,
        )


class Registry:
    """Contracts keyed by id, rebuilt from chain state on demand."""

    def __init__(self, contracts=()):
        self.contracts: dict[int, SmartContract] = {}
        for c in contracts:
            self.contracts[c.contract_id] = c

    @classmethod
    def from_ledger(cls, instance: LedgerInstance) -> "Registry":
        txs = instance.query(kind=Kind.CONTRACT_REGISTRATION)
        txs += [t for t in instance.pending if t.kind == Kind.CONTRACT_REGISTRATION]
        return cls(SmartContract.from_payload(t.payload) for t in txs)

    def __contains__(self, contract_id: int) -> bool:
        return contract_id in self.contracts

    def __len__(self) -> int:
        return len(self.contracts)

    def __eq__(self, other):
        return isinstance(other, Registry) and self.contracts == other.contracts


def register_contract(instance: LedgerInstance, contract: SmartContract, issuer: Identity) -> Transaction:
    if contract.contract_id in Registry.from_ledger(instance):
        raise DuplicateContract(contract.contract_id)
    tx = make_transaction(CONTRACT_ASSET, contract.to_payload(), issuer)
    result = instance.submit(tx)
    if not result.accepted:
        raise LedgerRejected(result.reason or str(result.status))
    return tx


def match_contract(registry: Registry, stream: DataStream) -> SmartContract | None:
    """Lowest-id contract matching the stream, or None."""
    for cid in sorted(registry.contracts):
        if registry.contracts[cid].matches(stream):
            return registry.contracts[cid]
    return None


def route(contract: SmartContract, stream: DataStream | None = None) -> int:
    return contract.route_id


class Decision(enum.Enum):
    SESSION_ESTABLISHED = "SessionEstablished"
    HIDDEN_WITH_ALERT = "HiddenWithAlert"


@dataclass(frozen=True)
class ContractOutcome:
    decision: Decision
    rmse: float
    model_version: int
    tick: int
    contract_id: int
    stream_id: int
    session_id: int | None = None
    alert_tx: bytes | None = None
    record_tx: bytes = b""

    def to_dict(self) -> dict:
        return {
            "decision": self.decision.value,
            "rmse": self.rmse,
            "model_version": self.model_version,
            "tick": self.tick,
            "contract_id": self.contract_id,
            "stream_id": self.stream_id,
            "session_id": self.session_id,
            "alert_tx": None if self.alert_tx is None else self.alert_tx.hex(),
            "record_tx": self.record_tx.hex(),
        }


def latest_publication(instance: LedgerInstance) -> Transaction | None:
    pubs = instance.query(kind=Kind.MODEL_PUBLISH)
    if not pubs:
        return None
    return max(pubs, key=lambda t: t.payload["version"])


class DCIEngine:
    """The routed channel that runs the DCI gate for one route id.

    Executions are serialized through this object. Ledger writes enter at
    ``entry`` and follow forwarding to whichever authority issues the asset.
    """

    def __init__(
        self,
        route_id: int,
        identity: Identity,
        ledgers: Mapping[str, LedgerInstance],
        entry: str,
        model_store: Mapping[bytes, ModelParameters],
        normalizer: NormalizerStats,
        deliver: Callable[[str, int, DataStream], None] | None = None,
    ):
        self.route_id = route_id
        self.identity = identity
        self.ledgers = ledgers
        self.entry = entry
        self.model_store = model_store
        self.normalizer = normalizer
        self.deliver = deliver
        self.next_session = 1
        self.trace: list[dict] = []
        self.delivered: dict[str, list[int]] = {}

    def resolve(self, contract: SmartContract) -> tuple[ModelParameters, Threshold]:
        pubs = self.ledgers[self.entry].query(kind=Kind.MODEL_PUBLISH)
        if contract.model_ref == "latest":
            pub = max(pubs, key=lambda t: t.payload["version"]) if pubs else None
        else:
            pub = next((t for t in pubs if t.payload["version"] == contract.model_ref), None)
        if pub is None:
            raise ModelUnavailable(f"no published model for ref {contract.model_ref!r}")
        model = self.model_store.get(bytes.fromhex(pub.payload["param_hash"]))
        if model is None:
            raise ModelUnavailable(f"model {pub.payload['param_hash'][:12]} not in store")
        if isinstance(contract.threshold_ref, Threshold):
            return model, contract.threshold_ref
        return model, Threshold.from_dict(pub.payload["threshold"])

    def _write(self, asset: str, payload: dict) -> Transaction:
        tx = make_transaction(asset, payload, self.identity)
        result, _ = submit_routed(self.ledgers, self.entry, tx)
        if result.status is not Status.ACCEPTED:
            raise LedgerRejected(result.reason or str(result.status))
        return tx

    def execute(self, contract: SmartContract, stream: DataStream, tick: int = 0) -> ContractOutcome:
        model, threshold = self.resolve(contract)
        return self.execute_with(contract, stream, model, threshold, tick)

    def execute_with(
        self, contract: SmartContract, stream: DataStream, model: ModelParameters | None, threshold: Threshold, tick: int = 0
    ) -> ContractOutcome:
        if model is None:
            raise ModelUnavailable("no model at the routed channel")
        channel = route(contract, stream)
        self.trace.append({"step": "match", "stream_id": stream.stream_id, "contract_id": contract.contract_id})
        self.trace.append({"step": "route", "contract_id": contract.contract_id, "route_id": channel})
        vec = normalize(extract_features(stream.flow), self.normalizer)
        s = ml.score(model, vec)
        verdict = ml.classify(s, threshold)
        if verdict is Verdict.NORMAL:
            session_id = self.next_session
            self.next_session += 1
            tx = self._write(
                STREAM_ASSET,
                {
                    "kind": Kind.STREAM_TRANSFER,
                    "contract_id": contract.contract_id,
                    "route_id": channel,
                    "session_id": session_id,
                    "rmse": s.rmse,
                    "model_version": model.version,
                    "stream": stream.summary(),
                    "tick": tick,
                },
            )
            self.delivered.setdefault(stream.receiver.account_id, []).append(session_id)
            if self.deliver is not None:
                self.deliver(stream.receiver.account_id, session_id, stream)
            outcome = ContractOutcome(
                Decision.SESSION_ESTABLISHED, s.rmse, model.version, tick, contract.contract_id, stream.stream_id,
                session_id=session_id, record_tx=tx.tx_id,
            )
        else:
            tx = self._write(
                ALERT_ASSET,
                {
                    "kind": Kind.ALERT,
                    "stream_id": stream.stream_id,
                    "rmse": s.rmse,
                    "contract_id": contract.contract_id,
                    "model_version": model.version,
                    "tick": tick,
                },
            )
            outcome = ContractOutcome(
                Decision.HIDDEN_WITH_ALERT, s.rmse, model.version, tick, contract.contract_id, stream.stream_id,
                alert_tx=tx.tx_id, record_tx=tx.tx_id,
            )
        self.trace.append({"step": "outcome", **outcome.to_dict()})
        return outcome


def execute_dci(
    contract: SmartContract,
    stream: DataStream,
    model: ModelParameters | None,
    normalizer: NormalizerStats,
    ledger_instance: LedgerInstance,
    identity: Identity,
    threshold: Threshold | None = None,
    tick: int = 0,
) -> ContractOutcome:
    """One-shot DCI gate against a single ledger instance.

    ``threshold`` defaults to the contract's own threshold_ref, which must then
    be a concrete Threshold.
    """
    if threshold is None:
        if not isinstance(contract.threshold_ref, Threshold):
            raise ValueError("contract defers its threshold to the model; pass one explicitly")
        threshold = contract.threshold_ref
    engine = DCIEngine(contract.route_id, identity, {ledger_instance.authority_id: ledger_instance},
                       ledger_instance.authority_id, {}, normalizer)
    return engine.execute_with(contract, stream, model, threshold, tick)
