"""Federated learning coordinator and miner agents.

Rounds run announce -> local training -> selection -> weighted averaging ->
on-chain publication. Miners only ever send signed model updates; their
training shards never leave them.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import messages, ml
from .canonical import canonical_json
from .errors import (
    EmptyDataset,
    IncompatibleTopology,
    InsufficientParticipation,
    LedgerRejected,
    MixedBaseVersion,
    NoOpenRound,
    RoundInProgress,
)
from .keys import Identity, KeyServer
from .ledger import Kind, LedgerInstance, Status, Transaction, make_transaction, submit_routed
from .ml import ModelParameters, Threshold, TrainingConfig
from .simnet import Network
from .traffic import FeatureVector

MODEL_ASSET = "model"


class SelectionPolicy(enum.Enum):
    ALL = "All"
    FRESH_ONLY = "FreshOnly"


@dataclass(frozen=True)
class RoundConfig:
    round_id: int
    min_participants: int = 1
    deadline_ticks: int = 10
    selection_policy: SelectionPolicy = SelectionPolicy.FRESH_ONLY
    quantile_for_threshold: float = 0.95

    def __post_init__(self):
        if self.min_participants < 1:
            raise ValueError("min_participants must be >= 1")
        if self.deadline_ticks <= 0:
            raise ValueError("deadline_ticks must be positive")
        if not (0.0 < self.quantile_for_threshold < 1.0):
            raise ValueError("quantile_for_threshold must lie in (0, 1)")


@dataclass(frozen=True)
class ModelUpdate:
    miner_id: str
    base_version: int
    params: ModelParameters
    sample_count: int
    local_loss: float
    signature: bytes

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.params.version != self.base_version + 1:
            raise ValueError("update version must be base_version + 1")

    def signing_bytes(self) -> bytes:
        return update_signing_bytes(self.miner_id, self.base_version, self.params, self.sample_count, self.local_loss)

    def to_message(self, round_id: int) -> messages.ModelUpdateMessage:
        return messages.ModelUpdateMessage(
            round_id=round_id,
            miner_id=self.miner_id,
            base_version=self.base_version,
            model_hex=ml.serialize(self.params).hex(),
            sample_count=self.sample_count,
            local_loss=self.local_loss,
            signature=self.signature.hex(),
        )

    @classmethod
    def from_message(cls, msg: messages.ModelUpdateMessage) -> "ModelUpdate":
        return cls(
            miner_id=msg.miner_id,
            base_version=msg.base_version,
            params=ml.deserialize(bytes.fromhex(msg.model_hex)),
            sample_count=msg.sample_count,
            local_loss=msg.local_loss,
            signature=bytes.fromhex(msg.signature),
        )


def update_signing_bytes(miner_id, base_version, params, sample_count, local_loss) -> bytes:
    return canonical_json(
        {
            "miner_id": miner_id,
            "base_version": base_version,
            "param_hash": params.param_hash,
            "sample_count": sample_count,
            "local_loss": float(local_loss),
        }
    )


@dataclass(frozen=True)
class GlobalModel:
    params: ModelParameters
    round_id: int
    contributor_ids: tuple[str, ...]
    publish_tx: bytes
    threshold: Threshold


@dataclass
class Miner:
    identity: Identity
    shard: list[FeatureVector] = field(repr=False)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    last_round: int = 0

    @property
    def miner_id(self) -> str:
        return self.identity.participant_id


def miner_train(miner: Miner, global_model: GlobalModel | ModelParameters, config: TrainingConfig | None = None) -> ModelUpdate:
    """Download the global model, train on the local shard and sign the result."""
    params = global_model.params if isinstance(global_model, GlobalModel) else global_model
    if not miner.shard:
        raise EmptyDataset(f"miner {miner.miner_id} has no local data")
    new, n, final_loss = ml.train_local(params, miner.shard, config or miner.training)
    body = update_signing_bytes(miner.miner_id, params.version, new, n, final_loss)
    return ModelUpdate(miner.miner_id, params.version, new, n, final_loss, miner.identity.sign(body))


def select_updates(
    updates: Sequence[ModelUpdate],
    config: RoundConfig,
    keyserver: KeyServer,
    current_version: int,
    arrival_ticks: Sequence[int] | None = None,
    opened_at: int = 0,
) -> list[ModelUpdate]:
    """Filter on signature, freshness and deadline; result is sorted by miner_id.

    Only a miner's first valid update counts.
    """
    deadline = opened_at + config.deadline_ticks
    seen: dict[str, ModelUpdate] = {}
    for k, u in enumerate(updates):
        if not keyserver.verify_from(u.miner_id, u.signing_bytes(), u.signature):
            continue
        if config.selection_policy is SelectionPolicy.FRESH_ONLY and u.base_version != current_version:
            continue
        if arrival_ticks is not None and arrival_ticks[k] > deadline:
            continue
        seen.setdefault(u.miner_id, u)
    if len(seen) < config.min_participants:
        raise InsufficientParticipation(len(seen), config.min_participants)
    return [seen[m] for m in sorted(seen)]


def aggregate(accepted: Sequence[ModelUpdate]) -> ModelParameters:
    """Sample-count weighted mean of the full weight vectors."""
    if not accepted:
        raise EmptyDataset("nothing to aggregate")
    shapes = accepted[0].params.layer_shapes
    base = accepted[0].base_version
    for u in accepted:
        if u.params.layer_shapes != shapes:
            raise IncompatibleTopology(f"{u.miner_id} has topology {u.params.layer_shapes}")
        if u.base_version != base:
            raise MixedBaseVersion(f"{u.miner_id} trained from version {u.base_version}, expected {base}")
    ordered = sorted(accepted, key=lambda u: u.miner_id)
    total = sum(u.sample_count for u in ordered)
    w = np.zeros_like(ordered[0].params.weights)
    for u in ordered:
        w = w + (u.sample_count / total) * u.params.weights
    return ModelParameters(shapes, w, base + 1)


@dataclass(frozen=True)
class RoundRecord:
    round_id: int
    status: str  # "published" or "void"
    participants: tuple[str, ...]
    received: int
    model_version: int
    validation_loss: float
    open_tick: int
    close_tick: int

    def to_dict(self) -> dict:
        return {
            "round_id": self.round_id,
            "status": self.status,
            "participants": list(self.participants),
            "received": self.received,
            "model_version": self.model_version,
            "validation_loss": self.validation_loss,
            "open_tick": self.open_tick,
            "close_tick": self.close_tick,
        }


class Coordinator:
    """The federated-learning server: a privileged chain participant.

    Every round action is recorded as a transaction under the model asset.
    Its validation set is used for threshold calibration and loss tracking
    and is never transmitted.
    """

    def __init__(
        self,
        identity: Identity,
        keyserver: KeyServer,
        ledgers: Mapping[str, LedgerInstance],
        entry: str,
        validation: Sequence[FeatureVector],
    ):
        self.identity = identity
        self.keyserver = keyserver
        self.ledgers = ledgers
        self.entry = entry
        self.validation = list(validation)
        self.model_store: dict[bytes, ModelParameters] = {}
        self.current: GlobalModel | None = None
        self.open_round: RoundConfig | None = None
        self.opened_at = 0
        self.last_round_id = 0
        self.history: list[RoundRecord] = []

    @property
    def coordinator_id(self) -> str:
        return self.identity.participant_id

    def _write(self, payload: dict) -> Transaction:
        tx = make_transaction(MODEL_ASSET, payload, self.identity)
        result, _ = submit_routed(self.ledgers, self.entry, tx)
        if result.status is not Status.ACCEPTED:
            raise LedgerRejected(result.reason or str(result.status))
        return tx

    def validation_loss(self, params: ModelParameters | None = None) -> float:
        params = params or self.current.params
        return ml.loss(params, self.validation) if self.validation else math.nan

    def bootstrap(self, params: ModelParameters, quantile: float = 0.95) -> GlobalModel:
        """Publish the initial model as round 0."""
        return self._publish(params, (), 0, quantile)

    def announce_round(self, config: RoundConfig, tick: int = 0) -> Transaction:
        if self.open_round is not None:
            raise RoundInProgress(f"round {self.open_round.round_id} is still open")
        if config.round_id <= self.last_round_id:
            raise ValueError(f"round ids must increase: {config.round_id} <= {self.last_round_id}")
        if self.current is None:
            raise NoOpenRound("bootstrap a model before announcing rounds")
        tx = self._write(
            {
                "kind": Kind.ROUND_ANNOUNCE,
                "round_id": config.round_id,
                "base_version": self.current.params.version,
                "deadline_tick": tick + config.deadline_ticks,
                "min_participants": config.min_participants,
                "selection_policy": config.selection_policy.value,
            }
        )
        self.open_round = config
        self.opened_at = tick
        self.last_round_id = config.round_id
        return tx

    def record_updates(self, accepted: Sequence[ModelUpdate]) -> None:
        for u in accepted:
            self._write(
                {
                    "kind": Kind.MODEL_UPDATE,
                    "round_id": self.open_round.round_id,
                    "miner_id": u.miner_id,
                    "base_version": u.base_version,
                    "param_hash": u.params.param_hash,
                    "sample_count": u.sample_count,
                    "local_loss": float(u.local_loss),
                    "signature": u.signature,
                }
            )

    def _publish(self, params, contributors, round_id, quantile) -> GlobalModel:
        threshold = ml.calibrate_threshold(params, self.validation, quantile)
        h = params.param_hash
        tx = self._write(
            {
                "kind": Kind.MODEL_PUBLISH,
                "round_id": round_id,
                "version": params.version,
                "param_hash": h,
                "threshold": threshold.to_dict(),
                "contributors": sorted(contributors),
            }
        )
        self.model_store[h] = params
        self.current = GlobalModel(params, round_id, tuple(sorted(contributors)), tx.tx_id, threshold)
        return self.current

    def publish_model(self, params: ModelParameters, contributors: Sequence[str]) -> GlobalModel:
        if self.open_round is None:
            raise NoOpenRound("publish_model needs an open round")
        cfg = self.open_round
        gm = self._publish(params, contributors, cfg.round_id, cfg.quantile_for_threshold)
        self.open_round = None
        return gm

    def void_round(self, reason: str, received: int) -> Transaction:
        if self.open_round is None:
            raise NoOpenRound("no round to void")
        tx = self._write(
            {"kind": Kind.ROUND_VOID, "round_id": self.open_round.round_id, "reason": reason, "received": received}
        )
        self.open_round = None
        return tx

    def close_round(self, received: Sequence[ModelUpdate], arrival_ticks: Sequence[int], tick: int) -> RoundRecord:
        """Select, aggregate and publish, or void the round."""
        cfg = self.open_round
        try:
            accepted = select_updates(
                received, cfg, self.keyserver, self.current.params.version, arrival_ticks, self.opened_at
            )
        except InsufficientParticipation as exc:
            self.void_round(f"InsufficientParticipation({exc.got}<{exc.needed})", len(received))
            rec = RoundRecord(cfg.round_id, "void", (), len(received), self.current.params.version,
                              self.validation_loss(), self.opened_at, tick)
        else:
            self.record_updates(accepted)
            gm = self.publish_model(aggregate(accepted), [u.miner_id for u in accepted])
            rec = RoundRecord(cfg.round_id, "published", gm.contributor_ids, len(received), gm.params.version,
                              self.validation_loss(), self.opened_at, tick)
        self.history.append(rec)
        return rec


def seal_all(ledgers: Mapping[str, LedgerInstance], tick: int) -> int:
    sealed = 0
    for aid in sorted(ledgers):
        if ledgers[aid].pending:
            ledgers[aid].seal(tick)
            sealed += 1
    return sealed


def run_federated_training(
    coordinator: Coordinator,
    miners: Sequence[Miner],
    net: Network,
    round_configs: Sequence[RoundConfig],
    round_seed: Callable[[int, str], int] | None = None,
    after_round: Callable[[RoundRecord], None] | None = None,
) -> list[RoundRecord]:
    """Run every configured round over ``net``.

    ``round_seed(round_id, miner_id)`` picks each local training seed; by
    default the miner's configured seed is offset by the round id.
    ``after_round`` runs once each round closes (the scenario seals and syncs
    ledgers there); without it pending ledger entries are sealed directly.
    """
    if not miners:
        raise EmptyDataset("federated training needs at least one miner")
    by_id = {m.miner_id: m for m in miners}
    cid = coordinator.coordinator_id
    records = []
    for cfg in round_configs:
        opened = net.now
        coordinator.announce_round(cfg, opened)
        announce = messages.RoundAnnouncement(
            cfg.round_id, coordinator.current.params.version, opened + cfg.deadline_ticks,
            ml.serialize(coordinator.current.params).hex(),
        )
        payload = messages.encode(announce)
        for mid in sorted(by_id):
            net.send(cid, mid, payload)
        received: list[ModelUpdate] = []
        arrivals: list[int] = []
        while net.now < opened + cfg.deadline_ticks:
            for env in net.step_envelopes():
                msg = messages.decode(env.payload)
                if isinstance(msg, messages.RoundAnnouncement) and env.dst in by_id:
                    miner = by_id[env.dst]
                    if msg.round_id <= miner.last_round:
                        continue
                    miner.last_round = msg.round_id
                    if not miner.shard:
                        continue
                    base = ml.deserialize(bytes.fromhex(msg.model_hex))
                    tc = miner.training
                    seed = round_seed(msg.round_id, miner.miner_id) if round_seed else tc.seed + msg.round_id
                    tc = TrainingConfig(tc.learning_rate, tc.epochs, tc.batch_size, seed, tc.weight_decay)
                    update = miner_train(miner, base, tc)
                    net.send(miner.miner_id, cid, messages.encode(update.to_message(msg.round_id)))
                elif isinstance(msg, messages.ModelUpdateMessage) and env.dst == cid:
                    if msg.round_id != cfg.round_id:
                        continue  # straggler from an earlier round
                    try:
                        update = ModelUpdate.from_message(msg)
                    except ValueError:
                        continue  # malformed update, dropped like a bad signature
                    received.append(update)
                    arrivals.append(net.now)
        rec = coordinator.close_round(received, arrivals, net.now)
        if after_round is not None:
            after_round(rec)
        else:
            seal_all(coordinator.ledgers, net.now)
        records.append(rec)
    return records
