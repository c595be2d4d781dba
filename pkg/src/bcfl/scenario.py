"""Scenario configuration, end-to-end orchestration and metrics.

A run goes: key generation and registration, one ledger per authority,
contract registration, data generation and sharding, federated rounds over
the simulated network, then the gating phase where every test stream passes
through contract matching, routing and the DCI gate. Everything is a pure
function of the config document.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import messages, ml
from .canonical import canonical_json
from .contracts import (
    ALERT_ASSET,
    CONTRACT_ASSET,
    STREAM_ASSET,
    ContractOutcome,
    DCIEngine,
    Decision,
    Registry,
    SmartContract,
    match_contract,
    register_contract,
)
from .errors import BCFLError, ConfigError
from .federation import (
    MODEL_ASSET,
    Coordinator,
    Miner,
    RoundConfig,
    RoundRecord,
    SelectionPolicy,
    run_federated_training,
    seal_all,
)
from .keys import Identity, KeyServer, Role, enroll
from .ledger import Kind, LedgerInstance, sync
from .ml import Threshold, TrainingConfig
from .simnet import Network, NetworkConfig, Partition
from .traffic import (
    AttackKind,
    AttackProfile,
    DataStream,
    Direction,
    MachineIdentity,
    PublishRole,
    TrafficFlowRecord,
    fit_normalizer,
    generate_traffic,
    prepare,
)

log = logging.getLogger(__name__)

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "network": {"base_latency_ticks": 1, "jitter_ticks": 0, "drop_probability": 0.0, "partitions": []},
    "rounds": {
        "count": 3,
        "min_participants": 1,
        "deadline_ticks": 10,
        "selection_policy": "FreshOnly",
        "quantile_for_threshold": 0.95,
    },
    "model": {"layer_shapes": [[18, 8], [8, 18]]},
    "training": {"learning_rate": 0.05, "epochs": 1, "batch_size": 16, "weight_decay": 0.0},
    "data": {"normal": 200, "anomalous": 20, "attack": {"kind": "dos", "intensity": 0.8}},
    "gating": {"seal_every": 100, "limit": None},
}

# period-20 index striping: 14 train, 3 validation, 3 test (70/15/15)
STRIPE = 20
TRAIN_SLOTS = range(0, 14)
VALIDATION_SLOTS = range(14, 17)


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _strip_comments(obj):
    if isinstance(obj, dict):
        return {k: _strip_comments(v) for k, v in obj.items() if k != "_comment"}
    if isinstance(obj, list):
        return [_strip_comments(v) for v in obj]
    return obj


def _identity_from(d: dict, where: str) -> MachineIdentity:
    try:
        return MachineIdentity(
            account_id=d["account_id"],
            address=d["address"],
            publish_role=PublishRole(d.get("publish_role", "Publisher")),
            direction=Direction(d.get("direction", "Sender")),
            internals=tuple((str(k), str(v)) for k, v in d.get("internals", [])),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class ScenarioConfig:
    doc: dict  # fully defaulted document, echoed into the report

    @property
    def seed(self) -> int:
        return int(self.doc["seed"])

    def authorities(self) -> list[dict]:
        return self.doc["authorities"]

    def asset_owner(self) -> dict[str, str]:
        return {a: auth["id"] for auth in self.authorities() for a in auth["assets"]}

    def network(self) -> NetworkConfig:
        n = self.doc["network"]
        parts = tuple(
            Partition(frozenset(p["a"]), frozenset(p["b"]), int(p["from_tick"]), int(p["to_tick"]))
            for p in n["partitions"]
        )
        return NetworkConfig(self.seed, int(n["base_latency_ticks"]), int(n["jitter_ticks"]),
                             float(n["drop_probability"]), parts)

    def round_configs(self) -> list[RoundConfig]:
        r = self.doc["rounds"]
        return [
            RoundConfig(
                round_id=k,
                min_participants=int(r["min_participants"]),
                deadline_ticks=int(r["deadline_ticks"]),
                selection_policy=SelectionPolicy(r["selection_policy"]),
                quantile_for_threshold=float(r["quantile_for_threshold"]),
            )
            for k in range(1, int(r["count"]) + 1)
        ]

    def training(self, seed: int) -> TrainingConfig:
        t = self.doc["training"]
        return TrainingConfig(float(t["learning_rate"]), int(t["epochs"]), int(t["batch_size"]), seed,
                              float(t["weight_decay"]))

    def contracts(self) -> list[SmartContract]:
        out = []
        for c in self.doc["contracts"]:
            t = c.get("threshold_ref", "model")
            out.append(
                SmartContract(
                    contract_id=int(c["contract_id"]),
                    stream_ids=frozenset(int(s) for s in c["stream_ids"]),
                    route_id=int(c["route_id"]),
                    senders=None if c.get("senders") is None else frozenset(c["senders"]),
                    receivers=None if c.get("receivers") is None else frozenset(c["receivers"]),
                    model_ref=c.get("model_ref", "latest"),
                    threshold_ref=Threshold.from_dict(t) if isinstance(t, dict) else t,
                )
            )
        return out

    def device_links(self) -> list[dict]:
        return self.doc["devices"]

    def attack(self) -> AttackProfile:
        a = self.doc["data"]["attack"]
        return AttackProfile(AttackKind(a["kind"]), float(a["intensity"]))

    def echo(self) -> bytes:
        return canonical_json(self.doc)


def parse_config(doc: dict, where: str = "<config>") -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: top level must be an object")
    doc = _merge(DEFAULTS, _strip_comments(doc))
    for key in ("authorities", "coordinator", "miners", "contracts", "devices"):
        if key not in doc:
            raise ConfigError(f"{where}: missing required field '{key}'")
        if not isinstance(doc[key], (list, dict)):
            raise ConfigError(f"{where}: field '{key}' has the wrong type")
    for key in ("authorities", "miners", "contracts", "devices"):
        if not isinstance(doc[key], list):
            raise ConfigError(f"{where}: field '{key}' must be a list")

    ids: list[str] = []
    owners: dict[str, str] = {}
    for k, auth in enumerate(doc["authorities"]):
        if "id" not in auth or not isinstance(auth.get("assets"), dict):
            raise ConfigError(f"{where}: authorities[{k}] needs 'id' and an 'assets' object")
        ids.append(auth["id"])
        for asset in auth["assets"]:
            if asset in owners:
                raise ConfigError(f"{where}: asset '{asset}' issued by both {owners[asset]} and {auth['id']}")
            owners[asset] = auth["id"]
    coord = doc["coordinator"]
    if "id" not in coord:
        raise ConfigError(f"{where}: coordinator needs an 'id'")
    ids.append(coord["id"])
    for k, m in enumerate(doc["miners"]):
        if "id" not in m:
            raise ConfigError(f"{where}: miners[{k}] needs an 'id'")
        ids.append(m["id"])
    for k, link in enumerate(doc["devices"]):
        for side in ("sender", "receiver"):
            if side not in link:
                raise ConfigError(f"{where}: devices[{k}] needs '{side}'")
            ids.append(_identity_from(link[side], f"{where}: devices[{k}].{side}").account_id)
        if int(link.get("stream_id", 0)) <= 0:
            raise ConfigError(f"{where}: devices[{k}].stream_id must be a positive integer")
    for c in doc["contracts"]:
        if "route_id" not in c or "contract_id" not in c:
            raise ConfigError(f"{where}: contracts need 'contract_id' and 'route_id'")
        ids.append(engine_id(int(c["route_id"])))
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    # one engine may serve several contracts on the same route
    dupes = [d for d in dupes if not d.startswith("dci-")]
    if dupes:
        raise ConfigError(f"{where}: duplicate participant ids {dupes}")

    for asset in (MODEL_ASSET, CONTRACT_ASSET, STREAM_ASSET, ALERT_ASSET):
        if asset not in owners:
            raise ConfigError(f"{where}: asset '{asset}' is not issued by any authority")
    for c in doc["contracts"]:
        for asset in c.get("assets", []):
            if asset not in owners:
                raise ConfigError(f"{where}: contract {c['contract_id']} references unknown asset '{asset}'")
    for c in doc["contracts"]:
        eid = engine_id(int(c["route_id"]))
        for asset in (STREAM_ASSET, ALERT_ASSET):
            owner = next(a for a in doc["authorities"] if a["id"] == owners[asset])
            if eid not in owner["assets"][asset]:
                raise ConfigError(f"{where}: channel {eid} must be a delegated issuer of asset '{asset}'")
    if doc["rounds"]["count"] < 0:
        raise ConfigError(f"{where}: rounds.count must be >= 0")
    if doc["data"]["normal"] < 0 or doc["data"]["anomalous"] < 0:
        raise ConfigError(f"{where}: data counts must be >= 0")
    cfg = ScenarioConfig(doc)
    try:
        cfg.network(), cfg.round_configs(), cfg.contracts(), cfg.attack(), cfg.training(0)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return cfg


def load_config(path: str | Path, seed: int | None = None) -> ScenarioConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if seed is not None:
        doc["seed"] = seed
    return parse_config(doc, str(path))


def engine_id(route_id: int) -> str:
    return f"dci-{route_id}"


# --- data --------------------------------------------------------------------

@dataclass
class Dataset:
    train: list[TrafficFlowRecord]
    validation: list[TrafficFlowRecord]
    test: list[TrafficFlowRecord]  # normal and anomalous, interleaved


def build_dataset(cfg: ScenarioConfig) -> Dataset:
    d = cfg.doc["data"]
    normal = generate_traffic(cfg.seed, d["normal"], 0, cfg.attack()) if d["normal"] else []
    anomalous = generate_traffic(cfg.seed + 1, 0, d["anomalous"], cfg.attack()) if d["anomalous"] else []
    train, val, test = [], [], []
    for i, r in enumerate(normal):
        slot = i % STRIPE
        (train if slot in TRAIN_SLOTS else val if slot in VALIDATION_SLOTS else test).append(r)
    test = test + anomalous
    order = np.random.default_rng(cfg.seed + 2).permutation(len(test))
    return Dataset(train, val, [test[i] for i in order])


def gen_data(cfg: ScenarioConfig, out_path: str | Path) -> Path:
    from .traffic import write_flow_csv, write_metadata

    d = cfg.doc["data"]
    a = cfg.attack()
    records = generate_traffic(cfg.seed, d["normal"], d["anomalous"], a)
    out_path = Path(out_path)
    try:
        write_flow_csv(records, out_path)
        write_metadata(
            {
                "seed": cfg.seed,
                "n_normal": d["normal"],
                "n_anomalous": d["anomalous"],
                "attack_kind": a.kind.value,
                "intensity": a.intensity,
            },
            out_path.with_name(out_path.name + ".meta"),
        )
    except OSError as exc:
        raise IOError(f"cannot write {out_path}: {exc}") from exc
    return out_path


# --- run ---------------------------------------------------------------------

@dataclass
class MetricsReport:
    detection_rate: float | None
    false_positive_rate: float | None
    rounds: list[dict]
    ledgers: dict[str, dict]
    outcomes: dict[str, int]
    network: dict[str, int]
    status: str = "ok"
    error: dict | None = None
    config: dict = field(default_factory=dict)

    @property
    def chain_valid(self) -> bool:
        return bool(self.ledgers) and all(v["verification"] == "Valid" for v in self.ledgers.values())

    def to_dict(self) -> dict:
        na = "n/a"
        return {
            "status": self.status,
            "error": self.error,
            "metrics": {
                "detection_rate": na if self.detection_rate is None else self.detection_rate,
                "false_positive_rate": na if self.false_positive_rate is None else self.false_positive_rate,
            },
            "rounds": self.rounds,
            "ledgers": self.ledgers,
            "outcomes": self.outcomes,
            "network": self.network,
            "config": self.config,
        }

    def to_json(self) -> bytes:
        return canonical_json(self.to_dict()) + b"\n"

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "round_id", "status", "participants", "received", "model_version",
                    "validation_loss", "detection_rate", "false_positive_rate"])
        for r in self.rounds:
            w.writerow(["round", r["round_id"], r["status"], len(r["participants"]), r["received"],
                        r["model_version"], repr(r["validation_loss"]), "", ""])
        fmt = lambda v: "n/a" if v is None else repr(v)  # noqa: E731
        w.writerow(["summary", "", self.status, "", "", "", "", fmt(self.detection_rate), fmt(self.false_positive_rate)])
        return buf.getvalue()


@dataclass
class ScenarioResult:
    report: MetricsReport
    ledgers: dict[str, LedgerInstance]
    keyserver: KeyServer
    coordinator: Coordinator | None
    net: Network
    outcomes: list[tuple[TrafficFlowRecord, ContractOutcome]]
    engines: dict[int, DCIEngine]
    inboxes: dict[str, list[messages.SessionNotice]]
    unmatched: int = 0


class _Run:
    """Mutable state of one scenario execution."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.keyserver = KeyServer()
        self.ids: dict[str, Identity] = {}
        self.ledgers: dict[str, LedgerInstance] = {}
        self.net = Network(cfg.network())
        self.coordinator: Coordinator | None = None
        self.miners: list[Miner] = []
        self.engines: dict[int, DCIEngine] = {}
        self.outcomes: list[tuple[TrafficFlowRecord, ContractOutcome]] = []
        self.inboxes: dict[str, list[messages.SessionNotice]] = {}
        self.unmatched = 0
        self.phase = "setup"

    def enroll(self, pid: str, role: Role) -> Identity:
        if pid not in self.ids:
            self.ids[pid] = enroll(self.keyserver, pid, role, self.cfg.seed, self.net.now)
            self.net.add_node(pid)
        return self.ids[pid]

    def sync_authorities(self) -> None:
        """Pairwise ledger sync, each pair triggered by a request over simnet."""
        for a, b in itertools.combinations(sorted(self.ledgers), 2):
            payload = messages.encode(messages.SyncRequest(a, b))
            for _ in range(10_000):
                self.net.send(a, b, payload)
                env = self.net.trace[-1]
                if not env.dropped:
                    while self.net.now < env.deliver_tick:
                        self.pump()
                    sync(self.ledgers[a], self.ledgers[b])
                    break
                self.pump()
            else:
                raise BCFLError(f"ledger sync {a}<->{b} never got through")

    def pump(self) -> None:
        """Advance the network one tick; receivers collect session notices."""
        for env in self.net.step_envelopes():
            msg = messages.decode(env.payload)
            if isinstance(msg, messages.SessionNotice):
                self.inboxes.setdefault(env.dst, []).append(msg)

    def seal_and_sync(self) -> None:
        seal_all(self.ledgers, self.net.now)
        self.sync_authorities()


def _setup(run: _Run, data: Dataset):
    cfg = run.cfg
    owners = cfg.asset_owner()
    authority_ids = [a["id"] for a in cfg.authorities()]
    for aid in authority_ids:
        run.enroll(aid, Role.AUTHORITY)
    coord_id = cfg.doc["coordinator"]["id"]
    run.enroll(coord_id, Role.COORDINATOR)
    for m in cfg.doc["miners"]:
        run.enroll(m["id"], Role.MINER)
    for link in cfg.device_links():
        for side in ("sender", "receiver"):
            run.enroll(link[side]["account_id"], Role.DEVICE)
    for c in cfg.contracts():
        run.enroll(engine_id(c.route_id), Role.DEVICE)

    for auth in cfg.authorities():
        aid = auth["id"]
        peers = [p for p in authority_ids if p != aid]
        directory = {a: o for a, o in owners.items()}
        run.ledgers[aid] = LedgerInstance.create(run.ids[aid], run.keyserver, auth["assets"], directory, peers,
                                                 run.net.now)

    contract_owner = owners[CONTRACT_ASSET]
    for c in cfg.contracts():
        register_contract(run.ledgers[contract_owner], c, run.ids[contract_owner])

    normalizer = fit_normalizer(data.validation if data.validation else data.train)
    validation = prepare(data.validation, normalizer)
    train = prepare(data.train, normalizer)

    home = cfg.doc["coordinator"].get("authority", owners[MODEL_ASSET])
    run.coordinator = Coordinator(run.ids[coord_id], run.keyserver, run.ledgers, home, validation)
    shapes = [tuple(s) for s in cfg.doc["model"]["layer_shapes"]]
    init = ml.init_model(shapes, cfg.doc["model"].get("init_seed", cfg.seed))
    quantile = float(cfg.doc["rounds"]["quantile_for_threshold"])
    run.coordinator.bootstrap(init, quantile)

    n_miners = len(cfg.doc["miners"])
    shards: list[list] = [[] for _ in range(n_miners)]
    for i, v in enumerate(train):
        shards[i % n_miners].append(v)
    for k, m in enumerate(cfg.doc["miners"]):
        run.miners.append(Miner(run.ids[m["id"]], shards[k], cfg.training(cfg.seed)))

    for c in cfg.contracts():
        if c.route_id not in run.engines:
            run.engines[c.route_id] = DCIEngine(
                c.route_id, run.ids[engine_id(c.route_id)], run.ledgers, owners[ALERT_ASSET],
                run.coordinator.model_store, normalizer,
                deliver=lambda rcv, sid, stream, rid=c.route_id: run.net.send(
                    engine_id(rid), rcv,
                    messages.encode(messages.SessionNotice(sid, stream.stream_id, stream.sender.account_id,
                                                           float(stream.size_kb))),
                ),
            )
    run.seal_and_sync()
    return normalizer


def _round_seed(seed: int):
    def pick(round_id: int, miner_id: str) -> int:
        return int.from_bytes(hashlib.sha256(f"train:{seed}:{round_id}:{miner_id}".encode()).digest()[:8], "big")
    return pick


def _gate(run: _Run, data: Dataset) -> None:
    cfg = run.cfg
    registry = Registry.from_ledger(run.ledgers[cfg.asset_owner()[CONTRACT_ASSET]])
    links = cfg.device_links()
    ident = [(_identity_from(l["sender"], "sender"), _identity_from(l["receiver"], "receiver")) for l in links]
    seal_every = int(cfg.doc["gating"]["seal_every"])
    limit = cfg.doc["gating"]["limit"]
    test = data.test if limit is None else data.test[: int(limit)]
    for k, record in enumerate(test):
        j = k % len(links)
        link = links[j]
        stream = DataStream(int(link["stream_id"]), float(link.get("size_kb", 125.0)),
                            str(link.get("timestamp", "")), ident[j][0], ident[j][1], record)
        contract = match_contract(registry, stream)
        if contract is None:
            run.unmatched += 1
        else:
            engine = run.engines[contract.route_id]
            run.outcomes.append((record, engine.execute(contract, stream, run.net.now)))
        run.pump()
        if (k + 1) % seal_every == 0:
            run.seal_and_sync()
    # let session notices in flight land
    horizon = run.net.now + cfg.network().base_latency_ticks + cfg.network().jitter_ticks + 1
    while run.net.now < horizon:
        run.pump()
    run.seal_and_sync()


def _report(run: _Run, records: list[RoundRecord], status="ok", error=None) -> MetricsReport:
    anomalous = [o for r, o in run.outcomes if r.is_anomalous]
    normal = [o for r, o in run.outcomes if not r.is_anomalous]
    hidden = lambda os: sum(o.decision is Decision.HIDDEN_WITH_ALERT for o in os)  # noqa: E731
    ledgers = {}
    for aid in sorted(run.ledgers):
        inst = run.ledgers[aid]
        by_asset: dict[str, int] = {}
        for tx in inst.query(include_replicas=False):
            by_asset[tx.asset_id] = by_asset.get(tx.asset_id, 0) + 1
        verdict = inst.verify()
        ledgers[aid] = {
            "blocks": len(inst.chain),
            "replicated_blocks": sum(len(v) for v in inst.replicas.values()),
            "txs_by_asset": dict(sorted(by_asset.items())),
            "verification": str(verdict),
        }
    sessions = sum(o.decision is Decision.SESSION_ESTABLISHED for _, o in run.outcomes)
    report = MetricsReport(
        detection_rate=hidden(anomalous) / len(anomalous) if anomalous else None,
        false_positive_rate=hidden(normal) / len(normal) if normal else None,
        rounds=[r.to_dict() for r in records],
        ledgers=ledgers,
        outcomes={
            "streams": len(run.outcomes) + run.unmatched,
            "unmatched": run.unmatched,
            "sessions": sessions,
            "alerts": len(run.outcomes) - sessions,
            "anomalous_streams": len(anomalous),
            "normal_streams": len(normal),
            "receiver_notices": sum(len(v) for v in run.inboxes.values()),
        },
        network={"sent": run.net.sent, "delivered": run.net.delivered, "dropped": run.net.dropped,
                 "in_flight": run.net.in_flight},
        status=status,
        error=error,
        config=run.cfg.doc,
    )
    if status == "ok" and not report.chain_valid:
        report.status = "failed"
        report.error = {"phase": "verify", "message": "a ledger failed verification"}
    return report


def execute(cfg: ScenarioConfig) -> ScenarioResult:
    run = _Run(cfg)
    records: list[RoundRecord] = []
    try:
        data = build_dataset(cfg)
        _setup(run, data)
        run.phase = "training"
        rounds = cfg.round_configs()
        if rounds:
            records = run_federated_training(
                run.coordinator, run.miners, run.net, rounds,
                round_seed=_round_seed(cfg.seed), after_round=lambda rec: run.seal_and_sync(),
            )
        run.phase = "gating"
        _gate(run, data)
        report = _report(run, records)
    except BCFLError as exc:
        log.error("scenario failed during %s: %s", run.phase, exc)
        records = run.coordinator.history if run.coordinator else records
        report = _report(run, list(records), "failed", {"phase": run.phase, "type": type(exc).__name__,
                                                        "message": str(exc)})
    return ScenarioResult(report, run.ledgers, run.keyserver, run.coordinator, run.net, run.outcomes,
                          run.engines, run.inboxes, run.unmatched)


def participants_json(keyserver: KeyServer) -> bytes:
    return canonical_json(
        [{"participant_id": r.participant_id, "role": r.role.value, "public_key": r.public_key,
          "registered_at": r.registered_at} for r in keyserver.participants()]
    ) + b"\n"


def keyserver_from_json(data: bytes) -> KeyServer:
    from .keys import ParticipantRecord

    ks = KeyServer()
    for d in json.loads(data):
        ks.register(ParticipantRecord(d["participant_id"], Role(d["role"]), bytes.fromhex(d["public_key"]),
                                      int(d["registered_at"])))
    return ks


def write_outputs(result: ScenarioResult, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for aid, inst in sorted(result.ledgers.items()):
        inst.persist(out / f"ledger_{aid}.jsonl")
    (out / "report.json").write_bytes(result.report.to_json())
    (out / "metrics.csv").write_text(result.report.metrics_csv(), encoding="utf-8")
    (out / "participants.json").write_bytes(participants_json(result.keyserver))
    (out / "config.json").write_bytes(canonical_json(result.report.config) + b"\n")
    (out / "network_trace.jsonl").write_bytes(result.net.trace_lines())
    trace = b"".join(
        canonical_json(step) + b"\n" for rid in sorted(result.engines) for step in result.engines[rid].trace
    )
    (out / "dci_trace.jsonl").write_bytes(trace)
    if result.coordinator is not None:
        models = out / "models"
        models.mkdir(exist_ok=True)
        for h, params in sorted(result.coordinator.model_store.items()):
            (models / f"{h.hex()}.fcm").write_bytes(ml.serialize(params))
    return out


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path | None = None) -> MetricsReport:
    result = execute(cfg)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result.report
