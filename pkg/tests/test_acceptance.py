"""Acceptance criteria, one test each, with a PASS/FAIL line per criterion.

The summary lines are printed at the end of the pytest session.
"""

import ast
import json
import math
import time
import typing
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

import bcfl
from bcfl import messages, ml
from bcfl.contracts import Decision
from bcfl.federation import ModelUpdate, aggregate, update_signing_bytes
from bcfl.keys import KeyServer, Role, enroll
from bcfl.ledger import LedgerInstance, Status, make_transaction, submit_routed, sync, verify_bytes, verify_chain
from bcfl.ml import ModelParameters
from bcfl.scenario import execute, load_config, parse_config, write_outputs

from conftest import ACCEPTANCE_LINES

PKG = Path(bcfl.__file__).parent


def record(n: int, name: str, ok: bool, detail: str, elapsed: float, budget: float) -> None:
    ok = ok and elapsed < budget
    ACCEPTANCE_LINES.append(
        f"[{'PASS' if ok else 'FAIL'}] #{n} {name}: {detail}; runtime {elapsed:.2f}s (budget {budget:g}s)"
    )
    assert ok, ACCEPTANCE_LINES[-1]


def bundled(name: str) -> dict:
    return json.loads((resources.files("bcfl") / "configs" / f"{name}.json").read_text())


def fd_gradient(params, X, h=1e-5):
    w = params.weights
    g = np.empty_like(w)
    for k in range(w.size):
        up, down = w.copy(), w.copy()
        up[k] += h
        down[k] -= h
        g[k] = (ml.loss(params.with_weights(up, 0), X) - ml.loss(params.with_weights(down, 0), X)) / (2 * h)
    return g


def test_01_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, checked = 0.0, 0
    for trial in range(50):
        depth = int(rng.integers(1, 4))
        widths = [int(w) for w in rng.integers(1, 13, size=depth + 1)]
        widths[-1] = widths[0]  # autoencoder: output width equals input width
        shapes = list(zip(widths[:-1], widths[1:]))
        p = ml.init_model(shapes, seed=trial, io_dim=None)
        p = p.with_weights(p.weights + rng.normal(0, 0.3, p.weights.size), 0)
        X = rng.uniform(0, 1, size=(int(rng.integers(1, 9)), widths[0]))
        g, fd = ml.gradient(p, list(X)), fd_gradient(p, list(X))
        rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-8)
        worst = max(worst, float(rel.max()))
        checked += g.size
    elapsed = time.perf_counter() - t0
    record(1, "gradient correctness", worst <= 1e-4,
           f"50 topologies, {checked} components, max rel err {worst:.2e} (tol 1e-4)", elapsed, 30)


def test_02_fedavg_oracle():
    t0 = time.perf_counter()
    ks = KeyServer()
    ids = [enroll(ks, f"m{k}", Role.MINER, 1) for k in range(8)]
    rng = np.random.default_rng(7)

    def upd(ident, w, n):
        params = ModelParameters(shapes, np.asarray(w), 1)
        sig = ident.sign(update_signing_bytes(ident.participant_id, 0, params, n, 0.0))
        return ModelUpdate(ident.participant_id, 0, params, n, 0.0, sig)

    worst, perm_ok, equal_ok = 0.0, True, True
    for trial in range(100):
        i, o = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        while i * o + o > 50:
            i, o = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        shapes = ((i, o),)
        k = int(rng.integers(1, 9))
        ws = [rng.normal(0, 3, i * o + o) for _ in range(k)]
        ns = [int(n) for n in rng.integers(1, 1000, size=k)]
        ups = [upd(ids[j], ws[j], ns[j]) for j in range(k)]
        got = aggregate(ups).weights
        total = sum(ns)
        oracle = [math.fsum(ns[j] * ws[j][c] for j in range(k)) / total for c in range(ws[0].size)]
        worst = max(worst, float(np.max(np.abs(got - oracle))))
        perm = [ups[j] for j in rng.permutation(k)]
        perm_ok &= np.array_equal(aggregate(perm).weights, got)
        eq = aggregate([upd(ids[j], ws[j], 5) for j in range(k)]).weights
        equal_ok &= bool(np.max(np.abs(eq - np.mean(ws, axis=0))) <= 1e-12)
    elapsed = time.perf_counter() - t0
    record(2, "FedAvg oracle equivalence", worst <= 1e-12 and perm_ok and equal_ok,
           f"100 sets, max abs err {worst:.1e} (tol 1e-12), permutation-invariant={perm_ok}, "
           f"equal-count=mean={equal_ok}", elapsed, 5)


def _three_authorities(seed=11):
    ks = KeyServer()
    ids = {p: enroll(ks, p, r, seed) for p, r in [
        ("auth-a", Role.AUTHORITY), ("auth-b", Role.AUTHORITY), ("auth-c", Role.AUTHORITY),
        ("coord", Role.COORDINATOR), ("chan", Role.DEVICE), ("mallory", Role.DEVICE)]}
    assets = {"auth-a": {"model": ["coord"]}, "auth-b": {"stream": ["chan"], "alert": ["chan"]},
              "auth-c": {"contract": []}}
    directory = {a: auth for auth, owned in assets.items() for a in owned}
    ledgers = {a: LedgerInstance.create(ids[a], ks, assets[a], directory, [p for p in assets if p != a])
               for a in assets}
    return ks, ids, ledgers, directory, assets


def test_03_ledger_integrity():
    t0 = time.perf_counter()
    ks, ids, L, *_ = _three_authorities()
    for h in range(1, 10):
        submit_routed(L, "auth-a", make_transaction("model", {"kind": "model_publish", "round_id": h, "version": h},
                                                   ids["coord"]))
        if h % 3 == 0:
            submit_routed(L, "auth-a", make_transaction("alert", {"kind": "alert", "stream_id": 1029,
                                                                  "rmse": 0.5 + h / 100}, ids["chan"]))
        if h == 5:
            submit_routed(L, "auth-a", make_transaction("contract", {"kind": "contract_registration",
                                                                     "contract_id": 9009}, ids["auth-c"]))
        for a in sorted(L):
            if L[a].pending:
                L[a].seal(h)
    for a, b in [("auth-a", "auth-b"), ("auth-a", "auth-c"), ("auth-b", "auth-c")]:
        sync(L[a], L[b])
    data = L["auth-a"].to_bytes()
    baseline = verify_chain(LedgerInstance.from_bytes(data, ks))
    missed = []
    for pos in range(len(data)):
        mutated = bytearray(data)
        mutated[pos] ^= 0x01
        if verify_bytes(bytes(mutated), ks):
            missed.append(pos)
    elapsed = time.perf_counter() - t0
    ok = len(L["auth-a"].chain) == 10 and len(data) <= 64 * 1024 and baseline.valid and not missed
    record(3, "ledger integrity", ok,
           f"{len(L['auth-a'].chain)} local blocks + replicas of 2 peers, {len(data)} bytes, "
           f"{len(data)} single-byte mutations, {len(missed)} undetected", elapsed, 60)


def test_04_consensus_rules():
    t0 = time.perf_counter()
    ks, ids, L, directory, assets = _three_authorities()
    delegates = {a: set(d) | {directory[a]} for owned in assets.values() for a, d in owned.items()}
    rng = np.random.default_rng(99)
    issuers = sorted(ids)
    trials = foreign_accepts = non_issuer_ok = non_issuer_total = 0
    for trial in range(1200):
        asset = str(rng.choice(sorted(directory)))
        issuer = str(rng.choice(issuers))
        at = str(rng.choice(sorted(L)))
        tx = make_transaction(asset, {"kind": "probe", "n": trial}, ids[issuer])
        result = L[at].submit(tx)
        trials += 1
        owner = directory[asset]
        if result.status is Status.ACCEPTED and at != owner:
            foreign_accepts += 1
        if at == owner and issuer not in delegates[asset]:
            non_issuer_total += 1
            non_issuer_ok += result.status is Status.REJECTED and result.reason == "NotAssetIssuer"
        if rng.random() < 0.05:
            for a in sorted(L):
                if L[a].pending:
                    L[a].seal(trial)
    for a in sorted(L):
        if L[a].pending:
            L[a].seal(10_000)
    signed_ok = all(
        b.validator_id == aid and ks.verify_from(aid, b.header_bytes(), b.validator_signature)
        for aid, inst in L.items() for b in inst.chain
    ) and all(verify_chain(inst).valid for inst in L.values())
    elapsed = time.perf_counter() - t0
    ok = signed_ok and foreign_accepts == 0 and non_issuer_ok == non_issuer_total > 0 and trials >= 1000
    record(4, "consensus rules", ok,
           f"{trials} randomized submissions; (a) blocks signed by sole authority={signed_ok}; "
           f"(c) foreign accepts={foreign_accepts}; (d) NotAssetIssuer {non_issuer_ok}/{non_issuer_total}",
           elapsed, 10)


def test_05_reference_detection():
    t0 = time.perf_counter()
    cfg = parse_config(bundled("reference"))
    result = execute(cfg)
    r = result.report
    elapsed = time.perf_counter() - t0
    o = r.outcomes
    shape_ok = (o["normal_streams"], o["anomalous_streams"]) == (500, 100) and len(r.rounds) == 10
    ok = r.status == "ok" and shape_ok and r.detection_rate >= 0.90 and r.false_positive_rate <= 0.10
    record(5, "reference detection", ok,
           f"{o['normal_streams']} normal + {o['anomalous_streams']} anomalous, detection_rate {r.detection_rate:.3f} "
           f"(>= 0.90), false_positive_rate {r.false_positive_rate:.3f} (<= 0.10)", elapsed, 120)


def test_06_convergence_under_drops():
    t0 = time.perf_counter()
    doc = bundled("reference")
    doc["network"]["drop_probability"] = 0.2
    doc["rounds"]["min_participants"] = 2
    r = execute(parse_config(doc)).report
    elapsed = time.perf_counter() - t0
    published = [x for x in r.rounds if x["status"] == "published"]
    complete = r.status == "ok" and len(r.rounds) == 10
    lower = bool(published) and published[-1]["validation_loss"] < r.rounds[0]["validation_loss"]
    enough = all(len(x["participants"]) >= 2 for x in published)
    record(6, "convergence under 20% drops", complete and lower and enough,
           f"{len(r.rounds)} rounds, {len(r.rounds) - len(published)} void, final loss "
           f"{published[-1]['validation_loss']:.4f} < round-1 loss {r.rounds[0]['validation_loss']:.4f}, "
           f"min aggregated {min(len(x['participants']) for x in published)} (>= 2)", elapsed, 180)


def test_07_determinism(tmp_path):
    t0 = time.perf_counter()
    compared, diffs = 0, []
    adversarial = bundled("adversarial")
    assert adversarial["network"]["partitions"] and adversarial["network"]["drop_probability"] > 0
    for name in ("reference", "adversarial"):
        outs = []
        for k in range(2):
            out = tmp_path / f"{name}-{k}"
            write_outputs(execute(parse_config(bundled(name))), out)
            outs.append(out)
        files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
        assert {p.relative_to(outs[1]) for p in outs[1].rglob("*") if p.is_file()} == set(files)
        for f in files:
            compared += 1
            if (outs[0] / f).read_bytes() != (outs[1] / f).read_bytes():
                diffs.append(f"{name}/{f}")
        required = {"report.json", "metrics.csv"} | {f.name for f in files if f.name.startswith("ledger_")}
        assert len(required) > 2
    elapsed = time.perf_counter() - t0
    record(7, "determinism", not diffs,
           f"reference + adversarial run twice, {compared} output files compared, {len(diffs)} differ", elapsed, 300)


def test_08_gate_conformance_trace():
    t0 = time.perf_counter()
    result = execute(load_config(resources.files("bcfl") / "configs" / "single_stream.json"))
    trace = result.engines[6006].trace
    steps = [s["step"] for s in trace]
    match_ok = trace[0] == {"step": "match", "stream_id": 1029, "contract_id": 9009}
    route_ok = trace[1] == {"step": "route", "contract_id": 9009, "route_id": 6006}
    (outcome,) = [s for s in trace if s["step"] == "outcome"]
    decision = outcome["decision"]
    exactly_one = steps == ["match", "route", "outcome"] and (outcome["session_id"] is None) != (
        outcome["alert_tx"] is None)
    stream_ledger = result.ledgers["auth-stream"]
    txs = {t.tx_id.hex(): t for t in stream_ledger.query()}
    tx = txs.get(outcome["record_tx"])
    if decision == Decision.SESSION_ESTABLISHED.value:
        chain_ok = tx is not None and tx.payload["session_id"] == outcome["session_id"] and \
            tx.payload["route_id"] == 6006 and tx.payload["stream"]["stream_id"] == 1029
    else:
        chain_ok = tx is not None and tx.payload["kind"] == "alert" and tx.payload["stream_id"] == 1029
    chain_ok = chain_ok and tx.payload["contract_id"] == 9009 and tx.payload["rmse"] == outcome["rmse"]
    elapsed = time.perf_counter() - t0
    record(8, "gate conformance trace", match_ok and route_ok and exactly_one and chain_ok,
           f"match(1029)->9009={match_ok}, route->6006={route_ok}, outcome {decision}, "
           f"on-chain record matches={chain_ok}", elapsed, 5)


FORBIDDEN = {"TrafficFlowRecord", "FeatureVector", "DataStream", "ndarray"}


def _leaf_types(tp):
    args = typing.get_args(tp)
    if not args:
        return {tp}
    return set().union(*(_leaf_types(a) for a in args)) | {typing.get_origin(tp)}


def _send_payload_sources() -> list[str]:
    """Every network send in the package, with how its payload is produced."""
    bad = []
    for path in sorted(PKG.rglob("*.py")):
        tree = ast.parse(path.read_text())
        encoded = set()
        for node in ast.walk(tree):
            if isinstance(node, ast.Assign) and isinstance(node.value, ast.Call) and \
                    ast.unparse(node.value.func) == "messages.encode":
                encoded |= {t.id for t in node.targets if isinstance(t, ast.Name)}
        for node in ast.walk(tree):
            if isinstance(node, ast.Call) and isinstance(node.func, ast.Attribute) and node.func.attr == "send" \
                    and len(node.args) == 3:
                payload = node.args[2]
                via_encode = isinstance(payload, ast.Call) and ast.unparse(payload.func) == "messages.encode"
                if not via_encode and not (isinstance(payload, ast.Name) and payload.id in encoded):
                    bad.append(f"{path.name}:{node.lineno}")
    return bad


def test_09_privacy_by_locality():
    t0 = time.perf_counter()
    allowed = {int, float, str, bool, type(None)}
    schema_leaks = [
        f"{name}.{f}" for name, cls in messages.MESSAGE_TYPES.items()
        for f, tp in messages.field_types(cls).items() if not _leaf_types(tp) <= allowed
    ]
    schema_leaks += [n for n in FORBIDDEN if n in messages.MESSAGE_TYPES]
    unencoded_sends = _send_payload_sources()
    cfg = bundled("reference")
    cfg["data"] = {"normal": 339, "anomalous": 10, "attack": {"kind": "dos", "intensity": 0.8}}
    cfg["rounds"]["count"] = 3
    result = execute(parse_config(cfg))
    miners = {m["id"] for m in cfg["miners"]}
    coord = cfg["coordinator"]["id"]
    kinds = {type(messages.decode(e.payload)).__name__ for e in result.net.trace
             if e.src in miners and e.dst == coord}
    any_flow_type = any(type(messages.decode(e.payload)).__name__ in FORBIDDEN for e in result.net.trace)
    elapsed = time.perf_counter() - t0
    ok = not schema_leaks and not unencoded_sends and kinds == {"ModelUpdateMessage"} and not any_flow_type
    record(9, "privacy by locality", ok,
           f"{len(messages.MESSAGE_TYPES)} message types with primitive fields only (leaks: {schema_leaks or 'none'}), "
           f"sends bypassing the registry: {unencoded_sends or 'none'}, miner->coordinator payload types {sorted(kinds)}",
           elapsed, 5)


def test_09_registry_refuses_flow_data():
    from bcfl.traffic import AttackKind, AttackProfile, extract_features, generate_traffic

    rec = generate_traffic(0, 1, 0, AttackProfile(AttackKind.DENIAL_OF_SERVICE, 1.0))[0]
    for obj in (rec, extract_features(rec)):
        with pytest.raises(TypeError):
            messages.encode(obj)
