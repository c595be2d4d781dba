import copy
import json

import pytest

from bcfl import cli, ml
from bcfl.canonical import canonical_json
from bcfl.errors import ConfigError
from bcfl.ledger import LedgerInstance
from bcfl.scenario import (
    build_dataset,
    execute,
    gen_data,
    keyserver_from_json,
    load_config,
    parse_config,
    run_scenario,
)
from bcfl.traffic import CSV_HEADER, read_flow_csv

DEVICE = {
    "stream_id": 1029,
    "sender": {"account_id": "thing", "address": "fe80::1"},
    "receiver": {"account_id": "sink", "address": "fe80::2", "publish_role": "Subscriber", "direction": "Receiver"},
}
MINIMAL = {
    "seed": 3,
    "authorities": [
        {"id": "a1", "assets": {"model": ["coord"], "contract": []}},
        {"id": "a2", "assets": {"stream": ["dci-6006"], "alert": ["dci-6006"]}},
    ],
    "coordinator": {"id": "coord"},
    "miners": [{"id": "m1"}, {"id": "m2"}],
    "devices": [DEVICE],
    "contracts": [{"contract_id": 9009, "stream_ids": [1029], "route_id": 6006}],
    "rounds": {"count": 2, "deadline_ticks": 4},
    "training": {"learning_rate": 0.3},
    "data": {"normal": 200, "anomalous": 10},
}


def doc(**changes):
    d = copy.deepcopy(MINIMAL)
    d.update(changes)
    return d


def write(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return p


@pytest.fixture(scope="module")
def finished(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    report = run_scenario(parse_config(doc()), out)
    return report, out


def test_minimal_config_loads(tmp_path):
    cfg = load_config(write(tmp_path, MINIMAL))
    assert cfg.seed == 3 and len(cfg.round_configs()) == 2
    assert cfg.asset_owner() == {"model": "a1", "contract": "a1", "stream": "a2", "alert": "a2"}
    assert load_config(write(tmp_path, MINIMAL), seed=9).seed == 9


@pytest.mark.parametrize(
    "bad",
    [
        doc(contracts=[{"contract_id": 1, "stream_ids": [1], "route_id": 6006, "assets": ["weather"]}]),
        doc(authorities=[{"id": "a1", "assets": {"model": ["coord"], "contract": []}}]),
        doc(authorities=MINIMAL["authorities"] + [{"id": "a3", "assets": {"model": []}}]),
        doc(miners=[{"id": "m1"}, {"id": "m1"}]),
        doc(authorities=[MINIMAL["authorities"][0], {"id": "a2", "assets": {"stream": [], "alert": []}}]),
        doc(rounds={"count": 1, "min_participants": 0}),
        {k: v for k, v in MINIMAL.items() if k != "miners"},
        [],
    ],
    ids=["unknown-asset", "unowned-asset", "two-issuers", "dup-id", "engine-not-delegate", "bad-round", "missing",
         "not-object"],
)
def test_bad_configs(bad):
    with pytest.raises(ConfigError):
        parse_config(bad)


def test_malformed_json_reports_position(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text('{"seed": 1,\n  "miners": [}')
    with pytest.raises(ConfigError, match=r"broken.json:2:"):
        load_config(p)


def test_dataset_split():
    cfg = parse_config(doc(data={"normal": 3339, "anomalous": 100}))
    d = build_dataset(cfg)
    assert (len(d.train), len(d.validation)) == (2338, 501)
    assert len(d.test) == 600 and sum(r.is_anomalous for r in d.test) == 100


def test_run_is_healthy(finished):
    report, out = finished
    assert report.status == "ok" and report.chain_valid
    assert [r["status"] for r in report.rounds] == ["published", "published"]
    o = report.outcomes
    assert o["streams"] == o["sessions"] + o["alerts"] == 40
    assert o["receiver_notices"] == o["sessions"]


def test_output_files(finished):
    report, out = finished
    names = {p.name for p in out.iterdir()}
    assert {"ledger_a1.jsonl", "ledger_a2.jsonl", "report.json", "metrics.csv", "participants.json",
            "config.json", "network_trace.jsonl", "dci_trace.jsonl", "models"} <= names
    assert len(list((out / "models").iterdir())) == 3
    rows = (out / "metrics.csv").read_text().splitlines()
    assert rows[0].startswith("row,round_id") and len(rows) == 4 and rows[-1].startswith("summary")


def test_echo_reproduces_run(finished, tmp_path):
    report, out = finished
    again = run_scenario(load_config(out / "config.json"), tmp_path)
    assert again.to_json() == report.to_json()
    for name in ("ledger_a1.jsonl", "ledger_a2.jsonl", "network_trace.jsonl", "dci_trace.jsonl"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_persisted_ledgers_reload(finished):
    _, out = finished
    ks = keyserver_from_json((out / "participants.json").read_bytes())
    inst = LedgerInstance.load(out / "ledger_a2.jsonl", ks)
    assert inst.verify_local() and inst.verify()


def test_zero_streams_gives_na(tmp_path):
    report = run_scenario(parse_config(doc(data={"normal": 0, "anomalous": 0}, rounds={"count": 0})), tmp_path)
    d = report.to_dict()
    assert d["metrics"] == {"detection_rate": "n/a", "false_positive_rate": "n/a"}
    assert "n/a" in (tmp_path / "metrics.csv").read_text()


def test_unmatched_streams_are_counted():
    dev = copy.deepcopy(DEVICE)
    dev["stream_id"] = 9999
    result = execute(parse_config(doc(devices=[dev])))
    assert result.report.outcomes["unmatched"] == 40 and result.outcomes == []
    assert result.inboxes == {}


def test_gen_data(tmp_path):
    cfg = parse_config(doc(data={"normal": 40, "anomalous": 7, "attack": {"kind": "command_injection", "intensity": 0.5}}))
    p = gen_data(cfg, tmp_path / "flows.csv")
    assert p.read_text().splitlines()[0].split(",") == list(CSV_HEADER)
    recs = read_flow_csv(p)
    assert len(recs) == 47 and sum(r.is_anomalous for r in recs) == 7
    meta = (tmp_path / "flows.csv.meta").read_text()
    assert "attack_kind=command_injection" in meta and "seed=3" in meta
    q = gen_data(cfg, tmp_path / "again.csv")
    assert q.read_bytes() == p.read_bytes()


# CLI

def test_cli_run_and_inspect(tmp_path, capsys):
    cfg = write(tmp_path, MINIMAL)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    capsys.readouterr()
    assert cli.main(["inspect-ledger", str(out / "ledger_a2.jsonl"), "--asset", "alert", "--json"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "Valid"
    assert lines[-1] == f"{report['outcomes']['alerts']} transaction(s)"
    ks = keyserver_from_json((out / "participants.json").read_bytes())
    oracle = LedgerInstance.load(out / "ledger_a2.jsonl", ks).query(asset_id="alert")
    assert lines[1:-1] == [canonical_json(t.to_dict()).decode() for t in oracle]


def test_cli_inspect_detects_flipped_byte(finished, tmp_path, capsys):
    _, out = finished
    data = bytearray((out / "ledger_a1.jsonl").read_bytes())
    data[len(data) // 2] ^= 0x01
    bad = tmp_path / "ledger.jsonl"
    bad.write_bytes(bytes(data))
    rc = cli.main(["inspect-ledger", str(bad), "--participants", str(out / "participants.json")])
    assert rc == 3
    assert capsys.readouterr().out.startswith("Invalid")


def test_cli_config_error(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 1
    bad = write(tmp_path, doc(miners=[{"id": "m1"}, {"id": "m1"}]))
    assert cli.main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "x.csv")]) == 1


def test_cli_verify_model(finished, tmp_path, capsys):
    _, out = finished
    model = sorted((out / "models").iterdir())[0]
    params = ml.deserialize(model.read_bytes())
    assert cli.main(["verify-model", str(model), "--ledger", str(out / "ledger_a1.jsonl")]) == 0
    assert params.param_hash.hex() in capsys.readouterr().out
    corrupt = tmp_path / "bad.fcm"
    corrupt.write_bytes(model.read_bytes()[:-3])
    assert cli.main(["verify-model", str(corrupt)]) == 3
    foreign = tmp_path / "foreign.fcm"
    foreign.write_bytes(ml.serialize(ml.init_model(seed=123)))
    assert cli.main(["verify-model", str(foreign), "--ledger", str(out / "ledger_a1.jsonl"),
                     "--participants", str(out / "participants.json")]) == 3


def test_cli_bundled_config_and_verbose(tmp_path):
    assert cli.main(["--verbose", "gen-data", "--config", "single_stream", "--out", str(tmp_path / "f.csv")]) == 0
    assert (tmp_path / "f.csv.meta").exists()
