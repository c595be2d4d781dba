"""Command line entry point: ``bcfl run | gen-data | inspect-ledger | verify-model``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from . import ml
from .canonical import canonical_json
from .errors import ConfigError, CorruptModel
from .ledger import Kind, LedgerInstance, verify_bytes
from .scenario import gen_data, keyserver_from_json, load_config, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_RUN, EXIT_INTEGRITY = 0, 1, 2, 3


def _config_path(value: str) -> Path:
    """Accept a file path or the name of a bundled config (e.g. ``reference``)."""
    p = Path(value)
    if p.exists():
        return p
    bundled = resources.files("bcfl") / "configs" / f"{value}.json"
    if bundled.is_file():
        return Path(str(bundled))
    return p


def cmd_run(args) -> int:
    try:
        cfg = load_config(_config_path(args.config), args.seed)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = run_scenario(cfg, args.out)
    m = report.to_dict()["metrics"]
    print(f"status={report.status} detection_rate={m['detection_rate']} "
          f"false_positive_rate={m['false_positive_rate']} out={args.out}")
    if report.status != "ok":
        print(json.dumps(report.error), file=sys.stderr)
        return EXIT_INTEGRITY if (report.error or {}).get("phase") == "verify" else EXIT_RUN
    return EXIT_OK


def cmd_gen_data(args) -> int:
    try:
        cfg = load_config(_config_path(args.config), args.seed)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        path = gen_data(cfg, args.out)
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_RUN
    print(path)
    return EXIT_OK


def _participants(args, ledger: Path) -> Path:
    return Path(args.participants) if args.participants else ledger.parent / "participants.json"


def cmd_inspect(args) -> int:
    path = Path(args.ledger)
    try:
        ks = keyserver_from_json(_participants(args, path).read_bytes())
        data = path.read_bytes()
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot read inputs: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    verdict = verify_bytes(data, ks)
    print(str(verdict))
    if not verdict:
        return EXIT_INTEGRITY
    inst = LedgerInstance.from_bytes(data, ks)
    txs = inst.query(asset_id=args.asset, kind=args.kind, min_height=args.min_height, max_height=args.max_height)
    for tx in txs:
        if args.json:
            sys.stdout.write(canonical_json(tx.to_dict()).decode() + "\n")
        else:
            print(f"{tx.tx_id.hex()[:16]} asset={tx.asset_id} kind={tx.kind} issuer={tx.issuer_id}")
    print(f"{len(txs)} transaction(s)")
    return EXIT_OK


def cmd_verify_model(args) -> int:
    try:
        raw = Path(args.model).read_bytes()
        params = ml.deserialize(raw)
    except (OSError, CorruptModel) as exc:
        print(f"model unreadable: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    digest = params.param_hash.hex()
    print(f"version={params.version} param_hash={digest}")
    if args.ledger is None:
        return EXIT_OK
    path = Path(args.ledger)
    try:
        ks = keyserver_from_json(_participants(args, path).read_bytes())
        data = path.read_bytes()
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot read inputs: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    verdict = verify_bytes(data, ks)
    if not verdict:
        print(str(verdict))
        return EXIT_INTEGRITY
    inst = LedgerInstance.from_bytes(data, ks)
    for tx in inst.query(kind=Kind.MODEL_PUBLISH):
        if tx.payload["param_hash"] == digest and tx.payload["version"] == params.version:
            print(f"published in round {tx.payload['round_id']} (tx {tx.tx_id.hex()[:16]})")
            return EXIT_OK
    print("no matching publication on chain", file=sys.stderr)
    return EXIT_INTEGRITY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcfl", description=__doc__)
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and write ledgers, report and metrics")
    p.add_argument("--config", required=True, help="config file or bundled name (reference, adversarial, single_stream)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gen-data", help="write the scenario's traffic as flow-record CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("inspect-ledger", help="verify a persisted ledger and list transactions")
    p.add_argument("ledger")
    p.add_argument("--participants", help="participants.json (default: next to the ledger)")
    p.add_argument("--asset")
    p.add_argument("--kind", choices=sorted(Kind.ALL))
    p.add_argument("--min-height", type=int)
    p.add_argument("--max-height", type=int)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("verify-model", help="recompute a model file's hash, optionally against the ledger")
    p.add_argument("model")
    p.add_argument("--ledger")
    p.add_argument("--participants")
    p.set_defaults(func=cmd_verify_model)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    # --verbose is accepted before or after the subcommand
    argv = list(sys.argv[1:] if argv is None else argv)
    verbose = "--verbose" in argv
    argv = [a for a in argv if a != "--verbose"]
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
