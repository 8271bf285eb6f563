"""Command-line front end: ``bis init | keygen | run | bench | inspect``."""
from __future__ import annotations

import argparse
import json
import os
import random
import sys
from pathlib import Path

from .bench import bench_poc, report_json
from .chain import find_policies, load_ledger, read_records, verify_records, walk_contract_chain
from .crypto import generate_keypair, save_key
from .errors import NotFound, VerificationFailed
from .scenario import run_scenario
from .transactions import to_json

ENV_ROOT = "BIS_DATA_ROOT"
DEFAULT_ROOT = "bis-data"


def data_root(args: argparse.Namespace) -> Path:
    return Path(args.root or os.environ.get(ENV_ROOT) or DEFAULT_ROOT)


def cmd_init(args: argparse.Namespace) -> int:
    root = data_root(args)
    for sub in ("keys", "store", "runs"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    config = root / "config.json"
    if not config.exists():
        config.write_text(json.dumps({"version": 1, "wait_period": args.wait_period}, indent=2) + "\n")
    print(f"initialised {root}")
    return 0


def cmd_keygen(args: argparse.Namespace) -> int:
    keys = data_root(args) / "keys"
    pub, sec = keys / f"{args.name}.pub", keys / f"{args.name}.key"
    if (pub.exists() or sec.exists()) and not args.force:
        print(f"error: key {args.name} already exists (use --force)", file=sys.stderr)
        return 1
    seed = random.Random(args.seed).randbytes(32) if args.seed is not None else None
    pk, sk = generate_keypair(seed)
    save_key(pub, pk)
    save_key(sec, sk, secret=True)
    print(pk.hex())
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    name = "demo" if args.script == "demo" else Path(args.script).stem
    out = Path(args.out) if args.out else data_root(args) / "runs" / name
    result = run_scenario(args.script, out, seed=args.seed, wait_period=args.wait_period)
    if result.exit_code:
        print(f"error: {result.error}", file=sys.stderr)
    if "summary" in result.outputs:
        print(result.outputs["summary"].read_text(), end="")
    for label, path in sorted(result.outputs.items()):
        print(f"wrote {label}: {path}")
    return result.exit_code


def cmd_bench(args: argparse.Namespace) -> int:
    report = bench_poc(args.n, args.payload, args.seed, anchors_per_contract=args.anchors)
    print(report.to_text())
    if args.json == "-":
        print(report_json(report))
    elif args.json:
        Path(args.json).write_text(report_json(report) + "\n")
        print(f"wrote json: {args.json}")
    return 0


def _print_tx(tx, as_json: bool) -> None:
    if as_json:
        print(json.dumps(to_json(tx), sort_keys=True))
    else:
        print(f"{tx.NAME:<8} {tx.t_id.hex()}")


def cmd_inspect(args: argparse.Namespace) -> int:
    try:
        records = read_records(args.ledger)
    except (OSError, VerificationFailed) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report = verify_records(records, wait_period=args.wait_period)
    if not report.ok:
        print(f"error: {report.describe()}", file=sys.stderr)
        return 2
    ledger = load_ledger(args.ledger, verify=False)
    query = args.query
    try:
        if query.startswith("chain:"):
            for tx in walk_contract_chain(ledger, _hex(query[6:])):
                _print_tx(tx, args.json)
        elif query.startswith("policies:"):
            for ad in find_policies(ledger, query[9:]):
                if args.json:
                    _print_tx(ad, True)
                else:
                    print(f"{ad.t_id.hex()}  {','.join(ad.keywords)}  insurer {ad.insurance_pk.hex()[:16]}")
        else:
            tx = ledger.get(_hex(query))
            if tx is None:
                raise NotFound(f"no transaction {query}")
            height, pos, _ = ledger.tx_index[tx.t_id]
            print(json.dumps({"block": height, "position": pos, **to_json(tx)}, indent=2, sort_keys=True))
    except NotFound as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _hex(text: str) -> bytes:
    try:
        return bytes.fromhex(text)
    except ValueError:
        raise NotFound(f"{text!r} is not a hex transaction id") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bis", description="Verifiable insurance ledger simulator.")
    p.add_argument("--root", help=f"data root (default ${ENV_ROOT} or ./{DEFAULT_ROOT})")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init", help="create the data root layout")
    s.add_argument("--wait-period", type=int, default=1000, help="miner wait period in ms")
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("keygen", help="write <name>.pub and <name>.key under <root>/keys")
    s.add_argument("name")
    s.add_argument("--seed", type=int, help="derive the key deterministically")
    s.add_argument("--force", action="store_true", help="overwrite an existing key")
    s.set_defaults(func=cmd_keygen)

    s = sub.add_parser("run", help="execute a scenario script ('demo' for the bundled one)")
    s.add_argument("script")
    s.add_argument("--out", help="output directory (default <root>/runs/<script>)")
    s.add_argument("--seed", type=int, help="override the script's seed")
    s.add_argument("--wait-period", type=int, default=1000, help="miner wait period in ms")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("bench", help="generate, validate and mine a synthetic workload")
    s.add_argument("--n", type=int, default=12000, help="number of transactions")
    s.add_argument("--payload", type=int, default=1024, help="off-chain payload size in bytes")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--anchors", type=int, default=3, help="data anchors per contract in the mix")
    s.add_argument("--json", help="write the JSON report to this path ('-' for stdout)")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("inspect", help="query a ledger file: <tid> | chain:<sct_tid> | policies:<keyword>")
    s.add_argument("ledger")
    s.add_argument("query")
    s.add_argument("--json", action="store_true", help="print transactions as JSON")
    s.add_argument("--wait-period", type=int, help="also check miner spacing")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "bench" and args.n < 1:
        print("error: --n must be at least 1", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
