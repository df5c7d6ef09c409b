"""Thin command-line client for the experiment service.

By default the CLI mounts the FastAPI app in-process (no server needed);
``--server URL`` targets a running instance instead.  The client only parses
configs, posts requests, and writes report files, so CLI runs and service
runs produce identical bytes.

Exit codes: 0 completed, 2 configuration error, 3 acceptance bounds missed,
1 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import httpx

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .experiments import ExperimentBatch, batch_to_csv, batch_to_json

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_ACCEPTANCE = 3


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    # in-process ASGI client: same code path as a live server, no socket
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from starlette.testclient import TestClient

        from .service.app import app

        return TestClient(app)


def _load_config_file(path: Path) -> dict:
    raw = path.read_bytes()
    if path.suffix == ".json":
        return json.loads(raw)
    return tomllib.loads(raw.decode())


def _post(client: httpx.Client, endpoint: str, payload: dict):
    response = client.post(endpoint, json=payload)
    if response.status_code == 422:
        raise ValueError(response.text)
    response.raise_for_status()
    return response.json()


def _write(path: Path, content: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(content)


def cmd_run(args) -> int:
    try:
        data = _load_config_file(Path(args.config))
        if args.seed is not None:
            data["seed"] = args.seed
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        with _client(args.server) as client:
            payload = _post(client, "/run", data)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    batch = ExperimentBatch.model_validate(payload)
    out_dir = Path(args.out or batch.config.output.path)
    fmt = batch.config.output.format
    try:
        if fmt in ("json", "both"):
            _write(out_dir / "batch.json", batch_to_json(batch))
        if fmt in ("csv", "both"):
            _write(out_dir / "runs.csv", batch_to_csv(batch))
        summary = {
            "config_hash": batch.config_hash,
            "aggregate": batch.aggregate.model_dump(mode="json"),
            "acceptance_passed": batch.acceptance_passed,
            "acceptance_detail": batch.acceptance_detail,
        }
        _write(
            out_dir / "summary.json",
            json.dumps(summary, indent=2, sort_keys=True) + "\n",
        )
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO

    agg = batch.aggregate
    print(f"protocol={batch.config.protocol} runs={agg.runs} "
          f"aborted={agg.aborted_runs} hash={batch.config_hash[:12]}")
    if agg.qber_mean is not None:
        print(f"qber_mean={agg.qber_mean:.4f}")
    if agg.bell_s_mean is not None:
        print(f"bell_s_mean={agg.bell_s_mean:.4f}")
    if batch.acceptance_passed is not None:
        for entry in batch.acceptance_detail:
            print(
                f"acceptance {entry['metric']}: value={entry['value']} "
                f"bounds=[{entry['min']}, {entry['max']}] "
                f"{'ok' if entry['passed'] else 'MISSED'}"
            )
        if not batch.acceptance_passed:
            return EXIT_ACCEPTANCE
    return EXIT_OK


def cmd_attack_demo(args) -> int:
    payload = {"seed": args.seed, "repetitions": args.repetitions}
    with _client(args.server) as client:
        report = _post(client, "/attack-demo", payload)

    header = f"{'protocol':<14}{'runs':>6}{'eve-key-recovery':>18}{'rejection':>11}{'k':>8}"
    lines = [header, "-" * len(header)]
    for row in report["rows"]:
        lines.append(
            f"{row['protocol']:<14}{row['runs']:>6}"
            f"{row['eve_key_recovery_rate']:>18.2f}"
            f"{row['rejection_rate']:>11.2f}"
            f"{row['mean_check_bits']:>8.1f}"
        )
    table = "\n".join(lines)
    print(table)
    if args.out:
        try:
            _write(
                Path(args.out) / "attack_demo.json",
                json.dumps(report, indent=2, sort_keys=True) + "\n",
            )
            _write(Path(args.out) / "attack_demo.txt", table + "\n")
        except OSError as exc:
            print(f"i/o failure: {exc}", file=sys.stderr)
            return EXIT_IO
    return EXIT_OK


def cmd_bell_test(args) -> int:
    payload = {"pairs": args.pairs, "seed": args.seed}
    try:
        with _client(args.server) as client:
            report = _post(client, "/bell-test", payload)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(
        f"pairs={report['pairs']} seed={report['seed']} "
        f"S={report['s']:.4f} |dev from 2*sqrt(2)|={report['deviation_from_quantum']:.4f} "
        f"verdict={report['verdict']}"
    )
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("qkdauth.service.app:app", host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qkdauth",
        description="QKD-with-authentication experiment runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a config-file experiment batch")
    p_run.add_argument("--config", required=True, help="TOML or JSON config file")
    p_run.add_argument("--seed", type=int, default=None, help="override the seed")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--server", default=None, help="remote service URL")
    p_run.set_defaults(func=cmd_run)

    p_demo = sub.add_parser("attack-demo", help="MITM: plain EPR vs authenticated")
    p_demo.add_argument("--out", default=None)
    p_demo.add_argument("--seed", type=int, default=0)
    p_demo.add_argument("--repetitions", type=int, default=20)
    p_demo.add_argument("--server", default=None)
    p_demo.set_defaults(func=cmd_attack_demo)

    p_bell = sub.add_parser("bell-test", help="estimate the Bell statistic")
    p_bell.add_argument("--pairs", type=int, default=100_000)
    p_bell.add_argument("--seed", type=int, default=0)
    p_bell.add_argument("--server", default=None)
    p_bell.set_defaults(func=cmd_bell_test)

    p_serve = sub.add_parser("serve", help="start the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
