"""Command-line client for the tuner service.

Every command talks HTTP to the service. With ``--server`` (or
``PARETO_TUNER_SERVER``) it targets a running instance; otherwise it mounts
the application in-process, so no daemon is needed for local work. Exit
codes: 0 success, 2 configuration error, 3 evaluator failure.

Commands: ``run`` (execute an experiment), ``compare`` (two archive sets),
``importance`` (MDI analysis), ``space dump`` (print the default search
space), ``serve`` (start the HTTP service).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import httpx

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EVALUATOR = 3
EXIT_OTHER = 1

SERVER_ENV_VAR = "PARETO_TUNER_SERVER"


def _make_client(server: str | None) -> httpx.Client:
    url = server or os.environ.get(SERVER_ENV_VAR)
    if url:
        return httpx.Client(base_url=url, timeout=httpx.Timeout(3600.0, connect=30.0))
    from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app)


def _fail(response: httpx.Response) -> int:
    """Print the service's error and translate it to an exit code."""
    try:
        body = response.json()
        error = body.get("error", "")
        detail = body.get("detail", response.text)
    except ValueError:
        error, detail = "", response.text
    print(f"error: {detail}", file=sys.stderr)
    if response.status_code == 400 or error == "config_error":
        return EXIT_CONFIG
    if response.status_code == 502 or error == "evaluator_failure":
        return EXIT_EVALUATOR
    return EXIT_OTHER


def _cmd_run(client: httpx.Client, args: argparse.Namespace) -> int:
    config: dict = {}
    if args.config is not None:
        try:
            config = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            print(f"error: cannot read config {args.config}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except json.JSONDecodeError as exc:
            print(f"error: config {args.config} is not valid JSON: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if not isinstance(config, dict):
            print(f"error: config {args.config} must hold a JSON object", file=sys.stderr)
            return EXIT_CONFIG
    if args.repeats is not None:
        config["repeats"] = args.repeats
    if args.seed is not None:
        config["master_seed"] = args.seed
    body = {"config": config, "out_dir": args.out}
    response = client.post("/runs", json=body)
    if response.status_code != 200:
        return _fail(response)
    doc = response.json()
    for run in doc["runs"]:
        flag = " INCOMPLETE" if run["incomplete"] else ""
        print(f"run {run['index']:3d}  seed {run['seed']}  records {run['records']}  "
              f"{run['file']}{flag}")
    print(f"manifest: {doc['manifest']}")
    return EXIT_OK


def _cmd_compare(client: httpx.Client, args: argparse.Namespace) -> int:
    body = {
        "dir_a": args.a,
        "dir_b": args.b,
        "label_a": args.label_a,
        "label_b": args.label_b,
        "ref_quality_loss": args.ref_quality,
        "ref_time_ms": args.ref_time,
    }
    response = client.post("/compare", json=body)
    if response.status_code != 200:
        return _fail(response)
    doc = response.json()
    print(doc["summary"], end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.txt").write_text(doc["summary"], encoding="utf-8")
        (out / "comparison.tsv").write_text(doc["table"], encoding="utf-8")
        print(f"wrote {out / 'comparison.txt'} and {out / 'comparison.tsv'}")
    return EXIT_OK


def _cmd_importance(client: httpx.Client, args: argparse.Namespace) -> int:
    body = {
        "archive_dir": args.archives,
        "target": args.target,
        "repeats": args.repeats,
        "search_budget": args.search_budget,
        "base_seed": args.seed,
    }
    response = client.post("/importance", json=body)
    if response.status_code != 200:
        return _fail(response)
    doc = response.json()
    print(doc["chart"], end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        prefix = f"importance-{args.target}"
        (out / f"{prefix}.tsv").write_text(doc["table"], encoding="utf-8")
        (out / f"{prefix}-groups.tsv").write_text(doc["groups_table"], encoding="utf-8")
        (out / f"{prefix}-chart.txt").write_text(doc["chart"], encoding="utf-8")
        print(f"wrote {prefix}.tsv, {prefix}-groups.tsv, {prefix}-chart.txt in {out}")
    return EXIT_OK


def _cmd_space(client: httpx.Client, args: argparse.Namespace) -> int:
    if args.space_cmd != "dump":
        print("error: unknown space subcommand", file=sys.stderr)
        return EXIT_CONFIG
    response = client.get("/space/default")
    if response.status_code != 200:
        return _fail(response)
    print(json.dumps(response.json(), indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pareto-tuner",
        description="Multi-objective tuning of generation parameters for time and quality.",
    )
    parser.add_argument(
        "--server",
        default=None,
        help=f"service base URL (default: ${SERVER_ENV_VAR} or in-process)",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment (repeated optimization runs)")
    p_run.add_argument("--config", default=None, help="experiment config file (JSON)")
    p_run.add_argument("--repeats", type=int, default=None, help="override repeat count")
    p_run.add_argument("--seed", type=int, default=None, help="override master seed")
    p_run.add_argument("--out", default=None, help="output directory for archives")

    p_cmp = sub.add_parser("compare", help="compare two archive directories")
    p_cmp.add_argument("--a", required=True, help="archive directory, side A")
    p_cmp.add_argument("--b", required=True, help="archive directory, side B")
    p_cmp.add_argument("--label-a", default="a")
    p_cmp.add_argument("--label-b", default="b")
    p_cmp.add_argument("--ref-quality", type=float, default=None, help="quality-loss reference")
    p_cmp.add_argument("--ref-time", type=float, default=None, help="time reference, ms")
    p_cmp.add_argument("--out", default=None, help="write table + summary files here")

    p_imp = sub.add_parser("importance", help="random-forest MDI feature importance")
    p_imp.add_argument("--in", dest="archives", required=True, help="archive directory")
    p_imp.add_argument("--target", required=True, choices=["time", "quality"])
    p_imp.add_argument("--repeats", type=int, default=10)
    p_imp.add_argument("--search-budget", type=int, default=20)
    p_imp.add_argument("--seed", type=int, default=0, help="base seed for the repeats")
    p_imp.add_argument("--out", default=None, help="write report files here")

    p_space = sub.add_parser("space", help="search-space utilities")
    space_sub = p_space.add_subparsers(dest="space_cmd", required=True)
    space_sub.add_parser("dump", help="print the default search-space definition")

    p_serve = sub.add_parser("serve", help="start the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8321)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "serve":
        return _cmd_serve(args)
    try:
        with _make_client(args.server) as client:
            if args.command == "run":
                return _cmd_run(client, args)
            if args.command == "compare":
                return _cmd_compare(client, args)
            if args.command == "importance":
                return _cmd_importance(client, args)
            if args.command == "space":
                return _cmd_space(client, args)
    except httpx.HTTPError as exc:
        print(f"error: cannot reach service: {exc}", file=sys.stderr)
        return EXIT_OTHER
    print(f"error: unknown command {args.command}", file=sys.stderr)
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
