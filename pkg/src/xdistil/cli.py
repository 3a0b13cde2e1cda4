"""Command-line client for the pipeline.

Subcommands map one-to-one onto the service endpoints. By default the
operation runs in-process (same handlers the HTTP service uses); with
--server URL the request is POSTed to a running service instead.

Exit codes: 0 success, 1 contract error, 2 configuration/IO error or
bad usage. On success the final metrics are printed to stdout as a
single JSON line; the full report is written to <output_dir>/report.jsonl.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

from .config import RunConfig, load_config
from .errors import CheckpointError, ConfigError, ContractError, XdistilError

COMMANDS = ("finetune", "distil", "select-task", "augment",
            "swap-embeddings", "eval", "gradcheck")

COMMAND_HELP = {
    "finetune": "CE-train a model on labeled data and save a checkpoint",
    "distil": "run the five-stage teacher-to-student transfer",
    "select-task": "pick the best source task from a transfer-score CSV",
    "augment": "build KNN transfer pairs from a sentence corpus",
    "swap-embeddings": "install projected wide embeddings for a new vocabulary",
    "eval": "evaluate a checkpoint on labeled or BIO-tagged data",
    "gradcheck": "run the registered gradient-check suites",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xdistil",
        description="Progressive transformer distillation pipeline.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name in COMMANDS:
        p = sub.add_parser(name, help=COMMAND_HELP[name])
        p.add_argument("--config", metavar="PATH",
                       help="JSON run configuration (defaults apply if omitted)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="override a config value by dotted key, repeatable")
        p.add_argument("--precision", choices=["f32", "f64"],
                       help="numeric precision for this run")
        p.add_argument("--server", metavar="URL",
                       help="send the run to a running xdistil service")
    return parser


def _run_remote(server: str, command: str, config: RunConfig) -> dict:
    import httpx

    url = server.rstrip("/") + "/v1/" + command
    response = httpx.post(url, json={"config": config.model_dump()}, timeout=None)
    if response.status_code >= 400:
        try:
            body = response.json()
        except ValueError:
            raise XdistilError(f"{url}: HTTP {response.status_code}") from None
        kind = body.get("error_kind", "internal")
        detail = body.get("detail", response.text)
        if kind == "contract":
            raise ContractError(detail)
        if kind == "config":
            raise ConfigError(detail)
        if kind == "io":
            raise CheckpointError(detail)
        raise XdistilError(detail)
    return response.json()


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on unknown subcommands / bad flags
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2

    try:
        config = load_config(args.config, args.overrides, args.precision)
        if args.server:
            result = _run_remote(args.server, args.command, config)
        else:
            from .service.handlers import HANDLERS

            result = HANDLERS[args.command](config)
    except ContractError as exc:
        print(f"error (contract): {exc}", file=sys.stderr)
        return 1
    except (ConfigError, CheckpointError, OSError) as exc:
        print(f"error (config/io): {exc}", file=sys.stderr)
        return 2
    except XdistilError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    print(json.dumps(result, sort_keys=True))
    if args.command == "gradcheck" and not result.get("passed", False):
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
