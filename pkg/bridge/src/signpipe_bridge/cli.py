"""Command-line entry point."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Any

from .config import BACKEND_NAMES, BridgeConfig
from .errors import BridgeError, ConfigError
from .serve import serve


def _parse_model_params(pairs: list[str] | None) -> dict[str, Any]:
    """key=value pairs; values parse as JSON when they can, else stay strings."""
    params: dict[str, Any] = {}
    for pair in pairs or []:
        key, sep, raw = pair.partition("=")
        if not sep or not key:
            raise ConfigError(f"--model-param expects key=value, got {pair!r}")
        try:
            params[key] = json.loads(raw)
        except json.JSONDecodeError:
            params[key] = raw
    return params


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="signpipe-bridge",
        description="Serve one pose-extraction session over stdin/stdout.",
    )
    parser.add_argument(
        "--backend",
        choices=BACKEND_NAMES,
        help="which toolkit to load (required unless --mock)",
    )
    parser.add_argument(
        "--mock",
        action="store_true",
        help="answer zero landmarks without loading any toolkit",
    )
    parser.add_argument("--device", default="cpu", help="device hint for the toolkit")
    parser.add_argument(
        "--model-param",
        action="append",
        metavar="KEY=VALUE",
        help="toolkit constructor argument, repeatable",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = None
        if args.backend is not None:
            config = BridgeConfig(
                backend=args.backend,
                model_params=_parse_model_params(args.model_param),
                device=args.device,
            )
        return serve(sys.stdin, sys.stdout, mock=args.mock, config=config)
    except ConfigError as exc:
        print(f"signpipe-bridge: error: {exc}", file=sys.stderr)
        return 2
    except BridgeError as exc:
        print(f"signpipe-bridge: error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        print("signpipe-bridge: error: output stream closed", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
