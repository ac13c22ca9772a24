"""The `forge` command: a thin client for the generation service.

Subcommands map one-to-one onto service endpoints. Without --server the
request is served by an in-process app instance, so no server needs to be
running; with --server URL the same requests go over the network. Exit code
is 0 on success; failures print a JSON error object to stderr.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path

import httpx
import yaml


def _load_config_payload(path: str | None) -> dict:
    if path is None:
        return {}
    payload = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(payload, dict):
        raise ValueError("config file must contain a mapping")
    return payload


async def _post(server: str | None, route: str, payload: dict, timeout: float) -> tuple[int, dict]:
    if server:
        async with httpx.AsyncClient(base_url=server, timeout=timeout) as client:
            response = await client.post(route, json=payload)
    else:
        from .service import app

        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(transport=transport, base_url="http://forge.local", timeout=timeout) as client:
            response = await client.post(route, json=payload)
    try:
        body = response.json()
    except json.JSONDecodeError:
        body = {"detail": response.text}
    return response.status_code, body


def _call(args: argparse.Namespace, route: str, payload: dict) -> int:
    try:
        status, body = asyncio.run(_post(args.server, route, payload, args.timeout))
    except (httpx.HTTPError, OSError, ValueError) as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 2
    if status >= 400:
        print(json.dumps({"error": body.get("detail", body), "status": status}), file=sys.stderr)
        return 1
    print(json.dumps(body, indent=2))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="forge", description="Aerial navigation data generation")
    parser.add_argument("--server", default=None, help="service URL; defaults to an in-process service")
    parser.add_argument("--timeout", type=float, default=3600.0, help="request timeout in seconds")
    sub = parser.add_subparsers(dest="command", required=True)

    p_scene = sub.add_parser("scene", help="generate one scene")
    p_scene.add_argument("--config", default=None, help="YAML/JSON config file")
    p_scene.add_argument("--seed", type=int, default=0)

    p_batch = sub.add_parser("batch", help="generate a batch of scenes")
    p_batch.add_argument("--config", default=None, help="YAML/JSON config file")
    p_batch.add_argument("--scenes", type=int, required=True)

    p_stats = sub.add_parser("stats", help="dataset statistics for an output root")
    p_stats.add_argument("--root", required=True)

    p_validate = sub.add_parser("validate", help="post-hoc eligibility audit of an output root")
    p_validate.add_argument("--root", required=True)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)

    args = parser.parse_args(argv)

    if args.command == "serve":
        import uvicorn

        uvicorn.run("skyforge.service:app", host=args.host, port=args.port)
        return 0

    try:
        if args.command == "scene":
            return _call(args, "/scene", {"seed": args.seed, "config": _load_config_payload(args.config)})
        if args.command == "batch":
            return _call(args, "/batch", {"scenes": args.scenes, "config": _load_config_payload(args.config)})
        if args.command == "stats":
            return _call(args, "/stats", {"root": args.root})
        if args.command == "validate":
            return _call(args, "/validate", {"root": args.root})
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 2
    raise AssertionError("unhandled command")


if __name__ == "__main__":
    sys.exit(main())
