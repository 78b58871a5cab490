"""Command-line client for the optimizer service.

Every subcommand talks HTTP. By default the service runs in-process, so no
server is needed; --server points the same commands at a remote instance.
File outputs are always written on the client side.
"""

from __future__ import annotations

import asyncio
import csv
import json
import sys
from pathlib import Path

import click
import httpx

from .experiments import (
    load_manifest,
    write_convergence_csv,
    write_migration_csv,
    write_trace_csv,
    persist_campaign_files,
)

EXIT_CONFIG = 2
EXIT_BUDGET = 3


class _InProcessTransport(httpx.BaseTransport):
    """Sync bridge into the ASGI app, one event loop per request."""

    def __init__(self, app):
        self._asgi = httpx.ASGITransport(app=app)

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        async def call():
            response = await self._asgi.handle_async_request(request)
            body = b"".join([chunk async for chunk in response.stream])
            return httpx.Response(
                response.status_code,
                headers=response.headers,
                content=body,
                request=request,
            )

        return asyncio.run(call())


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from .service import create_app

    return httpx.Client(
        transport=_InProcessTransport(create_app()),
        base_url="http://islekit.local",
        timeout=None,
    )


def _check(response: httpx.Response) -> dict:
    if response.status_code < 400:
        return response.json()
    try:
        body = response.json()
    except ValueError:
        body = {"error": "unknown", "detail": response.text}
    detail = body.get("detail", "request failed")
    kind = body.get("error", "unknown")
    click.echo(f"error ({kind}): {detail}", err=True)
    if kind in ("config", "contract"):
        sys.exit(EXIT_CONFIG)
    if kind == "budget":
        sys.exit(EXIT_BUDGET)
    sys.exit(1)


def _load_config_dict(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        click.echo(f"error (config): cannot read {path}: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except json.JSONDecodeError as exc:
        click.echo(f"error (config): {path} is not valid JSON: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    if not isinstance(data, dict):
        click.echo(f"error (config): {path} must hold a JSON object", err=True)
        sys.exit(EXIT_CONFIG)
    return data


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        click.echo(f"error (config): {flag} expects comma-separated integers", err=True)
        sys.exit(EXIT_CONFIG)
    if not values:
        click.echo(f"error (config): {flag} is empty", err=True)
        sys.exit(EXIT_CONFIG)
    return values


@click.group()
def main():
    """Offline surrogate-assisted optimization over an island network."""


@main.command("run")
@click.option("--config", "config_path", type=click.Path(), default=None, help="JSON config file.")
@click.option("--function", required=True, help="Benchmark function name.")
@click.option("--dim", required=True, type=int, help="Problem dimensionality.")
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--variant", default="Full", show_default=True, help="Ablation variant tag.")
@click.option("--threads", default=None, type=int, help="Worker count; >1 selects the parallel scheduler.")
@click.option("--out", "out_dir", type=click.Path(), default=None, help="Directory for result files.")
@click.option("--server", default=None, help="Remote service URL; default runs in-process.")
def run_cmd(config_path, function, dim, seed, variant, threads, out_dir, server):
    """Run one optimization and report the outcome."""
    body = {
        "function": function,
        "dim": dim,
        "seed": seed,
        "config": _load_config_dict(config_path),
        "variant": variant,
        "include_trace": out_dir is not None,
    }
    if threads is not None:
        body["threads"] = threads
    with _client(server) as client:
        payload = _check(client.post("/runs", json=body))
    result = payload["result"]
    if out_dir is not None:
        directory = Path(out_dir)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "result.json", "w") as handle:
            json.dump(result, handle, indent=2)
        write_convergence_csv(result["per_epoch"], directory / "convergence.csv")
        write_trace_csv(payload.get("trace") or [], directory / "trace.csv")
        write_migration_csv(payload.get("migration") or [], directory / "migration.csv")
        click.echo(f"wrote result.json, convergence.csv, trace.csv, migration.csv to {directory}")
    click.echo(json.dumps(result, indent=2))


@main.command("campaign")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--server", default=None, help="Remote service URL; default runs in-process.")
def campaign_cmd(manifest_path, server):
    """Sweep functions x dims x variants x seeds from a manifest file."""
    try:
        manifest = load_manifest(manifest_path)
    except Exception as exc:
        click.echo(f"error (config): {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    body = {k: manifest[k] for k in ("config", "functions", "dims", "variants", "seeds", "threads")}
    body["include_results"] = True
    with _client(server) as client:
        payload = _check(client.post("/campaigns", json=body))
    paths = persist_campaign_files(
        manifest["out"],
        payload["run_id"],
        payload["rows"],
        payload["aggregates"],
        payload["failures"],
        payload.get("results"),
    )
    click.echo(f"campaign {payload['run_id']}: {len(payload['rows'])} runs, "
               f"{len(payload['failures'])} failures")
    for kind, path in paths.items():
        click.echo(f"  {kind}: {path}")
    if payload["failures"]:
        sys.exit(1)


@main.command("profile")
@click.option("--in", "input_path", required=True, type=click.Path(), help="Campaign results CSV.")
@click.option("--out", "out_path", type=click.Path(), default=None, help="Profile CSV destination.")
@click.option("--server", default=None, help="Remote service URL; default runs in-process.")
def profile_cmd(input_path, out_path, server):
    """Build ratio-to-best CDF curves from campaign results."""
    try:
        with open(input_path, newline="") as handle:
            rows = list(csv.DictReader(handle))
    except OSError as exc:
        click.echo(f"error (config): cannot read {input_path}: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    with _client(server) as client:
        payload = _check(client.post("/profiles", json={"rows": rows}))
    solvers, taus, cdfs = payload["solvers"], payload["taus"], payload["cdfs"]
    lines = [["tau"] + solvers]
    for t, tau in enumerate(taus):
        lines.append([repr(tau)] + [repr(cdfs[s][t]) for s in range(len(solvers))])
    if out_path is not None:
        with open(out_path, "w", newline="") as handle:
            csv.writer(handle).writerows(lines)
        click.echo(f"wrote profile for {len(solvers)} solvers to {out_path}")
    else:
        for line in lines:
            click.echo(",".join(str(v) for v in line))


@main.command("speedup")
@click.option("--config", "config_path", type=click.Path(), default=None, help="JSON config file.")
@click.option("--threads", default="1,2,4,8", show_default=True, help="Comma-separated worker counts.")
@click.option("--seeds", default="0,1,2", show_default=True, help="Comma-separated seeds.")
@click.option("--function", default="elliptic", show_default=True)
@click.option("--dim", default=50, type=int, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None, help="Speedup CSV destination.")
@click.option("--server", default=None, help="Remote service URL; default runs in-process.")
def speedup_cmd(config_path, threads, seeds, function, dim, out_path, server):
    """Time the serial scheduler against the parallel one."""
    body = {
        "config": _load_config_dict(config_path),
        "thread_counts": _parse_int_list(threads, "--threads"),
        "seeds": _parse_int_list(seeds, "--seeds"),
        "function": function,
        "dim": dim,
    }
    with _client(server) as client:
        payload = _check(client.post("/speedups", json=body))
    medians = payload["medians"]
    lines = [["threads", "median_speedup"]]
    for k in payload["thread_counts"]:
        lines.append([k, repr(medians[str(k)] if str(k) in medians else medians[k])])
    if out_path is not None:
        with open(out_path, "w", newline="") as handle:
            csv.writer(handle).writerows(lines)
        click.echo(f"wrote speedup table to {out_path}")
    for line in lines:
        click.echo(",".join(str(v) for v in line))


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, type=int, show_default=True)
def serve_cmd(host, port):
    """Start the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
