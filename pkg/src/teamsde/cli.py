"""Thin-client command line.

Every verb reads a YAML config, submits it to the HTTP service, and writes the
returned artifacts into --out.  By default the service runs in-process (the
same FastAPI app served over an ASGI transport, no network); --server points
the client at a remote instance instead.

Exit codes: 0 success, 2 configuration error, 3 solver divergence.
"""

from __future__ import annotations

import asyncio
import json
import os
import sys

import click
import httpx

from .service import create_app


async def _post(server, endpoint: str, payload: dict) -> httpx.Response:
    if server:
        async with httpx.AsyncClient(base_url=server, timeout=None) as client:
            return await client.post(f"/v1/{endpoint}", json=payload)
    transport = httpx.ASGITransport(app=create_app())
    async with httpx.AsyncClient(transport=transport, base_url="http://teamsde.local", timeout=None) as client:
        return await client.post(f"/v1/{endpoint}", json=payload)


def _submit(endpoint, config_path, seed, out, server, export_ensembles):
    try:
        with open(config_path) as fh:
            config_yaml = fh.read()
    except OSError as err:
        click.echo(f"error: cannot read config: {err}", err=True)
        sys.exit(2)
    payload = {"config_yaml": config_yaml, "export_ensembles": export_ensembles}
    if seed is not None:
        payload["seed"] = seed
    resp = asyncio.run(_post(server, endpoint, payload))
    if resp.status_code == 422:
        detail = resp.json().get("detail", {})
        click.echo("configuration rejected:", err=True)
        for prob in detail.get("details") or [{"field": "", "message": detail.get("message", "invalid config")}]:
            click.echo(f"  {prob.get('field', '')}: {prob.get('message', '')}", err=True)
        sys.exit(2)
    resp.raise_for_status()
    body = resp.json()

    os.makedirs(out, exist_ok=True)
    run_path = os.path.join(out, "run.json")
    with open(run_path, "w") as fh:
        json.dump(body["run"], fh, sort_keys=True, indent=2)
        fh.write("\n")
    written = [run_path]
    if body.get("convergence_csv"):
        p = os.path.join(out, "convergence.csv")
        with open(p, "w") as fh:
            fh.write(body["convergence_csv"])
        written.append(p)
    for name, text in (body.get("extras") or {}).items():
        p = os.path.join(out, name)
        with open(p, "w") as fh:
            fh.write(text)
        written.append(p)
    for p in written:
        click.echo(p)
    if body["status"] != "ok":
        err = body.get("error") or {}
        click.echo(f"solver failed: {err.get('message', body['status'])}", err=True)
        sys.exit(3)


def _common(fn):
    fn = click.option("--config", "config_path", required=True, type=click.Path(), help="YAML run config")(fn)
    fn = click.option("--seed", type=int, default=None, help="Override the config seed")(fn)
    fn = click.option("--out", default="runs", show_default=True, help="Artifact output directory")(fn)
    fn = click.option("--server", default=None, help="Remote service URL (default: in-process)")(fn)
    fn = click.option("--export-ensembles", is_flag=True, help="Also export ensemble CSVs")(fn)
    return fn


@click.group()
def main():
    """Solver for decentralized team decision problems in stochastic differential systems."""


@main.command()
@_common
@click.option("--mode", default=None, help="Override the config's mode")
def run(config_path, seed, out, server, export_ensembles, mode):
    """Execute the mode declared in the config (or --mode)."""
    endpoint = {"team_pbp": "solve", "evaluate_only": "evaluate", "checks_only": "check", "oracle": "oracle"}.get(
        mode, "run"
    )
    _submit(endpoint, config_path, seed, out, server, export_ensembles)


@main.command()
@_common
def solve(config_path, seed, out, server, export_ensembles):
    """Person-by-person strategy improvement until stationarity."""
    _submit("solve", config_path, seed, out, server, export_ensembles)


@main.command()
@_common
def evaluate(config_path, seed, out, server, export_ensembles):
    """Monte Carlo cost of the configured initial strategy."""
    _submit("evaluate", config_path, seed, out, server, export_ensembles)


@main.command()
@_common
def check(config_path, seed, out, server, export_ensembles):
    """Assumption probes, convexity probes, and the first-order identity check."""
    _submit("check", config_path, seed, out, server, export_ensembles)


@main.command()
@_common
def oracle(config_path, seed, out, server, export_ensembles):
    """Centralized Riccati oracle for linear-quadratic configs."""
    _submit("oracle", config_path, seed, out, server, export_ensembles)


@main.command()
@_common
def tree(config_path, seed, out, server, export_ensembles):
    """Exhaustive enumeration oracle on a discrete-tree config."""
    _submit("tree", config_path, seed, out, server, export_ensembles)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8711, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
