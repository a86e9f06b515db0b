"""Thin command-line client for the reflectool service.

By default each command drives an embedded in-process service instance, so
no server needs to be running; point ``--server`` at a ``reflectool serve``
deployment to run against a remote one. Exit codes: 0 success, 2 format
errors, 3 backend errors.
"""

from __future__ import annotations

import json
import sys

import click
import httpx

from reflectool.harness import METRIC_FIELDS

EXIT_CODES = {"FormatError": 2, "IOError": 2, "BackendError": 3}


def make_client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from reflectool.service.app import app

    return TestClient(app)


def call(client: httpx.Client, path: str, payload: dict) -> dict:
    response = client.post(path, json=payload)
    if response.status_code >= 400:
        try:
            body = response.json()
        except ValueError:
            body = {}
        error = body.get("error", f"HTTP {response.status_code}")
        detail = body.get("detail", response.text)
        click.echo(f"error: {error}: {detail}", err=True)
        sys.exit(EXIT_CODES.get(error, 1))
    return response.json()


def parse_backend(spec: str, seed: int | None) -> dict:
    """--backend scripted:<file> or http:<base_url>."""
    kind, sep, rest = spec.partition(":")
    if not sep or kind not in ("scripted", "http") or not rest:
        raise click.BadParameter("expected scripted:<file> or http:<base_url>")
    if kind == "scripted":
        return {"kind": "scripted", "script_path": rest, "seed": seed}
    return {"kind": "http", "base_url": rest, "seed": seed}


def print_metrics(metrics: dict) -> None:
    for name in METRIC_FIELDS:
        click.echo(f"{name}: {metrics[name]:.2f}")


backend_option = click.option(
    "--backend",
    "backend_spec",
    required=True,
    help="Generation backend: scripted:<script.json> or http:<base_url>.",
)
env_options = [
    click.option("--tables", "tables_dir", default=None, help="Directory of CSV tables (+ manual.json)."),
    click.option("--corpus", "corpus_path", default=None, help="JSONL passage corpus."),
    click.option("--gazetteer", "gazetteer_path", default=None, help="Newline-delimited entity terms."),
]


def with_env_options(command):
    for option in env_options:
        command = option(command)
    return command


@click.group()
@click.option("--server", default=None, envvar="REFLECTOOL_SERVER", help="Remote service URL (default: embedded).")
@click.pass_context
def main(ctx: click.Context, server: str | None) -> None:
    """Reflection-aware tool-augmented agent runtime."""
    ctx.obj = server


@main.command()
@click.option("--suite", required=True, help="Task suite JSONL.")
@click.option("--out", "out_dir", required=True, help="Run directory for checkpoints.")
@click.option("--checkpoint-every", default=5, show_default=True)
@click.option("--always-reflect", is_flag=True, help="Reflect and retry even when the first attempt succeeds.")
@click.option("--max-steps", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@backend_option
@with_env_options
@click.pass_obj
def optimize(server, suite, out_dir, checkpoint_every, always_reflect, max_steps, seed, backend_spec, tables_dir, corpus_path, gazetteer_path):
    """Run the optimization stage: build memory and experience checkpoints."""
    payload = {
        "suite_path": suite,
        "out_dir": out_dir,
        "checkpoint_every": checkpoint_every,
        "always_reflect": always_reflect,
        "max_steps": max_steps,
        "backend": parse_backend(backend_spec, seed),
        "env": {"tables_dir": tables_dir, "corpus_path": corpus_path, "gazetteer_path": gazetteer_path},
    }
    with make_client(server) as client:
        body = call(client, "/optimize", payload)
    click.echo(
        f"optimized {body['tasks']} tasks: memory size {body['memory_size']}, "
        f"{body['suggestions_merged']} suggestions merged"
    )
    click.echo(f"checkpoints: {', '.join(str(cp['step']) for cp in body['checkpoints'])}")
    click.echo(f"manifest: {body['manifest_path']}")


@main.command()
@click.option("--suite", required=True, help="Task suite JSONL.")
@click.option("--out", "out_dir", required=True, help="Output directory for trajectories/records/metrics.")
@click.option("--memory", "memory_path", default=None, help="Memory store JSON from an optimize run.")
@click.option("--ledger", "ledger_path", default=None, help="Experience ledger JSON from an optimize run.")
@click.option("--verifier", type=click.Choice(["none", "refine", "select"]), default="none", show_default=True)
@click.option("--n", default=1, show_default=True, help="Verification size (refinement steps / candidate count).")
@click.option("--demo-k", default=2, show_default=True, help="Demonstrations to retrieve per task.")
@click.option("--max-steps", default=10, show_default=True)
@click.option("--workers", default=1, show_default=True)
@click.option("--tool-steps-only", is_flag=True, help="Use tool steps as the step-error denominator.")
@click.option("--seed", default=0, show_default=True)
@backend_option
@with_env_options
@click.pass_obj
def infer(server, suite, out_dir, memory_path, ledger_path, verifier, n, demo_k, max_steps, workers, tool_steps_only, seed, backend_spec, tables_dir, corpus_path, gazetteer_path):
    """Run the inference stage over a suite and report metrics."""
    payload = {
        "suite_path": suite,
        "out_dir": out_dir,
        "memory_path": memory_path,
        "ledger_path": ledger_path,
        "verifier": {"mode": verifier, "n": n},
        "demo_k": demo_k,
        "max_steps": max_steps,
        "workers": workers,
        "tool_steps_only": tool_steps_only,
        "backend": parse_backend(backend_spec, seed),
        "env": {"tables_dir": tables_dir, "corpus_path": corpus_path, "gazetteer_path": gazetteer_path},
    }
    with make_client(server) as client:
        body = call(client, "/infer", payload)
    print_metrics(body["metrics"])
    click.echo(f"trajectories: {body['trajectories_path']}")
    click.echo(f"records: {body['records_path']}")


@main.command("sweep-opt")
@click.option("--suite", required=True, help="Test suite JSONL.")
@click.option("--run-dir", required=True, help="Optimize run directory with manifest.json.")
@click.option("--out", "out_csv", required=True, help="Output CSV path.")
@click.option("--verifier", type=click.Choice(["none", "refine", "select"]), default="none", show_default=True)
@click.option("--n", default=1, show_default=True)
@click.option("--demo-k", default=2, show_default=True)
@click.option("--max-steps", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@backend_option
@with_env_options
@click.pass_obj
def sweep_opt(server, suite, run_dir, out_csv, verifier, n, demo_k, max_steps, seed, backend_spec, tables_dir, corpus_path, gazetteer_path):
    """Evaluate a test suite against every optimization checkpoint."""
    payload = {
        "suite_path": suite,
        "run_dir": run_dir,
        "out_csv": out_csv,
        "verifier": {"mode": verifier, "n": n},
        "demo_k": demo_k,
        "max_steps": max_steps,
        "backend": parse_backend(backend_spec, seed),
        "env": {"tables_dir": tables_dir, "corpus_path": corpus_path, "gazetteer_path": gazetteer_path},
    }
    with make_client(server) as client:
        body = call(client, "/sweep/optimization", payload)
    for row in body["rows"]:
        click.echo(f"checkpoint {row['checkpoint']}: accuracy {row['accuracy']:.2f}")
    click.echo(f"csv: {body['csv_path']}")


@main.command("sweep-n")
@click.option("--suite", required=True)
@click.option("--memory", "memory_path", default=None)
@click.option("--ledger", "ledger_path", default=None)
@click.option("--n-values", required=True, help="Comma-separated verification sizes, e.g. 1,2,4.")
@click.option("--out", "out_csv", required=True, help="Output CSV path.")
@click.option("--demo-k", default=2, show_default=True)
@click.option("--max-steps", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@backend_option
@with_env_options
@click.pass_obj
def sweep_n(server, suite, memory_path, ledger_path, n_values, out_csv, demo_k, max_steps, seed, backend_spec, tables_dir, corpus_path, gazetteer_path):
    """Evaluate both verification methods across sizes n."""
    try:
        sizes = [int(part) for part in n_values.split(",") if part.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"--n-values: {exc}") from exc
    payload = {
        "suite_path": suite,
        "memory_path": memory_path,
        "ledger_path": ledger_path,
        "n_values": sizes,
        "out_csv": out_csv,
        "demo_k": demo_k,
        "max_steps": max_steps,
        "backend": parse_backend(backend_spec, seed),
        "env": {"tables_dir": tables_dir, "corpus_path": corpus_path, "gazetteer_path": gazetteer_path},
    }
    with make_client(server) as client:
        body = call(client, "/sweep/verification", payload)
    for row in body["rows"]:
        click.echo(f"{row['mode']} n={row['n']}: accuracy {row['accuracy']:.2f}")
    click.echo(f"csv: {body['csv_path']}")


@main.command()
@click.option("--records", "records_path", required=True, help="records.jsonl from an infer run.")
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json", show_default=True)
@click.option("--out", "out_path", required=True)
@click.option("--tool-steps-only", is_flag=True)
@click.pass_obj
def report(server, records_path, fmt, out_path, tool_steps_only):
    """Recompute suite metrics from per-task records and write a report."""
    payload = {
        "records_path": records_path,
        "format": fmt,
        "out_path": out_path,
        "tool_steps_only": tool_steps_only,
    }
    with make_client(server) as client:
        body = call(client, "/report", payload)
    print_metrics(body["metrics"])
    click.echo(f"report: {body['out_path']}")


@main.command()
@click.option("--memory", "memory_path", required=True)
@click.option("--query", required=True)
@click.option("--k", default=2, show_default=True)
@click.pass_obj
def retrieve(server, memory_path, query, k):
    """Query a memory store and show the top-k demonstrations."""
    payload = {"memory_path": memory_path, "query": query, "k": k}
    with make_client(server) as client:
        body = call(client, "/memory/retrieve", payload)
    for entry in body["entries"]:
        click.echo(f"{entry['score']:.4f}  {entry['task_id']}  {entry['instruction']}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host: str, port: int) -> None:
    """Run the service with uvicorn."""
    import uvicorn

    uvicorn.run("reflectool.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
