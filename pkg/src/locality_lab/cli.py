"""Thin command-line client for the workbench service.

Each subcommand assembles a request model from a config file (JSON or TOML)
plus flag overrides and posts it to the service: by default an in-process
ASGI transport (no server needed), or a running server via ``--server``.

Exit codes: 0 success, 1 validation/config error, 2 runtime or connectivity
error, 3 theory violation (a non-vacuous reasoning-gap failure).
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import httpx

OUT_ENV_VAR = "LOCALITY_LAB_OUT"

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_VIOLATION = 3


class CliError(click.ClickException):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {path}", EXIT_VALIDATION)
    if p.suffix == ".toml":
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(p.read_text())
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"config is not valid JSON: {exc}", EXIT_VALIDATION) from exc


def _resolve_out(out: str | None, config: dict) -> str:
    resolved = out or config.get("out_dir") or os.environ.get(OUT_ENV_VAR)
    if not resolved:
        raise CliError(
            f"no output directory: pass --out, set out_dir in the config, "
            f"or export {OUT_ENV_VAR}",
            EXIT_VALIDATION,
        )
    return resolved


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from starlette.testclient import TestClient

        from .service import app

        return TestClient(app, raise_server_exceptions=False)


def _post(server: str | None, endpoint: str, payload: dict) -> dict:
    try:
        with _client(server) as client:
            response = client.post(endpoint, json=payload)
    except httpx.HTTPError as exc:
        raise CliError(f"service unreachable: {exc}", EXIT_RUNTIME) from exc
    if response.status_code >= 500:
        raise CliError(f"runtime error: {response.text}", EXIT_RUNTIME)
    if response.status_code >= 400:
        raise CliError(f"rejected: {response.text}", EXIT_VALIDATION)
    return response.json()


def _emit(doc: dict, fmt: str) -> None:
    if fmt == "json":
        click.echo(json.dumps(doc, indent=2, sort_keys=True))
        return
    rows = doc.get("summary")
    if isinstance(rows, list) and rows and isinstance(rows[0], dict):
        keys = list(rows[0])
        click.echo(",".join(keys))
        for row in rows:
            click.echo(",".join(str(row[k]) for k in keys))
    else:
        for key in sorted(doc):
            if not isinstance(doc[key], (list, dict)):
                click.echo(f"{key},{doc[key]}")


_common = [
    click.option("--config", "config_path", type=str, default=None, help="JSON or TOML config file."),
    click.option("--seed", type=int, default=None, help="Root random seed."),
    click.option("--out", type=str, default=None, help=f"Output directory (or ${OUT_ENV_VAR})."),
    click.option("--server", type=str, default=None, help="Remote service URL; in-process if omitted."),
    click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json"),
]


def common_options(fn):
    for option in reversed(_common):
        fn = option(fn)
    return fn


def _base_payload(config_path, seed, out):
    payload = _load_config(config_path)
    payload["out_dir"] = _resolve_out(out, payload)
    if seed is not None:
        payload["seed"] = seed
    return payload


@click.group()
def main() -> None:
    """Locality-structured Bayes-net workbench."""


@main.command()
@common_options
def gen(config_path, seed, out, server, fmt):
    """Generate candidate nets, rank held-out pairs, keep the best nets."""
    payload = _base_payload(config_path, seed, out)
    doc = _post(server, "/runs/gen", payload)
    _emit(doc, fmt)


@main.command()
@common_options
@click.option("--net", "net_file", type=str, default=None, help="Serialized net file.")
@click.option("--samples", "n_samples", type=int, default=None)
@click.option("--mode", type=click.Choice(["local", "wrong_local", "fully_observed"]), default=None)
@click.option("--workers", type=int, default=None, help="Parallel sample workers.")
def corpus(config_path, seed, out, server, fmt, net_file, n_samples, mode, workers):
    """Generate a training corpus for one net under an observation mode."""
    payload = _base_payload(config_path, seed, out)
    if net_file is not None:
        payload["net_file"] = net_file
    if n_samples is not None:
        payload["n_samples"] = n_samples
    if workers is not None:
        payload["workers"] = workers
    if mode is not None:
        payload.setdefault("observation", {})["mode"] = mode
    doc = _post(server, "/runs/corpus", payload)
    _emit(doc, fmt)


@main.command("eval")
@common_options
@click.option("--net", "net_file", type=str, default=None)
@click.option("--corpus", "corpus_file", type=str, default=None)
@click.option("--backend", type=str, default=None, help="oracle | empirical | remote:<host:port>")
@click.option("--m-samples", type=int, default=None, help="Monte Carlo samples per estimate.")
@click.option("--budget-tokens", type=str, default=None,
              help="Comma-separated character budgets for a learning curve.")
def eval_cmd(config_path, seed, out, server, fmt, net_file, corpus_file, backend,
             m_samples, budget_tokens):
    """Run the estimator battery against a backend and write records + summary."""
    payload = _base_payload(config_path, seed, out)
    if net_file is not None:
        payload["net_file"] = net_file
    if corpus_file is not None:
        payload["corpus_file"] = corpus_file
    if backend is not None:
        payload["backend"] = backend
    if m_samples is not None:
        payload["m_samples"] = m_samples
    if budget_tokens is not None:
        payload["budget_tokens"] = [int(x) for x in budget_tokens.split(",") if x]
    doc = _post(server, "/runs/eval", payload)
    _emit(doc, fmt)


@main.command()
@common_options
@click.option("--chains", "n_chains", type=int, default=None)
@click.option("--formulation", type=click.Choice(["marginal_mixture", "uniform_mixture", "both"]),
              default=None)
def theory(config_path, seed, out, server, fmt, n_chains, formulation):
    """Certify the reasoning-gap and KL results on random chains."""
    payload = _base_payload(config_path, seed, out)
    if n_chains is not None:
        payload["n_chains"] = n_chains
    if formulation is not None:
        payload["formulation"] = formulation
    doc = _post(server, "/runs/theory", payload)
    _emit(doc, fmt)
    if doc.get("n_violations", 0) > 0 or doc.get("kl_violations", 0) > 0:
        sys.exit(EXIT_VIOLATION)


@main.command()
@click.option("--host", type=str, default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    """Run the workbench as an HTTP service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
