"""Command-line front end: a thin client of the forecasting service.

By default requests run against an in-process app instance; --server-url
targets a running `monoforecast serve` instead. Exit codes: 0 success,
2 usage/config error, 3 numeric failure.
"""

from __future__ import annotations

import json
import sys

import click
import httpx
import yaml


def _client(server_url):
    if server_url:
        return httpx.Client(base_url=server_url, timeout=None)
    from starlette.testclient import TestClient
    from .service.app import app
    return TestClient(app, raise_server_exceptions=False)


def _post(server_url, path, payload):
    with _client(server_url) as client:
        resp = client.post(path, json=payload)
    if resp.status_code == 200:
        return resp.json()
    try:
        detail = resp.json().get("detail", {})
    except ValueError:
        detail = {}
    code = detail.get("code", 2) if isinstance(detail, dict) else 2
    message = (detail.get("message", resp.text)
               if isinstance(detail, dict) else str(detail))
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config_doc(path):
    try:
        with open(path) as f:
            return yaml.safe_load(f) or {}
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


server_url_option = click.option(
    "--server-url", default=None,
    help="URL of a running service; default runs in-process.")


@click.group()
def main():
    """Monotone simultaneous quantile regression forecasting."""


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(), help="YAML experiment config.")
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@server_url_option
def train(config_path, out_dir, seed, server_url):
    """Train one model; writes a checkpoint and a line-JSON training log."""
    payload = {"config": _load_config_doc(config_path), "out_dir": out_dir,
               "seed": seed}
    res = _post(server_url, "/train", payload)
    click.echo(json.dumps({k: res[k] for k in
                           ("checkpoint", "log", "epochs_run",
                            "best_val_crps")}, indent=2))


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--split", default="test",
              type=click.Choice(["train", "validation", "test"]))
@click.option("--out-dir", required=True, type=click.Path())
@server_url_option
def eval_cmd(checkpoint, split, out_dir, server_url):
    """Evaluate a checkpoint on a dataset split; writes report + curves."""
    res = _post(server_url, "/eval", {"checkpoint": checkpoint,
                                      "split": split, "out_dir": out_dir})
    for w in res["warnings"]:
        click.echo(f"warning: {w}", err=True)
    click.echo(json.dumps(res["report"], indent=2, sort_keys=True))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--seeds", default=None,
              help="Comma-separated seeds; default from config.")
@server_url_option
def experiment(config_path, out_dir, seeds, server_url):
    """Multi-seed, multi-head comparison; writes an aggregate CSV."""
    seed_list = None
    if seeds is not None:
        try:
            seed_list = [int(s) for s in seeds.split(",") if s.strip()]
        except ValueError:
            click.echo("error: --seeds must be comma-separated integers",
                       err=True)
            sys.exit(2)
    res = _post(server_url, "/experiment",
                {"config": _load_config_doc(config_path),
                 "out_dir": out_dir, "seeds": seed_list})
    click.echo(json.dumps({"table": res["table"],
                           "table_path": res["table_path"]}, indent=2))
    if res["failures"]:
        for fl in res["failures"]:
            click.echo(f"failed: {fl}", err=True)
        sys.exit(3)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--max-params", type=int, default=None,
              help="Skip trials whose estimated parameter count exceeds this.")
@server_url_option
def tune(config_path, out_dir, max_params, server_url):
    """Grid search ranked by validation CRPS with ACE tiebreak."""
    res = _post(server_url, "/tune",
                {"config": _load_config_doc(config_path),
                 "out_dir": out_dir, "max_params": max_params})
    click.echo(json.dumps({"best": res["best"],
                           "trials_path": res["trials_path"]}, indent=2))


@main.command()
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--window-csv", required=True, type=click.Path())
@click.option("--out-csv", required=True, type=click.Path())
@click.option("--taus", default=None,
              help="Comma-separated quantile levels; default 11-point grid.")
@server_url_option
def forecast(checkpoint, window_csv, out_csv, taus, server_url):
    """One exploitation pass over a window CSV; writes a quantile CSV."""
    tau_list = None
    if taus is not None:
        try:
            tau_list = [float(t) for t in taus.split(",") if t.strip()]
        except ValueError:
            click.echo("error: --taus must be comma-separated floats",
                       err=True)
            sys.exit(2)
    res = _post(server_url, "/forecast",
                {"checkpoint": checkpoint, "window_csv": window_csv,
                 "out_csv": out_csv, "taus": tau_list})
    click.echo(json.dumps({"forecast_csv": res["forecast_csv"],
                           "horizon": res["horizon"]}, indent=2))


@main.command()
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--repeats", type=int, default=10)
@server_url_option
def bench(checkpoint, repeats, server_url):
    """Timing and parameter count of one exploitation pass."""
    res = _post(server_url, "/bench",
                {"checkpoint": checkpoint, "repeats": repeats})
    click.echo(json.dumps(res, indent=2))


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    """Run the forecasting service."""
    import uvicorn
    from .service.app import app
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
