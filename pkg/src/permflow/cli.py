"""Command-line front end: a thin client over the HTTP service.

Every subcommand except ``selftest`` and ``serve`` talks to the API.
By default the app runs in-process (no server needed); point
``--server`` at a running instance to use a remote one.  Long-running
inference commands submit a job and poll until it finishes, then write
the result files locally.
"""

import json
import sys
import time
from pathlib import Path

import click
import httpx
import numpy as np

from . import __version__
from .config import SCHEMA, parse_config, resolve_config
from .errors import PermflowError
from .fields import GridField2D


def _client(server):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from starlette.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def _fail(message, kind="error", code=1):
    sys.stderr.write(json.dumps({"error": message, "kind": kind}) + "\n")
    sys.exit(code)


def _checked(resp):
    if resp.status_code >= 400:
        try:
            body = resp.json()
        except Exception:
            body = {"error": resp.text, "kind": "http"}
        _fail(body.get("error", body.get("detail", "request failed")),
              body.get("kind", "http"))
    return resp.json()


def _poll_job(client, job_id, interval=0.25):
    while True:
        info = _checked(client.get(f"/jobs/{job_id}"))
        if info["state"] == "done":
            return info["result"]
        if info["state"] == "error":
            _fail(info.get("detail") or "job failed", "job")
        time.sleep(interval)


def _load_config(config_path, seed, overrides):
    try:
        cfg = parse_config(config_path) if config_path else resolve_config()
        values = {k: str(v) for k, v in cfg.values.items()}
        if seed is not None:
            values["run.seed"] = str(seed)
        for key, val in overrides.items():
            if val is not None:
                values[key] = str(val)
        resolve_config(values)  # early validation with key paths
        return values
    except (PermflowError, OSError, json.JSONDecodeError) as exc:
        _fail(str(exc), type(exc).__name__)


def _field_from_payload(payload):
    return GridField2D(
        values=np.asarray(payload["values"], dtype=float),
        domain=tuple(payload["domain"]),
        endpoint=payload["endpoint"],
    )


def _write(path, text):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")


def _write_json(path, doc):
    _write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_run_outputs(out_dir, result, manifest):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec in result["records"]:
        s = rec["scale"]
        for key, stem in (("mean_field", "mean"), ("q05_field", "q05"),
                          ("q95_field", "q95")):
            if rec.get(key):
                fld = _field_from_payload(rec[key])
                _write(out / f"scale{s}_{stem}.csv", fld.to_csv())
        diag = {k: rec[k] for k in ("scale", "log_z", "log_bf", "basis_count",
                                    "resample_steps", "ess_trace",
                                    "acceptance_trace", "sigma_trace")}
        _write_json(out / f"scale{s}_diagnostics.json", diag)
    _write_json(out / "manifest.json", manifest)


@click.group()
@click.version_option(version=__version__)
@click.option("--server", default=None, help="Base URL of a running service; "
              "defaults to an in-process instance.")
@click.pass_context
def main(ctx, server):
    """Infer log-permeability fields from pressure observations."""
    ctx.obj = {"server": server}


@main.command()
@click.argument("input_path", type=click.Path(exists=True))
@click.argument("output_path", type=click.Path())
@click.option("--levels", type=int, default=None, help="Transform depth (forward only).")
@click.option("--half-width", type=int, default=2, show_default=True)
@click.option("--boundary", type=click.Choice(["periodic", "reflect"]),
              default="periodic", show_default=True)
@click.option("--target-level", type=int, default=None,
              help="Reconstruction depth (inverse only).")
@click.pass_context
def transform(ctx, input_path, output_path, levels, half_width, boundary, target_level):
    """Wavelet-transform a field CSV to quadtree JSON, or back.

    The direction follows the input extension: ``.csv`` runs the
    forward transform, ``.json`` the inverse.
    """
    client = _client(ctx.obj["server"])
    text = Path(input_path).read_text(encoding="utf-8")
    if input_path.endswith(".json"):
        tree = json.loads(text)
        body = {"tree": tree, "half_width": half_width, "boundary": boundary,
                "target_level": target_level}
        payload = _checked(client.post("/transform/inverse", json=body))
        _write(output_path, _field_from_payload(payload).to_csv())
    else:
        try:
            field = GridField2D.from_csv(text)
        except PermflowError as exc:
            _fail(str(exc), type(exc).__name__)
        body = {
            "field": {"values": field.values.tolist(), "domain": field.domain,
                      "endpoint": field.endpoint},
            "levels": levels, "half_width": half_width, "boundary": boundary,
        }
        payload = _checked(client.post("/transform/forward", json=body))
        _write_json(output_path, payload)
    click.echo(f"wrote {output_path}")


@main.command()
@click.argument("input_path", type=click.Path(exists=True))
@click.argument("output_path", type=click.Path())
@click.option("--level", type=int, default=5, show_default=True,
              help="Finest solver level (grid 2^level + 1).")
@click.option("--tolerance", type=float, default=1e-8, show_default=True)
@click.option("--refine", type=float, default=0.0, show_default=True,
              help="Relative wavelet refinement threshold; 0 solves uniformly.")
@click.option("--sensor-grid", type=int, default=None,
              help="Also print readings at this sensor lattice.")
@click.pass_context
def solve(ctx, input_path, output_path, level, tolerance, refine, sensor_grid):
    """Solve the flow problem for a log-permeability CSV; write pressure CSV."""
    client = _client(ctx.obj["server"])
    try:
        field = GridField2D.from_csv(Path(input_path).read_text(encoding="utf-8"))
    except PermflowError as exc:
        _fail(str(exc), type(exc).__name__)
    body = {
        "log_permeability": {"values": field.values.tolist(), "domain": field.domain,
                             "endpoint": field.endpoint},
        "finest_level": level, "residual_tolerance": tolerance,
        "refinement_threshold": refine, "sensor_grid": sensor_grid,
    }
    payload = _checked(client.post("/solve", json=body))
    _write(output_path, _field_from_payload(payload["pressure"]).to_csv())
    if payload.get("readings") is not None:
        click.echo(json.dumps(payload["readings"]))
    click.echo(f"wrote {output_path} (residual {payload['residual']:.3e}, "
               f"{payload['cycles']} cycles)")


def _common_run_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True),
                      default=None, help="Config file or manifest.json.")(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    fn = click.option("--out", "out_dir", type=click.Path(), default=None)(fn)
    fn = click.option("--particles", type=int, default=None)(fn)
    fn = click.option("--densities", type=int, default=None)(fn)
    fn = click.option("--scales", type=int, default=None)(fn)
    fn = click.option("--sensor-grid", type=int, default=None)(fn)
    fn = click.option("--noise", type=float, default=None)(fn)
    return fn


def _override_map(particles, densities, scales, sensor_grid, noise):
    return {
        "smc.particles": particles,
        "smc.densities": densities,
        "smc.max_scale": scales,
        "observation.sensor_grid": sensor_grid,
        "observation.noise_fraction": noise,
    }


@main.command()
@click.argument("observations_path", type=click.Path(exists=True))
@_common_run_options
@click.pass_context
def infer(ctx, observations_path, config_path, seed, out_dir, particles, densities,
          scales, sensor_grid, noise):
    """Infer the posterior log-permeability from an observations CSV."""
    from .darcy import SensorObservation

    values = _load_config(config_path, seed,
                          _override_map(particles, densities, scales, sensor_grid, noise))
    try:
        obs = SensorObservation.from_csv(Path(observations_path).read_text(encoding="utf-8"))
    except PermflowError as exc:
        _fail(str(exc), type(exc).__name__)
    client = _client(ctx.obj["server"])
    body = {
        "observations": {
            "grid_size": obs.grid_size, "readings": obs.readings.tolist(),
            "noise_fraction": obs.noise_fraction, "noise_sigma": obs.noise_sigma,
            "seed": obs.seed,
        },
        "config": values,
    }
    info = _checked(client.post("/jobs/infer", json=body))
    result = _poll_job(client, info["id"])
    out = out_dir or Path(values["run.output_dir"]) / "infer"
    _write_run_outputs(out, result, result["manifest"])
    _write_json(Path(out) / "report.json", {
        "selected_scale": result["selected_scale"],
        "log_z": [r["log_z"] for r in result["records"]],
        "log_bf": [r["log_bf"] for r in result["records"]],
        "basis_counts": [r["basis_count"] for r in result["records"]],
    })
    click.echo(f"selected scale {result['selected_scale']}; outputs in {out}")


@main.command()
@click.argument("benchmark_id",
                type=click.Choice(["I", "II", "III", "III-5x5", "III-5pct", "IV"]))
@_common_run_options
@click.pass_context
def benchmark(ctx, benchmark_id, config_path, seed, out_dir, particles, densities,
              scales, sensor_grid, noise):
    """Run a built-in synthetic benchmark end to end."""
    values = _load_config(config_path, seed,
                          _override_map(particles, densities, scales, sensor_grid, noise))
    client = _client(ctx.obj["server"])
    info = _checked(client.post("/jobs/benchmark",
                                json={"benchmark": benchmark_id, "config": values}))
    result = _poll_job(client, info["id"])
    out = Path(out_dir or Path(values["run.output_dir"]) / f"benchmark-{benchmark_id}")
    _write_run_outputs(out, result, result["manifest"])
    truth = _field_from_payload(result["truth"])
    _write(out / "truth.csv", truth.to_csv())
    obs = result["observations"]
    lines = [f"# n={obs['grid_size']} noise_fraction={obs['noise_fraction']!r} "
             f"sigma={obs['noise_sigma']!r} seed={obs['seed']}"]
    lines += [repr(float(v)) for v in obs["readings"]]
    _write(out / "observations.csv", "\n".join(lines) + "\n")
    _write_json(out / "report.json", {
        "benchmark": result["benchmark"],
        "selected_scale": result["selected_scale"],
        "basis_counts": result["basis_counts"],
        "log_z": result["log_z"],
        "log_bf": result["log_bf"],
        "rmse_selected": result["rmse_selected"],
        "coverage_diagonal": result["coverage_diagonal"],
    })
    click.echo(f"benchmark {benchmark_id}: selected scale {result['selected_scale']}, "
               f"rmse {result['rmse_selected']:.3f}; outputs in {out}")


@main.command()
def selftest():
    """Run the built-in oracle checks; exit non-zero on failure."""
    from .selftest import run_selftest

    ok = run_selftest(echo=click.echo)
    sys.exit(0 if ok else 1)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host, port):
    """Run the HTTP service with uvicorn."""
    import uvicorn

    uvicorn.run("permflow.service:app", host=host, port=port)


if __name__ == "__main__":
    main()
