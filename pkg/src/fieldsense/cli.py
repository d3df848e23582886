"""Thin command-line client for the experiment service.

Every subcommand assembles an experiment config (config file plus flag
overrides), executes it either in process through the service handlers or
against a remote server (``--server``), and writes the result files.

Exit codes: 0 success, 2 partial completion (skipped rows), 1 error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx
import yaml

from . import __version__
from .errors import FieldSenseError
from .experiments import (
    ExperimentConfig,
    ResultSet,
    load_results,
    report,
    write_results,
)

TASK_ROUTES = {
    "ground_state": "ground-state",
    "propagator": "propagator",
    "protocol": "protocol",
    "mass": "mass",
    "noise_scaling": "noise-scaling",
    "ion_map": "ion-map",
}


def _load_raw(config_path: str | None) -> dict:
    if config_path is None:
        return {}
    path = Path(config_path)
    if not path.exists():
        raise FieldSenseError(f"config file not found: {path}")
    text = path.read_text()
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    return data or {}


def _set_path(data: dict, dotted: str, value) -> None:
    if value is None:
        return
    node = data
    parts = dotted.split(".")
    for p in parts[:-1]:
        if node.get(p) is None:
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value


def _floats(text: str | None) -> list[float] | None:
    if text is None:
        return None
    return [float(v) for v in text.split(",") if v.strip() != ""]


def _ints(text: str | None) -> list[int] | None:
    if text is None:
        return None
    return [int(v) for v in text.split(",") if v.strip() != ""]


def _build_config(task: str, config_path: str | None, overrides: dict) -> ExperimentConfig:
    data = _load_raw(config_path)
    data["task"] = task
    for dotted, value in overrides.items():
        _set_path(data, dotted, value)
    try:
        return ExperimentConfig.model_validate(data)
    except Exception as exc:
        raise FieldSenseError(f"invalid configuration: {exc}") from exc


def _execute(ctx, config: ExperimentConfig) -> ResultSet:
    server = ctx.obj.get("server")
    if server:
        route = TASK_ROUTES[config.task]
        resp = httpx.post(
            f"{server.rstrip('/')}/v1/{route}",
            json={"config": config.model_dump(mode="json")},
            timeout=None,
        )
        if resp.status_code != 200:
            raise FieldSenseError(f"server error {resp.status_code}: {resp.text}")
        payload = resp.json()
        return ResultSet(rows=payload["rows"], meta=payload["meta"])
    from .service.app import run_task

    return run_task(config.task, config).to_result()


def _finish(config: ExperimentConfig, result: ResultSet) -> None:
    path = write_results(result, config.output_dir, config.prefix)
    ok = sum(1 for r in result.rows if r.get("status") == "ok")
    click.echo(f"{ok}/{len(result.rows)} rows ok -> {path}")
    for row in result.rows:
        if row.get("status") != "ok":
            click.echo(f"  [{row.get('status')}] {row.get('error', '')}", err=True)
    sys.exit(2 if result.partial else 0)


def _run(ctx, task: str, config_path: str | None, overrides: dict) -> None:
    try:
        config = _build_config(task, config_path, overrides)
        result = _execute(ctx, config)
    except FieldSenseError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    _finish(config, result)


def common_options(fn):
    fn = click.option("--config", "config_path", type=str, default=None,
                      help="YAML/JSON experiment config")(fn)
    fn = click.option("--output-dir", "-o", type=str, default=None)(fn)
    fn = click.option("--prefix", type=str, default=None)(fn)
    fn = click.option("--n-sites", type=int, default=None)(fn)
    fn = click.option("--boundary", type=click.Choice(["periodic", "open"]),
                      default=None)(fn)
    fn = click.option("--m0sq", type=float, default=None)(fn)
    fn = click.option("--lam", type=float, default=None)(fn)
    fn = click.option("--n-max", type=int, default=None)(fn)
    fn = click.option("--omega0", type=float, default=None)(fn)
    return fn


def base_overrides(kw) -> dict:
    return {
        "output_dir": kw.get("output_dir"),
        "prefix": kw.get("prefix"),
        "lattice.n_sites": kw.get("n_sites"),
        "lattice.boundary": kw.get("boundary"),
        "couplings.m0sq": kw.get("m0sq"),
        "couplings.lam": kw.get("lam"),
        "basis.n_max": kw.get("n_max"),
        "sensor.omega0": kw.get("omega0"),
    }


@click.group()
@click.version_option(version=__version__)
@click.option("--server", default=None, envvar="FIELDSENSE_SERVER",
              help="Run against a remote service instead of in process")
@click.pass_context
def main(ctx, server):
    """Lattice-field sensing experiments: simulate, estimate, report."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server


@main.command("ground-state")
@common_options
@click.pass_context
def ground_state_cmd(ctx, config_path, **kw):
    """Solve the lattice ground state and report convergence."""
    _run(ctx, "ground_state", config_path, base_overrides(kw))


@main.command("propagator")
@common_options
@click.option("--times", type=str, default=None, help="comma-separated time grid")
@click.option("--sites", type=str, default=None, help="comma-separated site list")
@click.option("--base-site", type=int, default=None)
@click.option("--strength", type=float, default=None)
@click.option("--variant", type=click.Choice(["ghz_phased", "dfs"]), default=None)
@click.option("--richardson/--no-richardson", default=None)
@click.option("--noise-kind", type=click.Choice(
    ["none", "global_dephasing", "local_dephasing"]), default=None)
@click.option("--t2", type=float, default=None)
@click.option("--field-prep", type=click.Choice(["vacuum", "gibbs"]), default=None)
@click.option("--beta", type=float, default=None)
@click.pass_context
def propagator_cmd(ctx, config_path, times, sites, base_site, strength, variant,
                   richardson, noise_kind, t2, field_prep, beta, **kw):
    """Reconstruct the two-point function over a (t, x) grid."""
    overrides = base_overrides(kw)
    overrides.update({
        "plan.times": _floats(times),
        "plan.sites": _ints(sites),
        "plan.base_site": base_site,
        "plan.strength": strength,
        "plan.variant": variant,
        "plan.richardson": richardson,
        "noise.kind": noise_kind,
        "noise.t2": t2,
        "field_prep.kind": field_prep,
        "field_prep.beta": beta,
    })
    _run(ctx, "propagator", config_path, overrides)


@main.command("protocol")
@common_options
@click.option("--readout-times", type=str, default=None)
@click.option("--prep", type=click.Choice(
    ["ghz", "neel_plus", "neel_minus", "product"]), default=None)
@click.option("--sensor-sites", type=str, default=None)
@click.option("--noise-kind", type=click.Choice(
    ["none", "global_dephasing", "local_dephasing"]), default=None)
@click.option("--t2", type=float, default=None)
@click.pass_context
def protocol_cmd(ctx, config_path, readout_times, prep, sensor_sites,
                 noise_kind, t2, **kw):
    """Run explicit source schedules and record parities."""
    overrides = base_overrides(kw)
    overrides.update({
        "plan.readout_times": _floats(readout_times),
        "plan.preparation": prep,
        "plan.sensor_sites": _ints(sensor_sites),
        "noise.kind": noise_kind,
        "noise.t2": t2,
    })
    _run(ctx, "protocol", config_path, overrides)


@main.command("mass")
@common_options
@click.option("--times", type=str, default=None)
@click.option("--source", type=click.Choice(["protocol", "oracle"]), default=None)
@click.pass_context
def mass_cmd(ctx, config_path, times, source, **kw):
    """Extract the physical gap from propagator time series."""
    overrides = base_overrides(kw)
    overrides.update({"plan.times": _floats(times), "plan.mass_source": source})
    _run(ctx, "mass", config_path, overrides)


@main.command("noise-scaling")
@common_options
@click.option("--sensor-counts", type=str, default=None)
@click.option("--noise-kind", type=click.Choice(
    ["global_dephasing", "local_dephasing"]), default=None)
@click.option("--t2", type=float, default=None)
@click.pass_context
def noise_cmd(ctx, config_path, sensor_counts, noise_kind, t2, **kw):
    """Fit parity decay rates against sensor count."""
    overrides = base_overrides(kw)
    overrides.update({
        "plan.sensor_counts": _ints(sensor_counts),
        "noise.kind": noise_kind,
        "noise.t2": t2,
    })
    _run(ctx, "noise_scaling", config_path, overrides)


@main.command("ion-map")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--output-dir", "-o", type=str, default=None)
@click.option("--prefix", type=str, default=None)
@click.option("--n-ions", type=int, default=None)
@click.option("--geometry", type=click.Choice(
    ["linear_chain", "ring", "subwavelength"]), default=None)
@click.option("--omega-x", type=float, default=None)
@click.option("--omega-y", type=float, default=None)
@click.option("--omega-z", type=float, default=None)
@click.option("--ion-mass", type=float, default=None)
@click.option("--e0sq", type=float, default=None)
@click.option("--spacing", type=float, default=None)
@click.pass_context
def ion_map_cmd(ctx, config_path, output_dir, prefix, n_ions, geometry, omega_x,
                omega_y, omega_z, ion_mass, e0sq, spacing):
    """Map ion-crystal microscopics to effective lattice couplings."""
    overrides = {
        "output_dir": output_dir,
        "prefix": prefix,
        "ion.n_ions": n_ions,
        "ion.geometry": geometry,
        "ion.omega_x": omega_x,
        "ion.omega_y": omega_y,
        "ion.omega_z": omega_z,
        "ion.mass": ion_mass,
        "ion.e0sq": e0sq,
        "ion.spacing": spacing,
    }
    _run(ctx, "ion_map", config_path, overrides)


@main.command("sweep")
@click.option("--config", "config_path", type=str, required=True)
@click.option("--output-dir", "-o", type=str, default=None)
@click.option("--prefix", type=str, default=None)
@click.pass_context
def sweep_cmd(ctx, config_path, output_dir, prefix):
    """Run the config's task over its sweep axes."""
    try:
        data = _load_raw(config_path)
        _set_path(data, "output_dir", output_dir)
        _set_path(data, "prefix", prefix)
        config = ExperimentConfig.model_validate(data)
        if not config.sweep:
            raise FieldSenseError("sweep command requires sweep axes in the config")
        server = ctx.obj.get("server")
        if server:
            resp = httpx.post(
                f"{server.rstrip('/')}/v1/sweep",
                json={"config": config.model_dump(mode="json")},
                timeout=None,
            )
            if resp.status_code != 200:
                raise FieldSenseError(f"server error {resp.status_code}: {resp.text}")
            payload = resp.json()
            result = ResultSet(rows=payload["rows"], meta=payload["meta"])
        else:
            from .experiments import run_experiment

            result = run_experiment(config)
    except FieldSenseError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    _finish(config, result)


@main.command("report")
@click.option("--input", "input_path", type=str, required=True,
              help="results JSON produced by a run")
@click.option("--kind", type=click.Choice(
    ["propagator_table", "mass_curve", "noise_scaling"]), required=True)
@click.option("--output-dir", "-o", type=str, default="results")
@click.option("--prefix", type=str, default="report")
def report_cmd(input_path, kind, output_dir, prefix):
    """Format stored results into CSV plus a JSON sidecar."""
    try:
        result = load_results(input_path)
        csv_path, json_path = report(result, kind, output_dir, prefix)
    except (FieldSenseError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"wrote {csv_path} and {json_path}")
    sys.exit(0)


@main.command("serve")
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve_cmd(host, port):
    """Start the HTTP service."""
    import uvicorn

    uvicorn.run("fieldsense.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
