"""Command-line client: subcommands, overrides, exit codes, file outputs."""

import json
import math

import pytest
from click.testing import CliRunner

from fieldsense.cli import main


runner = CliRunner()


def read_results(tmp_path, prefix="run"):
    path = tmp_path / f"{prefix}_results.json"
    assert path.exists(), f"missing {path}"
    return json.loads(path.read_text())


def test_ground_state_with_flags(tmp_path):
    result = runner.invoke(
        main,
        ["ground-state", "--n-sites", "2", "--m0sq", "1.0", "--n-max", "6",
         "-o", str(tmp_path)],
    )
    assert result.exit_code == 0, result.output
    data = read_results(tmp_path)
    assert data["rows"][0]["e0"] == pytest.approx(0.5 * (1 + math.sqrt(5)), abs=1e-4)


def test_propagator_and_report(tmp_path):
    result = runner.invoke(
        main,
        ["propagator", "--n-sites", "2", "--n-max", "6", "--times", "0.0,0.6",
         "--sites", "1", "-o", str(tmp_path)],
    )
    assert result.exit_code == 0, result.output
    res_path = tmp_path / "run_results.json"
    rep = runner.invoke(
        main,
        ["report", "--input", str(res_path), "--kind", "propagator_table",
         "-o", str(tmp_path), "--prefix", "rep"],
    )
    assert rep.exit_code == 0, rep.output
    csv_text = (tmp_path / "rep_propagator_table.csv").read_text()
    assert csv_text.splitlines()[0] == "t,x,re_est,im_est,re_oracle,im_oracle,abs_error"
    assert len(csv_text.strip().splitlines()) == 3


def test_protocol_command(tmp_path):
    result = runner.invoke(
        main,
        ["protocol", "--n-sites", "2", "--n-max", "4", "--readout-times",
         "0.8", "-o", str(tmp_path)],
    )
    assert result.exit_code == 0, result.output
    data = read_results(tmp_path)
    assert data["rows"][0]["parity"] == pytest.approx(math.cos(0.8), abs=1e-9)


def test_ion_map_command(tmp_path):
    result = runner.invoke(
        main,
        ["ion-map", "--n-ions", "3", "--omega-x", "10", "--omega-y", "1000",
         "--omega-z", "1", "-o", str(tmp_path)],
    )
    assert result.exit_code == 0, result.output
    data = read_results(tmp_path)
    assert len(data["rows"]) == 3


def test_sweep_command(tmp_path):
    cfg = tmp_path / "sweep.yaml"
    cfg.write_text(
        "task: ground_state\n"
        "lattice: {n_sites: 2}\n"
        "basis: {n_max: 4}\n"
        "sweep:\n"
        "  - parameter: couplings.m0sq\n"
        "    values: [1.0, 2.0]\n"
    )
    result = runner.invoke(main, ["sweep", "--config", str(cfg), "-o", str(tmp_path)])
    assert result.exit_code == 0, result.output
    data = read_results(tmp_path)
    assert len(data["rows"]) == 2


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "base.yaml"
    cfg.write_text("task: ground_state\nlattice: {n_sites: 3}\nbasis: {n_max: 3}\n")
    result = runner.invoke(
        main,
        ["ground-state", "--config", str(cfg), "--n-sites", "2",
         "-o", str(tmp_path)],
    )
    assert result.exit_code == 0, result.output
    data = read_results(tmp_path)
    assert data["meta"]["config"]["lattice"]["n_sites"] == 2


def test_override_into_null_block(tmp_path):
    cfg = tmp_path / "null.yaml"
    cfg.write_text("task: ground_state\nlattice: {n_sites: 2}\ncouplings: null\n")
    result = runner.invoke(
        main,
        ["ground-state", "--config", str(cfg), "--m0sq", "2.0", "--n-max", "3",
         "-o", str(tmp_path)],
    )
    assert result.exit_code == 0, result.output
    data = read_results(tmp_path)
    assert data["meta"]["config"]["couplings"]["m0sq"] == 2.0


def test_unknown_key_exits_one(tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("task: ground_state\nlattice: {n_sights: 2}\n")
    result = runner.invoke(main, ["ground-state", "--config", str(cfg)])
    assert result.exit_code == 1
    assert "n_sights" in result.output


def test_partial_run_exits_two(tmp_path):
    cfg = tmp_path / "partial.yaml"
    cfg.write_text(
        "task: ground_state\n"
        "lattice: {n_sites: 2}\n"
        "max_dim: 2000\n"
        "sweep:\n"
        "  - parameter: basis.n_max\n"
        "    values: [3, 40]\n"
    )
    result = runner.invoke(main, ["sweep", "--config", str(cfg), "-o", str(tmp_path)])
    assert result.exit_code == 2, result.output


def test_determinism_excluding_walltime(tmp_path):
    # Identical config (same output location) run twice: everything but the
    # wall-time column must be bit-identical.
    args = ["ground-state", "--n-sites", "2", "--n-max", "4", "-o", str(tmp_path)]

    def canonical():
        data = read_results(tmp_path)
        for row in data["rows"]:
            row.pop("wall_time_s", None)
        return json.dumps(data, sort_keys=True)

    assert runner.invoke(main, args).exit_code == 0
    first = canonical()
    assert runner.invoke(main, args).exit_code == 0
    assert canonical() == first


def test_remote_mode_uses_server(tmp_path, monkeypatch):
    from fastapi.testclient import TestClient

    from fieldsense.service.app import app

    calls = []

    def fake_post(url, json=None, timeout=None):
        calls.append(url)
        route = url.split("/v1/")[1]
        with TestClient(app) as tc:
            return tc.post(f"/v1/{route}", json=json)

    monkeypatch.setattr("fieldsense.cli.httpx.post", fake_post)
    result = runner.invoke(
        main,
        ["--server", "http://sim.example", "ground-state", "--n-sites", "2",
         "--n-max", "4", "-o", str(tmp_path)],
    )
    assert result.exit_code == 0, result.output
    assert calls == ["http://sim.example/v1/ground-state"]
    data = read_results(tmp_path)
    assert data["rows"][0]["status"] == "ok"
