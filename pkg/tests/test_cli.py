from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from qsdlab.cli import load_schema, main
from qsdlab.io import config_hash, read_csv

LV2 = {"zoo_id": "lotka_volterra", "params": {"r": [1, 1], "c": [[1, 0.5], [0.5, 1]], "gamma": [1, 1]}}
FELLER = {"zoo_id": "feller_linear", "params": {"r": -1.0, "gamma": 2.0}}
FAST_CHECKS = {"n_box": 1024, "n_shell": 128}


def write_config(tmp_path: Path, cfg: dict, name: str = "cfg.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


def run(tmp_path: Path, command: str, cfg: dict | Path, *extra: str) -> int:
    path = cfg if isinstance(cfg, Path) else write_config(tmp_path, cfg)
    return main([command, "--config", str(path), "--out", str(tmp_path / "out"), *extra])


def report(tmp_path: Path, command: str) -> dict:
    return json.loads((tmp_path / "out" / command / "report.json").read_text())


def feller_config(**sections) -> dict:
    cfg = {
        "model": FELLER,
        "checks": FAST_CHECKS,
        "transform": {"revalidate": 0, "n_samples": 2000},
        "spectral": {"nodes": 256, "R_cut": 30.0, "refinement_levels": 2, "k_sub": 2},
        "montecarlo": {"n_particles": 4000, "t_final": 4.0, "init": [1.0], "observables": ["one", "z1"]},
    }
    cfg.update(sections)
    return cfg


def test_schema_is_packaged():
    assert load_schema()["properties"]["model"]["required"] == ["zoo_id", "params"]


def test_check_competitive_lv_passes(tmp_path, capsys):
    assert run(tmp_path, "check", {"model": LV2, "checks": FAST_CHECKS}) == 0
    rep = report(tmp_path, "check")
    assert rep["verdicts"]["checks_pass"] is True
    assert "HEURISTIC" in rep["stages"]["check"]["note"]


def test_check_cooperative_lv_fails_with_witness(tmp_path, capsys):
    coop = {"zoo_id": "lotka_volterra", "params": {**LV2["params"], "c": [[1, -2], [-2, 1]]}}
    assert run(tmp_path, "check", {"model": coop, "checks": {**FAST_CHECKS, "run": ["A"]}}) == 1
    wit = report(tmp_path, "check")["stages"]["check"]["checks"]["A"]["witnesses"]
    e_lv = [w for w in wit if w["condition"] == "corollary.e_LV"]
    assert e_lv and e_lv[0]["margin"] < 0
    assert "corollary.e_LV" in capsys.readouterr().out


def test_malformed_json_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    assert run(tmp_path, "check", bad) == 2


@pytest.mark.parametrize(
    "cfg",
    [
        {"model": FELLER, "surprise": 1},
        {"model": FELLER, "spectral": {"nodes": 8}},
        {"model": FELLER, "montecarlo": {"dt": 0.5}},
        {"model": {"zoo_id": "nope", "params": {}}},
    ],
)
def test_schema_violations_exit_2(tmp_path, cfg):
    assert run(tmp_path, "check", cfg) == 2


def test_missing_config_exit_2(tmp_path):
    assert run(tmp_path, "check", tmp_path / "absent.json") == 2


def test_unknown_command_exit_2(tmp_path):
    assert main(["frobnicate", "--config", "x.json"]) == 2


def test_dry_run_computes_nothing(tmp_path, capsys):
    assert run(tmp_path, "spectrum", feller_config(), "--dry-run") == 0
    plan = json.loads(capsys.readouterr().out)
    assert plan["grid_ladder"][1]["nodes"] == 511
    assert not (tmp_path / "out").exists()


def test_threads_env_fallback(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("QSDLAB_THREADS", "3")
    assert run(tmp_path, "simulate", feller_config(), "--dry-run") == 0
    assert json.loads(capsys.readouterr().out)["threads"] == 3
    monkeypatch.setenv("QSDLAB_THREADS", "many")
    assert run(tmp_path, "simulate", feller_config(), "--dry-run") == 2


def test_spectrum_feller_and_rerun_identical(tmp_path):
    cfg_path = write_config(tmp_path, feller_config())
    assert run(tmp_path, "spectrum", cfg_path) == 0
    rep = report(tmp_path, "spectrum")
    assert abs(rep["stages"]["spectrum"]["lambda1"] - 1.0) <= 0.01
    assert rep["config_sha256"] == config_hash(cfg_path.read_bytes())
    first = (tmp_path / "out" / "spectrum" / "eigenfunctions.csv").read_bytes()
    assert first.startswith(f"# config_sha256: {rep['config_sha256']}".encode())
    assert run(tmp_path, "spectrum", cfg_path) == 0
    assert (tmp_path / "out" / "spectrum" / "eigenfunctions.csv").read_bytes() == first


def test_spectrum_refuses_four_dimensions(tmp_path, capsys):
    lv4 = {"zoo_id": "lotka_volterra", "params": {"r": [1] * 4, "c": np.eye(4).tolist(), "gamma": [1] * 4}}
    assert run(tmp_path, "spectrum", {"model": lv4}) == 2
    assert "d >= 4" in capsys.readouterr().err


def test_qsd_feller(tmp_path):
    assert run(tmp_path, "qsd", feller_config()) == 0
    st = report(tmp_path, "qsd")["stages"]["qsd"]
    assert st["mass_x"] == pytest.approx(1.0, abs=1e-12) and st["min_density"] > 0
    cols, data = read_csv(tmp_path / "out" / "qsd" / "qsd_z.csv")
    assert cols == ["z1", "density"]
    z, dens = data[:, 0], data[:, 1]
    w = np.gradient(z)
    assert np.sum(w * np.abs(dens - np.exp(-z))) < 0.02


def test_simulate_deterministic(tmp_path):
    cfg_path = write_config(tmp_path, feller_config())
    assert run(tmp_path, "simulate", cfg_path) == 0
    first = (tmp_path / "out" / "simulate" / "survival.csv").read_bytes()
    assert run(tmp_path, "simulate", cfg_path) == 0
    assert (tmp_path / "out" / "simulate" / "survival.csv").read_bytes() == first
    assert "survival_rate" in report(tmp_path, "simulate")["stages"]["simulate"]


def test_validate_requires_artifacts(tmp_path):
    assert run(tmp_path, "validate", feller_config()) == 2


def test_validate_and_report(tmp_path):
    cfg = feller_config(montecarlo={"n_particles": 20_000, "t_final": 6.0, "init": [1.0],
                                    "window": [2.0, 5.0], "observables": ["one", "z1"]})
    cfg_path = write_config(tmp_path, cfg)
    assert run(tmp_path, "spectrum", cfg_path) == 0
    assert run(tmp_path, "simulate", cfg_path) == 0
    assert run(tmp_path, "validate", cfg_path) == 0
    assert report(tmp_path, "validate")["verdicts"]["lambda1_agreement"] is True
    assert run(tmp_path, "report", cfg_path) == 0
    agg = report(tmp_path, "report")["stages"]["report"]
    assert set(agg) == {"spectrum", "simulate", "validate"}


def test_report_without_runs_exit_2(tmp_path):
    assert run(tmp_path, "report", feller_config()) == 2


def test_transform_command(tmp_path):
    assert run(tmp_path, "transform", feller_config()) == 0
    st = report(tmp_path, "transform")["stages"]["transform"]
    assert st["certificate"]["beta0"] > 0
    assert st["boundary_constant"]["coordinates"][0]["converged"]
    cols, data = read_csv(tmp_path / "out" / "transform" / "xi_table_1.csv")
    assert cols == ["z", "x"]
    assert np.allclose(data[:, 1], np.sqrt(2 * data[:, 0]), rtol=1e-12, atol=1e-14)
