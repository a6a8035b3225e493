import json
import os

import pytest

from bsrg.cli import (
    EXIT_INCONCLUSIVE,
    EXIT_PASS,
    EXIT_USAGE,
    EXIT_VIOLATION,
    DEFAULT_CONFIG,
    load_config,
    main,
)
from bsrg.operators import load_linop


def _cfg(tmp_path, payload, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


# --- config loading -----------------------------------------------------------

def test_load_config_defaults():
    cfg = load_config(None)
    assert cfg.params.v0 == pytest.approx(1e-3)
    assert cfg.extents == (4, 2)
    assert cfg.interaction.lambda_n == pytest.approx(cfg.params.lambda_n)


def test_load_config_deep_merges(tmp_path):
    path = _cfg(tmp_path, {"params": {"v0": 1e-4},
                           "stokes": {"lambda_zero": True}})
    cfg = load_config(path)
    assert cfg.params.v0 == pytest.approx(1e-4)
    assert cfg.section("stokes")["lambda_zero"] is True
    # untouched sections keep their defaults
    assert cfg.section("verify_bounds") == DEFAULT_CONFIG["verify_bounds"]


def test_config_usage_errors(tmp_path):
    assert main(["verify-bounds", "--config",
                 str(tmp_path / "missing.json")]) == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["verify-bounds", "--config", str(bad)]) == EXIT_USAGE
    lst = tmp_path / "list.json"
    lst.write_text("[1, 2]")
    assert main(["verify-bounds", "--config", str(lst)]) == EXIT_USAGE


def test_chemical_potential_bound_enforced_at_load(tmp_path):
    # |mu_n| must stay below 4 v0^(5 eps)
    path = _cfg(tmp_path, {"params": {"mu_n": 1.0}})
    assert main(["verify-bounds", "--config", path]) == EXIT_USAGE


def test_bad_lattice_rejected_at_load(tmp_path):
    path = _cfg(tmp_path, {"lattice": {"extents": [6, 2]}})
    assert main(["verify-bounds", "--config", path]) == EXIT_USAGE


# --- verify-bounds ------------------------------------------------------------

def test_verify_bounds_zero_samples_is_usage(tmp_path):
    assert main(["verify-bounds", "--samples", "0", "--out",
                 str(tmp_path)]) == EXIT_USAGE


def test_verify_bounds_passes_and_writes_reports(tmp_path):
    out = tmp_path / "r"
    code = main(["verify-bounds", "--samples", "50", "--seed", "3",
                 "--out", str(out)])
    assert code == EXIT_PASS
    assert (out / "bounds.csv").exists()
    assert (out / "bounds.png").stat().st_size > 0
    with open(out / "verify-bounds_manifest.json") as fh:
        m = json.load(fh)
    assert m["extras"]["violations"] == 0
    assert m["seed"] == 3
    assert len(m["config_hash"]) == 16
    assert "bounds.csv" in m["files"]


def test_verify_bounds_csv_is_bit_deterministic(tmp_path):
    args = ["verify-bounds", "--samples", "40", "--seed", "5"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(a)]) == EXIT_PASS
    assert main(args + ["--out", str(b)]) == EXIT_PASS
    assert (a / "bounds.csv").read_bytes() == (b / "bounds.csv").read_bytes()


# --- stokes -------------------------------------------------------------------

def test_stokes_free_theory_passes(tmp_path):
    path = _cfg(tmp_path, {"stokes": {"lambda_zero": True}})
    out = tmp_path / "r"
    assert main(["stokes", "--config", path, "--budget", "20000",
                 "--out", str(out)]) == EXIT_PASS
    assert (out / "stokes.csv").exists()
    assert (out / "stokes.png").stat().st_size > 0


def test_stokes_broken_branch_control_fails(tmp_path):
    path = _cfg(tmp_path, {"stokes": {"break_branch": True}})
    assert main(["stokes", "--config", path, "--budget", "20000",
                 "--out", str(tmp_path / "r")]) == EXIT_VIOLATION


def test_stokes_lattice_limit(tmp_path):
    path = _cfg(tmp_path, {"stokes": {"extents": [4, 2]}})
    assert main(["stokes", "--config", path,
                 "--out", str(tmp_path / "r")]) == EXIT_USAGE


# --- scaling ------------------------------------------------------------------

def test_scaling_single_point_grid_is_usage(tmp_path):
    path = _cfg(tmp_path, {"scaling": {"grid": [1e-3]}})
    assert main(["scaling", "--config", path,
                 "--out", str(tmp_path / "r")]) == EXIT_USAGE


def test_scaling_unknown_kind_is_usage(tmp_path):
    path = _cfg(tmp_path, {"scaling": {"kinds": ["step9"]}})
    assert main(["scaling", "--config", path,
                 "--out", str(tmp_path / "r")]) == EXIT_USAGE


def test_scaling_step1_passes_and_reports_fit(tmp_path):
    path = _cfg(tmp_path, {"scaling": {"kinds": ["step1"]}})
    out = tmp_path / "r"
    assert main(["scaling", "--config", path, "--out",
                 str(out)]) == EXIT_PASS
    with open(out / "scaling_manifest.json") as fh:
        m = json.load(fh)
    exps = m["extras"]["experiments"]
    assert len(exps) == 1 and exps[0]["kind"] == "step1"
    assert exps[0]["r_squared"] >= 0.95
    assert (out / "scaling.csv").exists()
    assert (out / "scaling.png").stat().st_size > 0


# --- rg-step ------------------------------------------------------------------

def test_rg_step_control_passes(tmp_path):
    path = _cfg(tmp_path, {"rg_step": {"control": True}})
    out = tmp_path / "r"
    assert main(["rg-step", "--config", path, "--budget", "40000",
                 "--out", str(out)]) == EXIT_PASS
    with open(out / "rg-step_manifest.json") as fh:
        m = json.load(fh)
    assert m["extras"]["relative_difference"] < m["extras"]["tolerance"]
    assert (out / "rg_step.csv").exists()
    assert (out / "rg_step.png").stat().st_size > 0


def test_rg_step_multi_site_coarse_is_usage(tmp_path):
    path = _cfg(tmp_path, {"rg_step": {"extents": [8, 2]}})
    assert main(["rg-step", "--config", path,
                 "--out", str(tmp_path / "r")]) == EXIT_USAGE


# --- export-operators ---------------------------------------------------------

def test_export_operators_round_trips(tmp_path):
    out = tmp_path / "r"
    assert main(["export-operators", "--out", str(out)]) == EXIT_PASS
    names = {f for f in os.listdir(out)}
    for op in ("Q", "Qn", "Dn", "Delta", "C_n", "D_n", "C_half",
               "D_half"):
        assert f"op_{op}.json" in names
        load_linop(out / f"op_{op}.json")
    assert "symbol.csv" in names and "symbol.png" in names
    with open(out / "export-operators_manifest.json") as fh:
        m = json.load(fh)
    assert m["extras"]["gamma_grad"] > 0
