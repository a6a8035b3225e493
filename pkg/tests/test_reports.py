import csv
import json

import numpy as np
import pytest

from bsrg import reports
from bsrg.experiments import DecayFit


def test_config_hash_is_deterministic_and_key_order_insensitive():
    a = {"x": 1, "y": {"z": [1, 2]}}
    b = {"y": {"z": [1, 2]}, "x": 1}
    assert reports.config_hash(a) == reports.config_hash(b)
    assert len(reports.config_hash(a)) == 16
    assert reports.config_hash(a) != reports.config_hash({"x": 2})


def test_write_csv_round_trips_floats_exactly(tmp_path):
    path = tmp_path / "t.csv"
    rows = [(1, 0.1 + 0.2, 1.0 / 3.0, 1e-300),
            (2, -5.0, complex(1.5, -2.5), 0.0)]
    reports.write_csv(str(path), ["i", "a", "b", "c"], rows)
    with open(path, newline="") as fh:
        back = list(csv.reader(fh))
    assert back[0] == ["i", "a", "b", "c"]
    assert float(back[1][1]) == 0.1 + 0.2
    assert float(back[1][2]) == 1.0 / 3.0
    assert complex(back[2][2]) == complex(1.5, -2.5)


def test_manifest_carries_hash_seed_budget(tmp_path):
    path = tmp_path / "m.json"
    cfg = {"params": {"v0": 1e-3}}
    reports.write_manifest(str(path), "verify-bounds", cfg, seed=7,
                           budget=1000, files=["a.csv"],
                           extras={"violations": 0}, runtime=1.2345)
    with open(path) as fh:
        m = json.load(fh)
    assert m["command"] == "verify-bounds"
    assert m["config_hash"] == reports.config_hash(cfg)
    assert m["seed"] == 7 and m["budget"] == 1000
    assert m["files"] == ["a.csv"]
    assert m["extras"]["violations"] == 0
    assert m["runtime_seconds"] == 1.234


def test_plots_render_to_files(tmp_path):
    fit = DecayFit(grid=(1e-3, 3e-4, 1e-4),
                   log_errors=(-5.0, -9.0, -20.0), fitted_exponent=0.7,
                   fitted_prefactor=2.0, r_squared=0.99, intercept=0.0,
                   monotone=True, superpolynomial=True, kind="step2")
    p1 = reports.plot_decay_fits(str(tmp_path / "d.png"), [fit])
    p2 = reports.plot_bound_margins(str(tmp_path / "b.png"),
                                    np.array([1.0, 2.0]),
                                    np.array([0.5, 1.5]),
                                    np.array([1.5, 2.5]))
    kg = np.array([[0.0, 0.0], [1.0, 0.0]])
    p3 = reports.plot_symbol(str(tmp_path / "s.png"), kg,
                             np.array([0.0, 1.0 - 0.5j]))
    for p in (p1, p2, p3):
        assert (tmp_path / p.split("/")[-1]).stat().st_size > 0
