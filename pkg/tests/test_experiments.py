import numpy as np
import pytest

from bsrg.experiments import (
    DEFAULT_BUDGETS,
    DEFAULT_GRIDS,
    DecayFit,
    EXPERIMENT_KINDS,
    ExperimentError,
    error_scaling_experiment,
    params_for,
    rg_step_comparison,
    step1_far_mass,
)
from bsrg.interaction import Interaction
from bsrg.lattice import unit_lattice
from bsrg.operators import RGOperators


def test_default_grids_span_enough_decades():
    for kind in EXPERIMENT_KINDS:
        g = DEFAULT_GRIDS[kind]
        assert len(g) == 6
        assert max(g) / min(g) >= 10**1.5 - 1e-9
        assert kind in DEFAULT_BUDGETS


def test_params_for_applies_the_template():
    p = params_for(1e-4)
    assert p.v0 == pytest.approx(1e-4)
    assert p.c0 == pytest.approx(0.5)
    q = params_for(1e-4, {"c0": 0.8})
    assert q.c0 == pytest.approx(0.8)


def test_step1_far_mass_decreases_with_coupling():
    logs = []
    for v0 in (1e-3, 3e-4, 1e-4):
        p = params_for(v0)
        lat = unit_lattice(1, (2, 1), p.L)
        ops = RGOperators(p, lat)
        row = step1_far_mass(p, ops.coarse.cell_volume)
        assert row["relative"] >= 0.0
        assert np.isfinite(row["log_relative"])
        logs.append(row["log_relative"])
    assert logs[0] > logs[1] > logs[2]


def test_step1_far_mass_needs_positive_coupling():
    p = params_for(1e-3).replace(lambda_n=0.0)
    with pytest.raises(ExperimentError):
        step1_far_mass(p, 8.0)


def test_decay_fit_validation():
    with pytest.raises(ExperimentError):
        DecayFit(grid=(1e-4, 1e-3), log_errors=(0.0, -1.0),
                 fitted_exponent=1.0, fitted_prefactor=1.0,
                 r_squared=0.99, intercept=0.0, monotone=True,
                 superpolynomial=True)
    with pytest.raises(ExperimentError):
        DecayFit(grid=(1e-3, 1e-4), log_errors=(0.0, -1.0),
                 fitted_exponent=1.0, fitted_prefactor=1.0,
                 r_squared=1.5, intercept=0.0, monotone=True,
                 superpolynomial=True)


def test_error_scaling_experiment_rejects_bad_inputs():
    with pytest.raises(ExperimentError):
        error_scaling_experiment("step4")
    with pytest.raises(ExperimentError):
        error_scaling_experiment("step1", coupling_grid=(1e-3, 5e-4))


def test_step1_experiment_passes_its_gates():
    fit = error_scaling_experiment("step1", seed=0)
    assert fit.kind == "step1"
    assert fit.monotone and fit.superpolynomial
    assert fit.r_squared >= 0.95
    assert fit.fitted_prefactor > 0
    assert fit.passed
    assert len(fit.details["rows"]) == len(fit.grid)


def test_rg_step_needs_one_coarse_site(params, inter):
    with pytest.raises(ExperimentError):
        rg_step_comparison(params, inter, budget=1000, extents=(8, 2))


def test_rg_step_free_control_matches_to_quadrature_error():
    p = params_for(1e-4, {"c0": 0.8, "mu_scale": 0.1}).replace(
        lambda_n=0.0, kappa_n=1e3, kappa_prime_n=1e3, r_n=9.0)
    inter = Interaction(kind="local-quartic", lambda_n=0.0)
    rep = rg_step_comparison(p, inter, budget=40000, seed=0)
    assert rep["relative_difference"] < max(100.0 * rep["error_floor"],
                                            1e-9)
    assert rep["N_n_measured"].real == pytest.approx(
        rep["N_n_gaussian"], rel=1e-6)
    assert rep["Z_tilde_modeled"] == 1.0
