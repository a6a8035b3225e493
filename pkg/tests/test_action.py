import numpy as np
import pytest

from bsrg.action import (
    eval_An,
    eval_An_at_background,
    effective_exponent,
    fluctuation_expansion,
    proposition1_check,
    proposition1_scan,
    symbol_constants,
)
from bsrg.background import solve_background
from bsrg.domains import sample_An_batch, sample_checkInt, sample_Int
from bsrg.interaction import Interaction
from bsrg.lattice import Field, random_field, zeros
from bsrg.operators import RGOperators


def test_An_is_stationary_at_the_background(params, ops42, inter):
    rng = np.random.default_rng(0)
    psi = sample_Int(params, ops42.unit, rng, c=0.3)
    sol = solve_background(psi.conj(), psi, params, ops42, inter)
    base = eval_An(psi.conj(), psi, sol.phi_star, sol.phi, params, ops42,
                   inter)
    eps = 1e-6
    h = random_field(ops42.fine, rng)
    plus = eval_An(psi.conj(), psi, sol.phi_star, sol.phi + eps * h,
                   params, ops42, inter)
    minus = eval_An(psi.conj(), psi, sol.phi_star, sol.phi - eps * h,
                    params, ops42, inter)
    assert abs(plus - minus) / (2.0 * eps) < 1e-9
    plus = eval_An(psi.conj(), psi, sol.phi_star + eps * h, sol.phi,
                   params, ops42, inter)
    minus = eval_An(psi.conj(), psi, sol.phi_star - eps * h, sol.phi,
                    params, ops42, inter)
    assert abs(plus - minus) / (2.0 * eps) < 1e-9
    assert abs(base) > 0  # the collapsed value itself is generic


def test_symbol_constants_structure(params, ops42):
    const = symbol_constants(params, ops42)
    assert const["gamma_grad"] > 0
    assert const["gamma_tilde_grad"] >= const["gamma_grad"]
    assert const["gamma"] > 0
    assert const["gamma_tilde"] >= 8.0 * const["gamma"]
    assert const["min_re_nonzero"] > 0
    assert abs(const["re_at_zero"]) < 1e-10


def test_proposition1_check_passes_inside_the_box(params, ops42, inter):
    rng = np.random.default_rng(1)
    const = symbol_constants(params, ops42)
    for seed in range(5):
        psi = sample_Int(params, ops42.unit, rng, c=0.8)
        rep = proposition1_check(psi, params, inter, delta=0.1, ops=ops42,
                                 constants=const)
        assert rep.passed, rep
        assert rep.margin > 0


def test_proposition1_check_rejects_fields_outside_the_domain(params,
                                                              ops42, inter):
    big = Field(ops42.unit, np.full(ops42.unit.extents,
                                    2.0 * params.kappa_n, dtype=complex))
    with pytest.raises(ValueError):
        proposition1_check(big, params, inter, ops=ops42)
    psi = zeros(ops42.unit)
    with pytest.raises(ValueError):
        proposition1_check(psi, params, inter, delta=0.0, ops=ops42)


def test_proposition1_scan_matches_single_checks(params, ops42, inter):
    rng = np.random.default_rng(2)
    const = symbol_constants(params, ops42)
    psis = sample_An_batch(params, ops42.unit, rng, 20)
    scan = proposition1_scan(psis, params, inter, 0.1, ops42, const)
    assert scan["violations"] == 0
    rep = proposition1_check(Field(ops42.unit, psis[0]), params, inter,
                             delta=0.1, ops=ops42, constants=const)
    assert scan["re_An"][0] == pytest.approx(rep.re_An, rel=1e-8)
    assert scan["lower"][0] == pytest.approx(rep.lower, rel=1e-10)
    assert scan["upper"][0] == pytest.approx(rep.upper, rel=1e-10)


def test_effective_exponent_reduces_to_An_at_zero_coupling_strength(
        params, ops42, inter):
    rng = np.random.default_rng(3)
    psi = sample_Int(params, ops42.unit, rng, c=0.3)
    theta = zeros(ops42.coarse)
    e = effective_exponent(theta, theta, psi.conj(), psi, params, ops42,
                           inter)
    an = eval_An_at_background(psi.conj(), psi, params, ops42, inter)
    aL2 = params.a / params.L**2
    volc = ops42.coarse.cell_volume
    Q = ops42.Q.matrix
    coarse_term = aL2 * volc * np.sum((Q @ np.conj(psi.flat))
                                      * (Q @ psi.flat))
    assert e == pytest.approx(an + coarse_term, rel=1e-12)


def test_effective_exponent_perturbation_hook(params, ops42, inter):
    rng = np.random.default_rng(4)
    psi = sample_Int(params, ops42.unit, rng, c=0.3)
    theta = zeros(ops42.coarse)
    base = effective_exponent(theta, theta, psi.conj(), psi, params,
                              ops42, inter)
    shifted = effective_exponent(theta, theta, psi.conj(), psi, params,
                                 ops42, inter,
                                 perturbation=lambda ps, p: 0.25j
                                 * np.ones(p.shape[0]))
    assert shifted - base == pytest.approx(0.25j)


def test_fluctuation_remainder_is_quartic_at_zero_mu_and_theta(params,
                                                               unit21,
                                                               inter):
    p = params.replace(mu_n=0.0)
    ops = RGOperators(p, unit21)
    rng = np.random.default_rng(5)
    theta = zeros(ops.coarse)
    d = random_field(unit21, rng, scale=0.05)
    ds = random_field(unit21, rng, scale=0.05)
    scales = np.geomspace(1.0, 0.1, 5)
    rems = []
    for s in scales:
        quad, rem = fluctuation_expansion(theta, theta, s * ds, s * d, p,
                                          ops, inter)
        rems.append(abs(rem))
    slopes = np.diff(np.log(rems)) / np.diff(np.log(scales))
    assert np.all(np.abs(slopes - 4.0) < 0.05), slopes


def test_fluctuation_quadratic_defect_is_order_mu(params, ops21, inter):
    # with mu in the action but not in the fluctuation covariance, the
    # remainder keeps a quadratic piece of relative size O(mu)
    rng = np.random.default_rng(6)
    theta = sample_checkInt(params, ops21.coarse, rng, scale=0.4)
    d = random_field(ops21.unit, rng, scale=0.02)
    ds = random_field(ops21.unit, rng, scale=0.02)
    quad, rem = fluctuation_expansion(theta.conj(), theta, ds, d, params,
                                      ops21, inter)
    assert abs(rem) < 20.0 * params.mu_n * abs(quad)
