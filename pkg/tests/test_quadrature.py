import math

import numpy as np
import pytest
from scipy.integrate import quad

from bsrg.domains import RegionSpec, sample_checkInt
from bsrg.lattice import unit_lattice
from bsrg.operators import RGOperators
from bsrg.quadrature import (
    QUASI,
    TENSOR,
    QuadratureError,
    gaussian_cf_oracle,
    holomorphy_boundary_check,
    integrate_real_slice,
    integrate_surface_slice,
    sbot_map,
    stationary_phase_eval,
    stokes_identity_check,
)

LAT1 = unit_lattice(1, (1, 1), 2)
LAT2 = unit_lattice(1, (2, 1), 2)


# --- Gaussian exactness -------------------------------------------------------

def test_one_site_gaussian_oracle(params):
    a = 1.7

    def exponent(z):
        return a * np.abs(z[:, 0]) ** 2

    region = RegionSpec(kind="all", params=params, lattice=LAT1,
                        radius=7.0)
    est = integrate_real_slice(exponent, region, budget=20000)
    assert abs(est.value - 1.0 / a) * a < 1e-8
    assert est.rel_error < 1e-6
    assert not est.partial


@pytest.mark.parametrize("lat,r", [(LAT1, 0.9), (LAT1, 2.5), (LAT2, 1.4)])
def test_disk_gaussian_matches_incomplete_gamma(params, lat, r):
    def f_log(zstar, z):
        return -np.sum(zstar * z, axis=1)

    est = integrate_surface_slice(f_log, sbot_map(lat), lat, r,
                                  budget=40000)
    oracle = gaussian_cf_oracle(lat.nsites, r)
    assert abs(est.value - oracle) < 1e-8 * oracle


def test_quartic_radial_oracle(params):
    lam = 0.3
    R = 3.0

    def exponent(z):
        r2 = np.abs(z[:, 0]) ** 2
        return r2 + lam * r2**2

    region = RegionSpec(kind="all", params=params, lattice=LAT1, radius=R)
    est = integrate_real_slice(exponent, region, budget=20000)
    oracle, _ = quad(lambda u: math.exp(-u - lam * u * u), 0.0, R * R)
    assert abs(est.value - oracle) < 1e-8 * oracle


def test_two_site_gaussian_determinant_oracle(params):
    rng = np.random.default_rng(5)
    M = np.eye(2) + 0.3 * (rng.standard_normal((2, 2))
                           + 1j * rng.standard_normal((2, 2)))

    def exponent(z):
        return np.einsum("bi,ij,bj->b", np.conj(z), M, z)

    region = RegionSpec(kind="all", params=params, lattice=LAT2,
                        radius=6.0)
    est = integrate_real_slice(exponent, region, budget=200000)
    exact = 1.0 / np.linalg.det(M)
    assert abs(est.value - exact) / abs(exact) < 1e-6


def test_tensor_and_quasi_random_agree(params):
    def exponent(z):
        r2 = np.abs(z[:, 0]) ** 2
        return r2 + 0.2 * r2**2

    region = RegionSpec(kind="all", params=params, lattice=LAT1,
                        radius=5.0)
    t = integrate_real_slice(exponent, region, budget=20000,
                             method=TENSOR)
    q = integrate_real_slice(exponent, region, budget=60000, method=QUASI,
                             seed=3)
    assert abs(t.value - q.value) <= 5.0 * (t.abs_error + q.abs_error) \
        + 1e-8 * abs(t.value)


# --- structure of the estimates ----------------------------------------------

def test_estimates_add(params):
    def exponent(z):
        return np.abs(z[:, 0]) ** 2

    region = RegionSpec(kind="all", params=params, lattice=LAT1,
                        radius=2.0)
    a = integrate_real_slice(exponent, region, budget=8000)
    total = a + a
    assert total.value == pytest.approx(2.0 * a.value)
    assert total.evaluations == 2 * a.evaluations


def test_log_abs_survives_deep_underflow(params):
    def exponent(z):
        return np.abs(z[:, 0]) ** 2 + 900.0

    region = RegionSpec(kind="all", params=params, lattice=LAT1,
                        radius=2.0)
    est = integrate_real_slice(exponent, region, budget=8000)
    assert est.value == 0.0
    assert -906.0 < est.log_abs < -899.0


def test_unknown_method_and_empty_ranges_raise(params):
    def exponent(z):
        return np.abs(z[:, 0]) ** 2

    region = RegionSpec(kind="all", params=params, lattice=LAT1,
                        radius=2.0)
    with pytest.raises(QuadratureError):
        integrate_real_slice(exponent, region, method="simpson")
    with pytest.raises(QuadratureError):
        integrate_surface_slice(lambda zs, z: -np.sum(zs * z, axis=1),
                                sbot_map(LAT1), LAT1, 1.0, 1000,
                                r_inner=2.0)
    with pytest.raises(QuadratureError):
        integrate_real_slice(exponent,
                             RegionSpec(kind="all", params=params,
                                        lattice=LAT1), budget=100)


# --- holomorphy ---------------------------------------------------------------

def test_holomorphy_boundary_integral_vanishes():
    def f_log(zstar, z):
        return -(zstar[:, 0] * z[:, 0]
                 + 0.2 * zstar[:, 0] ** 2 * z[:, 0] ** 2)

    for center in (np.array([0.3 + 0.1j, 0.2 - 0.2j]),
                   np.array([0.0j, 0.5 + 0.0j])):
        est = holomorphy_boundary_check(f_log, center, 0.4, budget=4000)
        assert abs(est.value) < 1e-8


def test_holomorphy_check_is_one_site_only():
    with pytest.raises(QuadratureError):
        holomorphy_boundary_check(lambda zs, z: zs[:, 0], np.zeros(3), 0.1)


# --- Stokes identity ----------------------------------------------------------

def _theta(params, ops, seed=0):
    rng = np.random.default_rng(seed)
    return sample_checkInt(params, ops.coarse, rng, scale=0.5)


def test_stokes_identity_free_theory(params):
    p = params.replace(lambda_n=0.0)
    ops = RGOperators(p, LAT1)
    rep = stokes_identity_check(_theta(p, ops), p, budget=20000, ops=ops)
    assert rep["passed"]
    assert rep["relative_residual"] < 1e-8


def test_stokes_identity_interacting(params):
    ops = RGOperators(params, LAT1)
    rep = stokes_identity_check(_theta(params, ops), params, budget=20000,
                                ops=ops)
    assert rep["passed"]
    assert rep["relative_residual"] < 1e-6


def test_stokes_broken_branch_control_fails(params):
    ops = RGOperators(params, LAT1)
    rep = stokes_identity_check(_theta(params, ops), params, budget=20000,
                                ops=ops, break_branch=True)
    assert not rep["passed"]
    assert rep["relative_residual"] > 1e-3


# --- stationary phase ---------------------------------------------------------

def test_stationary_phase_free_theory_matches_gaussian_disk(params):
    p = params.replace(lambda_n=0.0, mu_n=0.0)
    ops = RGOperators(p, LAT1)
    from bsrg.interaction import Interaction
    free = Interaction(kind="local-quartic", lambda_n=0.0)
    theta = _theta(p, ops, seed=2)
    rep = stationary_phase_eval(theta.conj(), theta, p, free,
                                budget=20000, ops=ops, full_report=True)
    sp = rep["stationary_phase"]
    # with the fluctuation embedding through D, the free integrand is the
    # unit Gaussian on the disk, so the disk mass is the incomplete gamma
    oracle = gaussian_cf_oracle(1, p.r_n)
    assert abs(sp.cF_n - oracle) < 1e-6 * abs(oracle)
    assert rep["gaussian_cF"] == pytest.approx(oracle)
    assert sp.detC == pytest.approx(complex(np.linalg.det(ops.C_n.matrix)))
