import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsrg.lattice import (
    Field,
    Lattice,
    LatticeError,
    backward_difference,
    coarse_lattice,
    constant,
    delta,
    dft,
    field_from_csv,
    field_from_json,
    field_to_csv,
    field_to_json,
    fine_lattice,
    forward_difference,
    idft,
    make_lattice,
    momentum_grid,
    norms,
    pairing,
    plane_wave,
    random_field,
    translate,
    unit_lattice,
    zeros,
)

LATTICES = [
    unit_lattice(1, (4, 2), 2),
    unit_lattice(2, (4, 2, 2), 2),
    unit_lattice(3, (4, 2, 2, 2), 2),
]


def _rand(lat, seed=0, scale=1.0):
    return random_field(lat, np.random.default_rng(seed), scale)


# --- construction ------------------------------------------------------------

def test_levels_of_one_step():
    unit = unit_lattice(1, (4, 2), 2)
    assert unit.spacings == (1.0, 1.0)
    coarse = coarse_lattice(unit)
    assert coarse.extents == (1, 1)
    assert coarse.spacings == (4.0, 2.0)
    assert coarse.cell_volume == 8.0
    fine = fine_lattice(unit, n=1)
    assert fine.extents == (16, 4)
    assert fine.spacings == (0.25, 0.5)
    assert fine.nsites == 64


def test_block_clipping_on_tiny_tori():
    unit = unit_lattice(1, (2, 1), 2)
    coarse = coarse_lattice(unit)
    assert coarse.extents == (1, 1)
    assert coarse.spacings == (2.0, 1.0)


@pytest.mark.parametrize("bad", [
    dict(spatial_dim=0, extents=(4,), spacings=(1.0,)),
    dict(spatial_dim=4, extents=(4, 2, 2, 2, 2), spacings=(1.0,) * 5),
    dict(spatial_dim=1, extents=(4,), spacings=(1.0,)),
    dict(spatial_dim=1, extents=(4, 0), spacings=(1.0, 1.0)),
    dict(spatial_dim=1, extents=(4, 2), spacings=(1.0, -1.0)),
])
def test_invalid_lattices_rejected(bad):
    with pytest.raises(LatticeError):
        Lattice(**bad)


def test_make_lattice_rejects_small_L_and_bad_level():
    with pytest.raises(LatticeError):
        make_lattice(1, (4, 2), L=1)
    with pytest.raises(LatticeError):
        make_lattice(1, (4, 2), L=2, level="medium")


def test_coarse_requires_divisible_extents():
    with pytest.raises(LatticeError):
        coarse_lattice(unit_lattice(1, (6, 2), 2))


# --- fields ------------------------------------------------------------------

def test_field_shape_and_finiteness_checks():
    lat = unit_lattice(1, (4, 2), 2)
    with pytest.raises(LatticeError):
        Field(lat, np.zeros(7))
    with pytest.raises(LatticeError):
        Field(lat, np.full((4, 2), np.nan))
    f = Field(lat, np.arange(8.0))
    assert f.values.shape == (4, 2)
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0  # immutable after creation


def test_field_algebra_requires_same_lattice():
    f = _rand(unit_lattice(1, (4, 2), 2))
    g = _rand(unit_lattice(1, (2, 1), 2))
    with pytest.raises(LatticeError):
        f + g


def test_field_linear_algebra():
    lat = unit_lattice(1, (4, 2), 2)
    f, g = _rand(lat, 1), _rand(lat, 2)
    np.testing.assert_allclose((f + g).values, f.values + g.values)
    np.testing.assert_allclose((f - g).values, f.values - g.values)
    np.testing.assert_allclose((2.5j * f).values, 2.5j * f.values)
    np.testing.assert_allclose((-f).values, -f.values)
    np.testing.assert_allclose(f.conj().values, np.conj(f.values))


# --- difference calculus -----------------------------------------------------

@pytest.mark.parametrize("lat", LATTICES)
def test_forward_difference_commutes_with_translations(lat):
    rng = np.random.default_rng(5)
    f = random_field(lat, rng)
    for nu in range(lat.ndim):
        shift = tuple(int(rng.integers(0, e)) for e in lat.extents)
        lhs = translate(forward_difference(f, nu), shift)
        rhs = forward_difference(translate(f, shift), nu)
        assert np.array_equal(lhs.values, rhs.values)


@pytest.mark.parametrize("lat", LATTICES)
def test_summation_by_parts(lat):
    f, g = _rand(lat, 3), _rand(lat, 4)
    for nu in range(lat.ndim):
        lhs = pairing(forward_difference(f, nu), g)
        rhs = -pairing(f, backward_difference(g, nu))
        assert abs(lhs - rhs) < 1e-12 * (1.0 + abs(lhs))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_grad_sup_bounded_by_twice_sup(seed):
    lat = unit_lattice(1, (4, 2), 2)
    f = random_field(lat, np.random.default_rng(seed))
    rep = norms(f)
    assert rep.grad_sup <= 2.0 * rep.sup + 1e-12


def test_difference_direction_out_of_range():
    f = _rand(unit_lattice(1, (4, 2), 2))
    with pytest.raises(LatticeError):
        forward_difference(f, 2)
    with pytest.raises(LatticeError):
        backward_difference(f, -1)


# --- norms and pairings ------------------------------------------------------

def test_norms_oracle_on_constant_field():
    lat = unit_lattice(1, (4, 2), 2)
    f = constant(lat, 3.0 - 4.0j)
    rep = norms(f)
    assert rep.sup == pytest.approx(5.0)
    assert rep.l2 == pytest.approx(5.0 * math.sqrt(8.0))
    assert rep.l4 == pytest.approx(5.0 * 8.0**0.25)
    assert rep.grad_sup == 0.0
    assert rep.grad_l2 == 0.0


def test_pairing_is_bilinear_not_sesquilinear():
    lat = unit_lattice(1, (2, 1), 2)
    f = Field(lat, np.array([1.0j, 2.0]))
    g = Field(lat, np.array([1.0j, 1.0]))
    # the i * i term contributes -1: no implicit conjugation
    assert pairing(f, g) == pytest.approx(1.0 + 0.0j)
    assert pairing(2.0j * f, g) == pytest.approx(2.0j * pairing(f, g))


# --- Fourier -----------------------------------------------------------------

@pytest.mark.parametrize("lat", LATTICES)
def test_dft_unitary_round_trip(lat):
    f = _rand(lat, 6)
    back = idft(dft(f))
    scale = np.abs(f.flat).max()
    assert np.abs(back.flat - f.flat).max() < 1e-12 * scale
    # Parseval with the unnormalized counting measure
    assert np.sum(np.abs(dft(f).flat) ** 2) == pytest.approx(
        np.sum(np.abs(f.flat) ** 2), rel=1e-12)


def test_plane_wave_is_a_single_dft_mode():
    lat = unit_lattice(1, (4, 2), 2)
    kgrid = momentum_grid(lat)
    pw = plane_wave(lat, kgrid[1, 1])
    mode = dft(pw).values
    assert abs(mode[1, 1]) == pytest.approx(math.sqrt(lat.nsites))
    mode_rest = mode.copy()
    mode_rest[1, 1] = 0.0
    assert np.abs(mode_rest).max() < 1e-12


def test_momentum_grid_lies_in_first_brillouin_zone():
    lat = fine_lattice(unit_lattice(1, (4, 2), 2), n=1)
    kg = momentum_grid(lat).reshape(-1, lat.ndim)
    for nu, s in enumerate(lat.spacings):
        assert kg[:, nu].max() <= math.pi / s + 1e-12
        assert kg[:, nu].min() > -math.pi / s - 1e-12


# --- helpers and serialization ------------------------------------------------

def test_zeros_delta_constant():
    lat = unit_lattice(1, (4, 2), 2)
    assert np.all(zeros(lat).values == 0)
    d = delta(lat, (1, 0))
    assert d.values[1, 0] == 1.0 and np.sum(np.abs(d.values)) == 1.0
    assert np.all(constant(lat, 2.0).values == 2.0)


@pytest.mark.parametrize("codec", [
    (field_to_json, field_from_json),
    (field_to_csv, field_from_csv),
])
def test_field_serialization_round_trip(codec):
    enc, dec = codec
    f = _rand(unit_lattice(2, (4, 2, 2), 2), 8)
    g = dec(enc(f))
    assert g.lattice == f.lattice
    np.testing.assert_array_equal(g.values, f.values)
