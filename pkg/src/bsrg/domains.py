"""Integration domains of the coarse-graining step.

Membership predicates use strict inequalities throughout.  The main
regions are the small-field boxes Int(n, c) on the unit lattice, the
coarse-field box checkInt(n), the near/far split of the coarse Gaussian,
the real fluctuation disk S_Bot, and the Stokes cylinder connecting the
real slice to the shifted slice through the constraint family I'_t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import Field, Lattice, forward_difference, norms
from .operators import FlowParams, RGOperators, sup_op_norm

__all__ = [
    "RegionSpec",
    "in_Int",
    "in_An",
    "in_checkInt",
    "step1_split",
    "step1_c",
    "step1_inclusion_check",
    "coarse_l2_norm",
    "sbot_sample",
    "cylinder_point",
    "wall_positivity",
    "wall_radius",
    "sample_Int",
    "sample_An_batch",
    "sample_checkInt",
]


@dataclass(frozen=True)
class RegionSpec:
    """A named integration/membership domain.

    kind is one of: "Int", "An", "checkInt", "IntS", "IntB", "SBot",
    "CylinderWall", "Ifamily", "all".  ``c`` is the radius multiplier for
    Int(n, c); ``t`` selects a member of the constraint family; ``theta``
    anchors the theta-dependent regions; ``lattice`` is where the
    integration variables live.
    """

    kind: str
    params: FlowParams
    lattice: Lattice | None = None
    c: float | None = None
    t: float | None = None
    theta: Field | None = None
    radius: float | None = None

    def __post_init__(self):
        if self.c is not None and self.c <= 0:
            raise ValueError("radius multiplier c must be positive")
        if self.t is not None and not 0.0 <= self.t <= 1.0:
            raise ValueError("family parameter t must lie in [0, 1]")


def in_Int(psi: Field, params: FlowParams, c: float) -> bool:
    """|psi(x)| < c kappa(n) and |d_nu psi(x)| < c kappa'(n) everywhere."""
    if np.abs(psi.flat).max(initial=0.0) >= c * params.kappa_n:
        return False
    for nu in range(psi.lattice.ndim):
        d = forward_difference(psi, nu)
        if np.abs(d.flat).max(initial=0.0) >= c * params.kappa_prime_n:
            return False
    return True


def in_An(psi: Field, params: FlowParams) -> bool:
    return in_Int(psi, params, 1.0)


def in_checkInt(theta: Field, params: FlowParams) -> bool:
    """Coarse-field box inherited from the next-scale small-field region."""
    L = params.L
    bound = params.c0 * params.kappa_next / L**1.5
    if np.abs(theta.flat).max(initial=0.0) >= bound:
        return False
    block = (L * L,) + (L,) * theta.lattice.spatial_dim
    for nu in range(theta.lattice.ndim):
        gbound = params.c0 * params.kappa_prime_next / (L**1.5 * block[nu])
        d = forward_difference(theta, nu)
        if np.abs(d.flat).max(initial=0.0) >= gbound:
            return False
    return True


def coarse_l2_norm(f: Field) -> float:
    """Cell-volume weighted L^2 norm (the coarse pairing norm)."""
    return math.sqrt(f.lattice.cell_volume
                     * float(np.sum(np.abs(f.flat) ** 2)))


def step1_split(theta: Field, psi: Field, params: FlowParams,
                Q=None) -> str:
    """Classify (theta, psi) into the near ("IntS") or far ("IntB") part.

    Near means L^-1 ||theta - Q psi||_-1 < r_n-coupling^(-eps).
    """
    if Q is None:
        ops = RGOperators(params, psi.lattice)
        Q = ops.Q
    diff = Field(theta.lattice, theta.flat - Q.matrix @ psi.flat)
    threshold = params.lambda_n ** (-params.eps) if params.lambda_n > 0 \
        else math.inf
    if coarse_l2_norm(diff) / params.L < threshold:
        return "IntS"
    return "IntB"


def step1_c(params: FlowParams, ops: RGOperators) -> float:
    """Radius multiplier of the region excluded by the near-part inclusion.

    The minimum runs over the block-average norm for the field bound and
    the difference-field averaging operators for each gradient bound.
    """
    L = params.L
    c0 = params.c0
    candidates = [c0 / (2.0 * L ** (1.5 - params.eta) * sup_op_norm(ops.Q))]
    block = (L * L,) + (L,) * ops.unit.spatial_dim
    for nu in range(ops.unit.ndim):
        qn = sup_op_norm(ops.q_minus_plus(nu))
        candidates.append(
            c0 / (2.0 * L ** (1.5 - params.eta_prime) * block[nu] * qn))
    return min(candidates)


def _random_in_disks(rng, shape, radius):
    r = radius * np.sqrt(rng.random(shape))
    phase = rng.random(shape) * 2.0 * np.pi
    return r * np.exp(1j * phase)


def sample_Int(params: FlowParams, lat: Lattice, rng,
               c: float | None = None) -> Field:
    """A random field strictly inside Int(n, c) (bulk-style sampler)."""
    c = params.c0 if c is None else c
    radius = 0.49 * c * min(params.kappa_n, params.kappa_prime_n)
    return Field(lat, _random_in_disks(rng, tuple(lat.extents), radius))


def sample_An_batch(params: FlowParams, lat: Lattice, rng,
                    count: int) -> np.ndarray:
    """Random fields in An(n) mixing bulk, near-constant and wavelike
    styles so that both norms and gradients explore their ranges.

    Returns an array of shape (count, nsites).
    """
    n = lat.nsites
    out = np.empty((count, n), dtype=complex)
    kappa, kp = params.kappa_n, params.kappa_prime_n
    for i in range(count):
        style = rng.integers(0, 3)
        if style == 0:
            vals = _random_in_disks(rng, (n,), 0.49 * min(kappa, kp))
        elif style == 1:
            amp = (0.5 + 0.45 * rng.random()) * kappa
            base = amp * np.exp(2j * np.pi * rng.random())
            vals = base + _random_in_disks(rng, (n,), 0.2 * min(kappa, kp))
            if np.abs(vals).max() >= kappa:
                vals *= 0.98 * kappa / np.abs(vals).max()
        else:
            mode = np.zeros(lat.extents, dtype=complex)
            idx = tuple(rng.integers(0, e) for e in lat.extents)
            mode[idx] = 1.0
            wave = np.fft.ifftn(mode) * math.sqrt(n)
            k = [2 * np.pi * j / e for j, e in zip(idx, lat.extents)]
            gfac = max(abs(np.exp(1j * kk) - 1.0) for kk in k)
            cap = min(kappa, kp / gfac) if gfac > 1e-12 else kappa
            amp = 0.9 * cap * rng.random()
            vals = (amp * np.exp(2j * np.pi * rng.random())) * wave.ravel()
        f = Field(lat, vals)
        if not in_An(f, params):
            vals = _random_in_disks(rng, (n,), 0.45 * min(kappa, kp))
        out[i] = vals
    return out


def sample_checkInt(params: FlowParams, coarse: Lattice, rng,
                    scale: float = 0.95) -> Field:
    """A random coarse field strictly inside checkInt(n)."""
    L = params.L
    bound = params.c0 * params.kappa_next / L**1.5
    gcap = params.c0 * params.kappa_prime_next / (2.0 * L**1.5)
    radius = scale * min(bound, gcap)
    return Field(coarse, _random_in_disks(rng, tuple(coarse.extents), radius))


def step1_inclusion_check(params: FlowParams, samples: int, seed: int,
                          ops: RGOperators | None = None,
                          unit: Lattice | None = None) -> dict:
    """Randomized verification that the near part of the coarse Gaussian,
    at coarse fields outside checkInt(n), avoids Int(n, c).

    Samples are constructed to satisfy the preconditions exactly (theta
    outside checkInt, psi inside Int(n) and classified near); the check
    then asserts psi falls outside Int(n, c) and reports the minimum
    slack of that exclusion.
    """
    if ops is None:
        if unit is None:
            raise ValueError("need either ops or a unit lattice")
        ops = RGOperators(params, unit)
    unit = ops.unit
    coarse = ops.coarse
    rng = np.random.default_rng(seed)
    c = step1_c(params, ops)
    L = params.L
    c0 = params.c0
    fbound = c0 * params.kappa_next / L**1.5
    block = (L * L,) + (L,) * unit.spatial_dim
    Q = ops.Q.matrix
    uext = tuple(unit.extents)
    cext = tuple(coarse.extents)
    threshold = params.lambda_n ** (-params.eps)
    violations = 0
    min_slack = math.inf
    checked = 0
    attempts = 0
    while checked < samples and attempts < 20 * samples:
        attempts += 1
        grad_mode = bool(rng.integers(0, 2)) and any(e > 1 for e in cext)
        y0 = tuple(rng.integers(0, e) for e in cext)
        nu = int(rng.integers(0, unit.ndim))
        if grad_mode:
            gb = c0 * params.kappa_prime_next / (L**1.5 * block[nu])
            lo = gb * block[nu]
            hi = 0.98 * c0 * min(params.kappa_n, params.kappa_prime_n)
            if lo >= hi:
                grad_mode = False
        if not grad_mode:
            lo, hi = fbound, 0.98 * c0 * min(params.kappa_n,
                                             params.kappa_prime_n)
            if lo >= hi:
                raise ValueError(
                    "no room between the coarse bound and the Int radius; "
                    "choose a smaller initial coupling")
        amp = (lo * 1.02 + (hi - lo * 1.02) * rng.random()) \
            * np.exp(2j * np.pi * rng.random())
        vals = np.zeros(uext, dtype=complex)
        target = tuple((y + 1) % e for y, e in zip(y0, cext)) \
            if grad_mode else y0
        sl = tuple(slice(y * b, (y + 1) * b)
                   for y, b in zip(target, block))
        vals[sl] = amp
        psi = Field(unit, vals)
        pert_cap = 0.4 * params.L * threshold / math.sqrt(
            coarse.nsites * coarse.cell_volume)
        pert = _random_in_disks(rng, cext, min(pert_cap, 0.01 * fbound))
        theta = Field(coarse, (Q @ psi.flat).reshape(cext) + pert)
        if in_checkInt(theta, params) or not in_Int(psi, params, c0):
            continue
        if step1_split(theta, psi, params, ops.Q) != "IntS":
            continue
        checked += 1
        rep = norms(psi)
        ratio = max(rep.sup / (c * params.kappa_n),
                    rep.grad_sup / (c * params.kappa_prime_n))
        if ratio <= 1.0:
            violations += 1
        min_slack = min(min_slack, ratio - 1.0)
    return {
        "samples": checked,
        "violations": violations,
        "min_slack": min_slack,
        "c": c,
    }


def sbot_sample(params: FlowParams, lat: Lattice, count: int, seed: int):
    """Points of the real disk: zeta_* = conj(zeta), ||zeta|| < r_n,
    uniform in the 2N-dimensional ball."""
    rng = np.random.default_rng(seed)
    n = lat.nsites
    out = []
    for _ in range(count):
        g = rng.standard_normal(2 * n)
        g /= np.linalg.norm(g)
        r = params.r_n * rng.random() ** (1.0 / (2 * n))
        vec = r * g
        zeta = Field(lat, vec[:n] + 1j * vec[n:])
        out.append((zeta.conj(), zeta))
    return out


def wall_radius(params: FlowParams) -> float:
    return params.c0**0.25 * params.kappa_prime_n


def _rho_field(theta, params, ops, inter, rho):
    if rho is not None:
        return np.asarray(rho.flat if isinstance(rho, Field) else rho)
    if theta is None:
        return np.zeros(ops.unit.nsites, dtype=complex)
    from .background import solve_critical_fields
    crit = solve_critical_fields(theta.conj(), theta, params, ops, inter)
    return crit.rho_n.flat


def cylinder_point(t: float, zeta: Field, theta: Field | None,
                   params: FlowParams, ops: RGOperators,
                   inter=None, rho=None):
    """The point of the constraint slice I'_t over a given zeta.

    Solves D(t) zeta = conj(D(t)^dagger) conj(zeta_*) + t rho_n for
    zeta_*.  Returns (zeta_star, zeta, on_wall) where on_wall marks
    ||zeta|| at (or beyond) the cylinder radius.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    Dt = ops.sqrt_covariance(t).matrix
    rho_vec = _rho_field(theta, params, ops, inter, rho)
    rhs = np.conj(Dt) @ np.conj(zeta.flat) - t * np.conj(rho_vec)
    zeta_star = Field(ops.unit, np.linalg.solve(Dt.T, rhs))
    on_wall = np.linalg.norm(zeta.flat) >= wall_radius(params) * (1 - 1e-12)
    return zeta_star, zeta, on_wall


def wall_positivity(t: float, zeta: Field, theta: Field | None,
                    params: FlowParams, ops: RGOperators,
                    inter=None, rho=None) -> dict:
    """Re <zeta_*, zeta> on the constraint slice, with its spectral bound.

    The quadratic part equals <conj(eta), C(t)^-1 eta> with eta = D(t)
    zeta, so its real part is bounded below by the smallest eigenvalue of
    the Hermitian part of C(t)^-1 times ||eta||^2; the reality defect adds
    a linear correction bounded by the rho term.
    """
    zeta_star, _, _ = cylinder_point(t, zeta, theta, params, ops, inter,
                                     rho)
    vol0 = ops.unit.cell_volume
    re_pairing = float((vol0 * np.sum(zeta_star.flat * zeta.flat)).real)

    def _spectral():
        cinv = ops.covariance_inverse(t).matrix
        herm = 0.5 * (cinv + cinv.conj().T)
        lam_min = float(np.linalg.eigvalsh(herm)[0])
        dinv = np.linalg.inv(ops.sqrt_covariance(t).matrix)
        return lam_min, float(np.linalg.norm(dinv, 2))

    lam_min, dinv_norm = ops._get(("wall-spectral", float(t)), _spectral)
    nsq = float(np.linalg.norm(zeta.flat) ** 2)
    quad_lower = lam_min * nsq / dinv_norm**2
    rho_vec = _rho_field(theta, params, ops, inter, rho)
    Dt = ops.sqrt_covariance(t).matrix
    linear = float(t * np.linalg.norm(np.linalg.solve(Dt.T,
                                                      np.conj(rho_vec)))
                   * np.linalg.norm(zeta.flat)) * vol0
    return {
        "re_pairing": re_pairing,
        "norm_sq": nsq,
        "quad_lower": quad_lower,
        "linear_correction": linear,
        "constant": lam_min / dinv_norm**2,
        "passed": re_pairing >= quad_lower - linear - 1e-9 * (1 + nsq),
    }
