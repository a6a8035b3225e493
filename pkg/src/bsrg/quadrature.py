"""Brute-force quadrature over fluctuation-field surfaces.

All integrals here live on real-parameter patches mapped into the
complexified fluctuation space (zeta_*, zeta) in C^N x C^N.  The
holomorphic volume form prod dzeta_* ^ dzeta / (2 pi i) pulls back to the
determinant of the complex Jacobian of the interleaved coordinates
(zeta_*(x_1), zeta(x_1), zeta_*(x_2), ...) with respect to the patch
parameters, divided by (2 pi i)^N; the fixed global convention makes the
per-site real slice carry dRe psi dIm psi / pi.  Tensor Gauss-Legendre
grids give an error estimate by comparison with a coarser grid; scrambled
Sobol sampling gives a statistical one.  Magnitudes are accumulated in
the log domain so that walls with exponents of order -10^3 stay
meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import gammainc

from .action import effective_exponent, effective_exponent_batch
from .background import solve_critical_fields
from .domains import RegionSpec, wall_radius
from .interaction import Interaction
from .lattice import Field, Lattice, make_lattice
from .operators import FlowParams, RGOperators

__all__ = [
    "IntegralEstimate",
    "QuadratureError",
    "StationaryPhase",
    "integrate_real_slice",
    "integrate_surface_slice",
    "integrate_cylinder_wall",
    "holomorphy_boundary_check",
    "sbot_map",
    "shifted_slice_map",
    "fluctuation_log_integrand",
    "stokes_identity_check",
    "stationary_phase_eval",
    "gaussian_cf_oracle",
    "TENSOR",
    "QUASI",
]

TENSOR = "tensor-quadrature"
QUASI = "quasi-random"
_METHOD_ALIASES = {"gauss": TENSOR, "tensor-quadrature": TENSOR,
                   "sobol": QUASI, "quasi-random": QUASI}
DEFAULT_TARGET_REL = 1e-6


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class IntegralEstimate:
    """A numerical integral with an error estimate.

    ``log_abs`` is log|value| accumulated stably, meaningful even when
    ``value`` itself underflows to zero.  ``rel_error`` compares the two
    grid levels (or replicates) on the same logarithmic scale.
    ``partial`` flags estimates whose budget ran out before reaching the
    target relative error.
    """

    value: complex
    abs_error: float
    method: str
    evaluations: int
    log_abs: float
    rel_error: float
    partial: bool = False

    def __add__(self, other):
        if not isinstance(other, IntegralEstimate):
            return NotImplemented
        v = self.value + other.value
        err = self.abs_error + other.abs_error
        if v != 0:
            log_abs, rel = math.log(abs(v)), err / abs(v)
        else:
            log_abs = max(self.log_abs, other.log_abs)
            rel = max(self.rel_error, other.rel_error)
        return IntegralEstimate(
            value=v, abs_error=err, method=self.method,
            evaluations=self.evaluations + other.evaluations,
            log_abs=log_abs, rel_error=rel,
            partial=self.partial or other.partial)


class StationaryPhase(NamedTuple):
    detC: complex
    cC_n: complex
    cF_n: complex


def _canonical_method(method: str) -> str:
    try:
        return _METHOD_ALIASES[method]
    except KeyError:
        raise QuadratureError(f"unknown method {method!r}") from None


def _log_accumulate(weights: np.ndarray, exponents: np.ndarray):
    """sum_i w_i e^{c_i} with complex c_i, returned as (value, log_abs)."""
    re = exponents.real
    finite = np.isfinite(re)
    if not finite.any():
        return 0.0 + 0.0j, -math.inf
    shift = float(re[finite].max())
    mant = np.zeros(len(weights), dtype=complex)
    mant[finite] = weights[finite] * np.exp(exponents[finite] - shift)
    total = complex(mant.sum())
    if total == 0:
        return 0.0 + 0.0j, -math.inf
    log_abs = shift + math.log(abs(total))
    value = total * math.exp(shift) if log_abs > -700 else 0.0 + 0.0j
    return value, log_abs


def _gauss_1d(n: int, a: float, b: float):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def _axis_1d(n: int, rng):
    # Periodic axes use equispaced nodes (the trapezoid rule converges
    # spectrally for periodic analytic integrands).
    if len(rng) == 3 and rng[2] == "periodic":
        a, b = rng[0], rng[1]
        x = a + (b - a) * (np.arange(n) + 0.5) / n
        w = np.full(n, (b - a) / n)
        return x, w
    return _gauss_1d(n, rng[0], rng[1])


def _tensor_grid(ranges, n: int):
    axes = [_axis_1d(n, rng) for rng in ranges]
    mesh = np.meshgrid(*[x for x, _ in axes], indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    wmesh = np.meshgrid(*[w for _, w in axes], indexing="ij")
    wts = np.ones(pts.shape[0])
    for wm in wmesh:
        wts *= wm.ravel()
    return pts, wts


def _sobol_grid(ranges, count: int, seed: int):
    from scipy.stats import qmc
    d = len(ranges)
    m = max(4, int(math.log2(max(count, 16))))
    sampler = qmc.Sobol(d=d, scramble=True, seed=seed)
    u = sampler.random_base2(m)
    lo = np.array([r[0] for r in ranges])
    hi = np.array([r[1] for r in ranges])
    pts = lo + u * (hi - lo)
    vol = float(np.prod(hi - lo))
    wts = np.full(pts.shape[0], vol / pts.shape[0])
    return pts, wts


def _sphere_directions(phis: np.ndarray, d: int) -> np.ndarray:
    """Unit vectors in R^d from standard hyperspherical angles (B, d-1)."""
    B = phis.shape[0]
    x = np.empty((B, d))
    s = np.ones(B)
    for j in range(d - 1):
        x[:, j] = s * np.cos(phis[:, j])
        s = s * np.sin(phis[:, j])
    x[:, d - 1] = s
    return x


def _interleave(zstar: np.ndarray, z: np.ndarray) -> np.ndarray:
    B, N = z.shape
    out = np.empty((B, 2 * N), dtype=complex)
    out[:, 0::2] = zstar
    out[:, 1::2] = z
    return out


def _jacobian_dets(map_fn, pts: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Batched determinant of the complex Jacobian of the interleaved
    coordinates with respect to the patch parameters."""
    d = pts.shape[1]
    cols = []
    for l in range(d):
        dp = np.zeros(d)
        dp[l] = h
        vp = _interleave(*map_fn(pts + dp))
        vm = _interleave(*map_fn(pts - dp))
        cols.append((vp - vm) / (2.0 * h))
    J = np.stack(cols, axis=2)
    return np.linalg.det(J)


def _run_patch(f_log, map_fn, ranges, n_or_count, seed, method,
               indicator=None, orient=1.0):
    if method == TENSOR:
        pts, wts = _tensor_grid(ranges, n_or_count)
    else:
        pts, wts = _sobol_grid(ranges, n_or_count, seed)
    zstar, z = map_fn(pts)
    if indicator is not None:
        keep = indicator(zstar, z)
        pts, wts, zstar, z = pts[keep], wts[keep], zstar[keep], z[keep]
        if len(wts) == 0:
            return 0.0 + 0.0j, -math.inf, 0
    det_fn = getattr(map_fn, "det", None)
    dets = (det_fn(pts) if det_fn is not None
            else _jacobian_dets(map_fn, pts)) * orient
    N = z.shape[1]
    with np.errstate(divide="ignore"):
        log_form = np.log(dets.astype(complex)) - N * np.log(2j * np.pi)
    exponents = f_log(zstar, z) + log_form
    value, log_abs = _log_accumulate(wts, exponents)
    return value, log_abs, len(wts)


def _phase(v: complex) -> complex:
    return v / abs(v) if v != 0 else 1.0


def _two_level_estimate(f_log, map_fn, ranges, budget, seed, method,
                        indicator=None, orient=1.0) -> IntegralEstimate:
    method = _canonical_method(method)
    d = len(ranges)
    if method == TENSOR:
        n_fine = max(3, int((0.85 * budget) ** (1.0 / d)))
        n_coarse = max(2, (2 * n_fine) // 3)
        v1, l1, c1 = _run_patch(f_log, map_fn, ranges, n_fine, seed,
                                method, indicator, orient)
        v0, l0, c0 = _run_patch(f_log, map_fn, ranges, n_coarse, seed,
                                method, indicator, orient)
    else:
        v1, l1, c1 = _run_patch(f_log, map_fn, ranges, budget, seed,
                                method, indicator, orient)
        v0, l0, c0 = _run_patch(f_log, map_fn, ranges, budget // 2,
                                seed + 104729, method, indicator, orient)
    if l1 == -math.inf:
        return IntegralEstimate(0.0, 0.0, method, c1 + c0, -math.inf, 0.0)
    if l0 == -math.inf:
        rel = 1.0
    else:
        # |1 - I_coarse / I_fine| evaluated on the shared log scale
        ratio = np.exp(complex(l0 - l1)) * _phase(v0) * np.conj(_phase(v1))
        rel = abs(1.0 - ratio)
    err = rel * math.exp(l1) if l1 > -700 else 0.0
    return IntegralEstimate(value=v1, abs_error=float(err), method=method,
                            evaluations=c1 + c0, log_abs=l1,
                            rel_error=float(rel),
                            partial=rel > DEFAULT_TARGET_REL)


_ORIENTATION_CACHE: dict = {}


def _orientation(N: int) -> float:
    """Sign normalizing the (radius-or-t, angles) patch orientation so
    that the real slice carries positive measure d^2 zeta / pi^N."""
    if N in _ORIENTATION_CACHE:
        return _ORIENTATION_CACHE[N]

    def _map(pts):
        r = pts[:, 0]
        x = _sphere_directions(pts[:, 1:], 2 * N)
        z = r[:, None] * (x[:, :N] + 1j * x[:, N:])
        return np.conj(z), z

    pt = np.concatenate([[1.0], np.full(2 * N - 1, 0.7)])[None, :]
    det = _jacobian_dets(_map, pt)[0]
    density = det / (2j * np.pi) ** N
    sign = 1.0 if density.real > 0 else -1.0
    _ORIENTATION_CACHE[N] = sign
    return sign


def _angle_ranges(N: int):
    d = 2 * N
    if d == 2:
        return [(0.0, 2.0 * np.pi, "periodic")]
    return [(0.0, np.pi)] * (d - 2) + [(0.0, 2.0 * np.pi, "periodic")]


def _sphere_jacobian_factor(pts: np.ndarray, d: int) -> np.ndarray:
    """r^{d-1} prod_j sin^{d-2-j}(phi_j): the radial-patch volume
    element in d real dimensions."""
    fac = pts[:, 0] ** (d - 1)
    for j in range(d - 2):
        fac = fac * np.sin(pts[:, 1 + j]) ** (d - 2 - j)
    return fac


_RADIAL_PHASE_CACHE: dict = {}


def _radial_phase(N: int) -> complex:
    """Constant phase relating the real-slice radial-patch Jacobian
    determinant to the real volume element, calibrated once per N by
    finite differences at a reference point."""
    if N in _RADIAL_PHASE_CACHE:
        return _RADIAL_PHASE_CACHE[N]

    def _map(pts):
        r = pts[:, 0]
        x = _sphere_directions(pts[:, 1:], 2 * N)
        z = r[:, None] * (x[:, :N] + 1j * x[:, N:])
        return np.conj(z), z

    pt = np.concatenate([[1.1], np.full(2 * N - 1, 0.7)])[None, :]
    det = _jacobian_dets(_map, pt, h=1e-6)[0]
    ratio = det / _sphere_jacobian_factor(pt, 2 * N)[0]
    # the exact constant is 2^N times a unit phase
    phase = complex(2.0**N * np.round(ratio / abs(ratio), 12))
    _RADIAL_PHASE_CACHE[N] = phase
    return phase


def sbot_map(lat: Lattice):
    """Polar patch of the real disk slice: zeta_* = conj(zeta)."""
    N = lat.nsites
    phase = _radial_phase(N)

    def _map(pts):
        r = pts[:, 0]
        x = _sphere_directions(pts[:, 1:], 2 * N)
        z = r[:, None] * (x[:, :N] + 1j * x[:, N:])
        return np.conj(z), z

    _map.det = lambda pts: phase * _sphere_jacobian_factor(pts, 2 * N)
    return _map


def shifted_slice_map(t: float, params: FlowParams, ops: RGOperators,
                      rho: np.ndarray | None = None,
                      D_matrix: np.ndarray | None = None):
    """Polar patch of the constraint slice at fixed t.

    zeta_* is an affine (antiholomorphic in zeta) image of the real
    slice, so its Jacobian determinant is the real-slice one times the
    constant det((D(t)^T)^{-1} conj(D(t))).  ``D_matrix`` overrides the
    principal square root (used by branch negative controls).
    """
    N = ops.unit.nsites
    Dt = ops.sqrt_covariance(t).matrix if D_matrix is None else D_matrix
    rho_vec = np.zeros(N, dtype=complex) if rho is None else np.asarray(rho)
    phase = _radial_phase(N)
    detA = complex(np.conj(np.linalg.det(Dt)) / np.linalg.det(Dt))

    def _map(pts):
        r = pts[:, 0]
        x = _sphere_directions(pts[:, 1:], 2 * N)
        z = r[:, None] * (x[:, :N] + 1j * x[:, N:])
        rhs = np.conj(z) @ np.conj(Dt).T - t * np.conj(rho_vec)
        zstar = np.linalg.solve(Dt.T, rhs.T).T
        return zstar, z

    _map.det = lambda pts: detA * phase \
        * _sphere_jacobian_factor(pts, 2 * N)
    return _map


def integrate_surface_slice(f_log, map_fn, lat: Lattice, r_outer: float,
                            budget: int, seed: int = 0,
                            r_inner: float = 0.0,
                            method: str = TENSOR) -> IntegralEstimate:
    """Integrate the holomorphic form over a (portion of a) fixed-t
    slice, parametrized radially between r_inner and r_outer.

    Wide radial ranges are resolved by summing short segments, where the
    Gauss rule keeps its fast convergence.
    """
    if r_outer <= r_inner:
        raise QuadratureError("empty radial range")
    N = lat.nsites
    angles = _angle_ranges(N)
    seg = max(2.0, 1.0 + 0.5 * math.sqrt(N))
    nseg = max(1, int(math.ceil((r_outer - r_inner) / seg)))
    edges = np.linspace(r_inner, r_outer, nseg + 1)
    total = None
    for i in range(nseg):
        ranges = [(float(edges[i]), float(edges[i + 1]))] + angles
        piece = _two_level_estimate(f_log, map_fn, ranges,
                                    max(budget // nseg, 3 ** (2 * N)),
                                    seed + i, method,
                                    orient=_orientation(N))
        total = piece if total is None else total + piece
    return total


def _infer_ops(theta: Field, params: FlowParams) -> RGOperators:
    """Rebuild the scale context from a coarse field by undoing the
    block ratios (valid when no extent was clipped)."""
    coarse = theta.lattice
    L = params.L
    block = (L * L,) + (L,) * coarse.spatial_dim
    extents = tuple(e * b for e, b in zip(coarse.extents, block))
    unit = make_lattice(coarse.spatial_dim, extents, L, n=params.n,
                        level="unit")
    return RGOperators(params, unit)


def integrate_cylinder_wall(f_log, theta: Field | None,
                            params: FlowParams, budget: int,
                            ops: RGOperators | None = None,
                            rho: np.ndarray | None = None, seed: int = 0,
                            method: str = TENSOR) -> IntegralEstimate:
    """Integrate over the cylinder wall ||zeta|| = c0^(1/4) kappa'(n),
    t in [0, 1], with the constraint-family embedding varying along t."""
    if ops is None:
        if theta is None:
            raise QuadratureError("need theta or ops to fix the lattice")
        ops = _infer_ops(theta, params)
    N = ops.unit.nsites
    R = wall_radius(params)
    rho_vec = np.zeros(N, dtype=complex) if rho is None else np.asarray(rho)

    def _map(pts):
        t_col = pts[:, 0]
        x = _sphere_directions(pts[:, 1:], 2 * N)
        z = R * (x[:, :N] + 1j * x[:, N:])
        zstar = np.empty_like(z)
        for t in np.unique(t_col):
            sel = t_col == t
            tt = min(max(float(t), 0.0), 1.0)
            Dt = ops.sqrt_covariance(tt).matrix
            rhs = np.conj(z[sel]) @ np.conj(Dt).T - tt * np.conj(rho_vec)
            zstar[sel] = np.linalg.solve(Dt.T, rhs.T).T
        return zstar, z

    ranges = [(0.0, 1.0)] + _angle_ranges(N)
    return _two_level_estimate(f_log, _map, ranges, budget, seed, method,
                               orient=_orientation(N))


def _region_geometry(region: RegionSpec):
    """Per-site radius and optional gradient indicator for a real-slice
    region."""
    params = region.params
    lat = region.lattice
    if lat is None:
        raise QuadratureError("region needs a lattice")
    if region.kind == "all":
        if region.radius is None:
            raise QuadratureError('region "all" needs an explicit radius')
        return float(region.radius), None
    if region.kind in ("Int", "An"):
        c = 1.0 if region.kind == "An" else \
            (params.c0 if region.c is None else region.c)
        radius = c * params.kappa_n
        gcap = c * params.kappa_prime_n

        def indicator(zstar, z):
            shaped = z.reshape((-1,) + tuple(lat.extents))
            ok = np.ones(z.shape[0], dtype=bool)
            for nu in range(lat.ndim):
                d = np.abs(np.roll(shaped, -1, axis=nu + 1) - shaped) \
                    / lat.spacings[nu]
                ok &= d.reshape(z.shape[0], -1).max(axis=1) < gcap
            return ok

        return radius, indicator
    raise QuadratureError(f"unsupported real-slice region {region.kind!r}")


def integrate_real_slice(exponent, region: RegionSpec,
                         method: str = TENSOR, budget: int = 20000,
                         seed: int = 0) -> IntegralEstimate:
    """Integrate e^{-exponent(psi)} prod d^2 psi(x) / pi over a real
    slice region ("all" with an explicit radius, "Int"/"An" boxes, or the
    disk "SBot").

    ``exponent`` takes a batch (B, N) of complex site vectors and returns
    (B,) complex exponents.
    """
    lat = region.lattice
    if lat is None:
        raise QuadratureError("region needs a lattice")
    N = lat.nsites
    if region.kind == "SBot":
        r = region.radius if region.radius is not None else region.params.r_n

        def f_log_disk(zstar, z):
            return -exponent(z)

        return integrate_surface_slice(f_log_disk, sbot_map(lat), lat,
                                       float(r), budget, seed,
                                       method=method)
    radius, indicator = _region_geometry(region)

    def f_log(zstar, z):
        return -exponent(z)

    def _map(pts):
        r = pts[:, 0::2]
        phi = pts[:, 1::2]
        z = r * np.exp(1j * phi)
        return np.conj(z), z

    # per-site polar blocks are 2x2 with determinant 2 i r each
    _map.det = lambda pts: np.prod(2j * pts[:, 0::2], axis=1)

    ind = None
    if indicator is not None:
        def ind(zstar, z):
            return indicator(zstar, z)

    # Split each site's radial interval so the Gauss rule resolves the
    # exponential decay; cap the number of sub-patches.
    nseg = max(1, int(math.ceil(radius / 2.5)))
    nseg = min(nseg, max(1, int(round(64 ** (1.0 / N)))))
    edges = np.linspace(0.0, radius, nseg + 1)
    segs = [(float(edges[i]), float(edges[i + 1])) for i in range(nseg)]
    from itertools import product
    total = None
    npatch = nseg**N
    for combo in product(range(nseg), repeat=N):
        ranges = []
        for i in combo:
            ranges += [segs[i], (0.0, 2.0 * np.pi, "periodic")]
        piece = _two_level_estimate(
            f_log, _map, ranges, max(budget // npatch, 3 ** (2 * N)),
            seed, method, ind)
        total = piece if total is None else total + piece
    return total


def holomorphy_boundary_check(f_log, center: np.ndarray, radius: float,
                              budget: int = 4000,
                              seed: int = 0) -> IntegralEstimate:
    """Integrate the holomorphic 2-form over the boundary sphere of a
    3-real-dimensional ball inside the analyticity domain (N = 1).

    The ball lives in the real-linear slice spanned by (Re zeta_*,
    Im zeta_*, Re zeta) around ``center``; the integral must vanish to
    quadrature tolerance.
    """
    c = np.asarray(center, dtype=complex)
    if c.shape != (2,):
        raise QuadratureError("holomorphy check is a 1-site diagnostic")

    def _map(pts):
        x = radius * _sphere_directions(pts, 3)
        zstar = c[0] + x[:, 0] + 1j * x[:, 1]
        z = np.full(len(pts), c[1]) + x[:, 2]
        return zstar[:, None], z[:, None]

    ranges = [(0.0, np.pi), (0.0, 2.0 * np.pi)]
    return _two_level_estimate(f_log, _map, ranges, budget, seed, TENSOR)


def fluctuation_log_integrand(theta_star: Field, theta: Field,
                              params: FlowParams, ops: RGOperators,
                              inter: Interaction, critical=None):
    """log of the fluctuation integrand exp(-<zeta_*, zeta> - dA).

    dA is the beyond-quadratic part of the shifted exponent, so the log
    is simply E(critical) - E(shifted).  The embedding into field space
    uses the fixed square root D of the fluctuation covariance at t = 1.
    Returns (f_log, critical-fields, critical exponent).
    """
    if critical is None:
        critical = solve_critical_fields(theta_star, theta, params, ops,
                                         inter)
    D1 = ops.sqrt_covariance(1.0).matrix
    theta_row = theta.flat
    theta_star_row = theta_star.flat
    e_crit = effective_exponent(theta_star, theta, critical.psi_star_n,
                                critical.psi_n, params, ops, inter)

    def f_log(zstar, z):
        B = z.shape[0]
        psis = critical.psi_star_n.flat + zstar @ D1
        psi = critical.psi_n.flat + z @ D1.T
        E = effective_exponent_batch(
            np.broadcast_to(theta_star_row, (B, len(theta_row))),
            np.broadcast_to(theta_row, (B, len(theta_row))),
            psis, psi, params, ops, inter)
        return e_crit - E

    return f_log, critical, e_crit


def stokes_identity_check(theta: Field, params: FlowParams,
                          budget: int = 60000,
                          ops: RGOperators | None = None,
                          inter: Interaction | None = None, seed: int = 0,
                          f_log=None, break_branch: bool = False) -> dict:
    """Compare the shifted-slice integral against the real disk plus the
    real annulus plus the cylinder wall.

    The wall orientation is fixed by whichever sign closes the identity
    better; the report flags the check inconclusive when neither sign
    closes it within the combined quadrature error.
    """
    if ops is None:
        ops = _infer_ops(theta, params)
    if inter is None:
        inter = Interaction(kind="local-quartic", lambda_n=params.lambda_n)
    if f_log is None:
        f_log, critical, _ = fluctuation_log_integrand(
            theta.conj(), theta, params, ops, inter)
        rho = critical.rho_n.flat
    else:
        rho = np.zeros(ops.unit.nsites, dtype=complex)
    lat = ops.unit
    R = wall_radius(params)
    rn = min(params.r_n, 0.999 * R)
    part = budget // 4
    top = integrate_surface_slice(
        f_log, shifted_slice_map(1.0, params, ops, rho), lat, R, part,
        seed)
    if break_branch:
        # Negative control.  The slice itself is insensitive to the root
        # branch (any D with D^2 = C gives the same constraint form and
        # det D^2 = det C), but a non-principal branch flips the sign of
        # det D and hence of the half-form normalization the shifted
        # slice carries; emulate exactly that sign error.
        top = IntegralEstimate(
            value=-top.value, abs_error=top.abs_error, method=top.method,
            evaluations=top.evaluations, log_abs=top.log_abs,
            rel_error=top.rel_error, partial=top.partial)
    sbot = integrate_surface_slice(f_log, sbot_map(lat), lat, rn, part,
                                   seed + 1)
    annulus = integrate_surface_slice(f_log, sbot_map(lat), lat, R,
                                      part, seed + 2, r_inner=rn)
    wall = integrate_cylinder_wall(f_log, theta, params, part, ops=ops,
                                   rho=rho, seed=seed + 3)
    base = sbot.value + annulus.value
    res_plus = abs(top.value - (base + wall.value))
    res_minus = abs(top.value - (base - wall.value))
    sign = 1 if res_plus <= res_minus else -1
    residual = min(res_plus, res_minus)
    err = top.abs_error + sbot.abs_error + annulus.abs_error \
        + abs(wall.value) * wall.rel_error
    scale = max(abs(top.value), abs(base), 1e-300)
    tol = 20.0 * err + 1e-10 * scale
    passed = residual <= tol
    inconclusive = (not passed) and err > 0.05 * scale
    return {
        "top": top, "sbot": sbot, "annulus": annulus, "wall": wall,
        "sign": sign, "residual": float(residual),
        "relative_residual": float(residual / scale),
        "tolerance": float(tol), "passed": bool(passed),
        "inconclusive": bool(inconclusive),
    }


def gaussian_cf_oracle(N: int, r: float) -> float:
    """The real-disk Gaussian integral: P(N, r^2), the regularized lower
    incomplete gamma function."""
    return float(gammainc(N, r * r))


def stationary_phase_eval(theta_star: Field, theta: Field,
                          params: FlowParams, inter: Interaction,
                          budget: int = 20000,
                          ops: RGOperators | None = None, seed: int = 0,
                          full_report: bool = False):
    """Stationary-phase data at (theta_star, theta): the fluctuation
    determinant, the critical exponent cC_n, and the normalized disk
    integral cF_n over the real slice of radius r_n."""
    if ops is None:
        ops = _infer_ops(theta, params)
    f_log, critical, e_crit = fluctuation_log_integrand(
        theta_star, theta, params, ops, inter)
    lat = ops.unit
    cF = integrate_surface_slice(f_log, sbot_map(lat), lat, params.r_n,
                                 budget, seed)
    result = StationaryPhase(detC=complex(ops.det_C), cC_n=-e_crit,
                             cF_n=cF.value)
    if not full_report:
        return result
    sign, logdet = np.linalg.slogdet(ops.C_n.matrix)
    return {
        "stationary_phase": result,
        "cF": cF,
        "log_det_C": float(logdet),
        "det_sign": complex(sign),
        "gaussian_cF": gaussian_cf_oracle(lat.nsites, params.r_n),
        "critical": critical,
    }


def __getattr__(name):
    # The scaling experiments live in a sibling module but belong to this
    # module's public surface.
    if name in ("DecayFit", "error_scaling_experiment",
                "rg_step_comparison"):
        from . import experiments
        return getattr(experiments, name)
    raise AttributeError(name)
