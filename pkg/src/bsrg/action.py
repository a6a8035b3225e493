"""The dominant action A_n, its bounds, and the theta-coupled exponent.

A_n couples unit-lattice fields (psi_*, psi) to fine-lattice background
fields (phi_*, phi):

    A_n = <psi_* - Q_n phi_*, fQ_n (psi - Q_n phi)>_0
        + <phi_*, D_n phi>_n - mu_n <phi_*, phi>_n + V_n(phi_*, phi)

Its phi-stationarity condition is exactly the background-field system, so
at the background solution A_n collapses to
<psi_*, fQ_n (psi - Q_n phi)>_0 - V_n.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .background import solve_background_batch, solve_critical_fields
from .interaction import (  # noqa: F401  (re-exported interface)
    Interaction,
    InteractionError,
    coupling_rn,
    eval_V,
    eval_V_batch,
    eval_V_prime,
    eval_V_prime_batch,
)
from .lattice import Field, forward_difference, momentum_grid, norms, \
    plane_wave
from .operators import FlowParams, OperatorError, RGOperators, symbol

__all__ = [
    "BoundsReport",
    "Interaction",
    "coupling_rn",
    "eval_V",
    "eval_V_prime",
    "eval_An",
    "eval_An_batch",
    "eval_An_at_background",
    "eval_An_at_background_batch",
    "symbol_constants",
    "proposition1_check",
    "proposition1_scan",
    "effective_exponent",
    "effective_exponent_batch",
    "fluctuation_expansion",
]


@dataclass(frozen=True)
class BoundsReport:
    re_An: float
    lower: float
    upper: float
    delta: float
    gamma_fit: float
    gamma_tilde_fit: float

    @property
    def passed(self) -> bool:
        return self.lower <= self.re_An <= self.upper

    @property
    def margin(self) -> float:
        return min(self.re_An - self.lower, self.upper - self.re_An)


def eval_An_batch(psi_star, psi, phi_star, phi, params: FlowParams,
                  ops: RGOperators, inter: Interaction) -> np.ndarray:
    """A_n for batches of row-vector fields; returns shape (B,)."""
    a_n, mu = params.a_n, params.mu_n
    Qn = ops.Qn.matrix
    vol0 = ops.unit.cell_volume
    voln = ops.fine.cell_volume
    r_star = psi_star - phi_star @ Qn.T
    r = psi - phi @ Qn.T
    term_block = a_n * vol0 * (r_star * r).sum(axis=1)
    Dphi = phi @ ops.Dn.matrix.T
    term_kin = voln * (phi_star * Dphi).sum(axis=1)
    term_mu = -mu * voln * (phi_star * phi).sum(axis=1)
    term_V = eval_V_batch(phi_star, phi, inter, ops.fine)
    return term_block + term_kin + term_mu + term_V


def eval_An(psi_star: Field, psi: Field, phi_star: Field, phi: Field,
            params: FlowParams, ops: RGOperators,
            inter: Interaction) -> complex:
    return complex(eval_An_batch(
        psi_star.flat[None, :], psi.flat[None, :],
        phi_star.flat[None, :], phi.flat[None, :], params, ops, inter)[0])


def eval_An_at_background_batch(psi_star, psi, params: FlowParams,
                                ops: RGOperators, inter: Interaction,
                                method: str = "newton") -> np.ndarray:
    phi_star, phi, _, _, _ = solve_background_batch(
        psi_star, psi, params, ops, inter, method=method)
    return eval_An_batch(psi_star, psi, phi_star, phi, params, ops, inter)


def eval_An_at_background(psi_star: Field, psi: Field, params: FlowParams,
                          ops: RGOperators, inter: Interaction) -> complex:
    return complex(eval_An_at_background_batch(
        psi_star.flat[None, :], psi.flat[None, :], params, ops, inter)[0])


def symbol_constants(params: FlowParams, ops: RGOperators) -> dict:
    """Brillouin-zone scan of the coarse kinetic symbol.

    Returns the extreme ratios of Re symbol against both the lattice
    gradient form g(k) = sum_nu |e^{i k_nu} - 1|^2 and the continuum form
    k0^2 + |k|^2, plus the raw scan for report output.

    The sandwich constants gamma_grad / gamma_tilde_grad are fitted
    mode-by-mode from the mu-dependent Gaussian action symbol shifted by
    +mu_n, so that each side of the two-sided bound retains a slack of
    delta * mu_n * ||psi||_2^2 for the interaction corrections to eat.
    """
    lat = ops.unit
    kgrid = momentum_grid(lat).reshape(-1, lat.ndim)
    sym = np.array([symbol(ops.Delta, k) for k in kgrid])
    g = (np.abs(np.exp(1j * kgrid) - 1.0) ** 2).sum(axis=1)
    ksq = (kgrid**2).sum(axis=1)
    nonzero = ksq > 1e-12
    re = sym.real
    # Gaussian action symbol with the chemical potential: Re A_n on the
    # plane-wave basis at zero coupling, normalized per unit l2 norm
    waves = np.array([plane_wave(lat, k).flat for k in kgrid])
    free = Interaction(kind="local-quartic", lambda_n=0.0)
    re_mu = eval_An_at_background_batch(
        np.conj(waves), waves, params, ops, free).real \
        / (lat.nsites * lat.cell_volume)
    shifted = re_mu + params.mu_n
    ratios_g = shifted[nonzero] / g[nonzero]
    ratios_k = re[nonzero] / ksq[nonzero]
    return {
        "momenta": kgrid,
        "symbol": sym,
        "gamma_grad": float(ratios_g.min()),
        "gamma_tilde_grad": float(ratios_g.max()),
        "gamma": float(ratios_k.min() / 8.0),
        "gamma_tilde": float(2.0 * ratios_k.max()),
        "min_re_nonzero": float(re[nonzero].min()),
        "re_at_zero": float(re[~nonzero][0]) if (~nonzero).any() else 0.0,
    }


def _grad_l2_squared(psi: Field) -> float:
    vol = psi.lattice.cell_volume
    total = 0.0
    for nu in range(psi.lattice.ndim):
        d = forward_difference(psi, nu).flat
        total += vol * float(np.sum(np.abs(d) ** 2))
    return total


def _sandwich(params: FlowParams, inter: Interaction, delta: float,
              grad_sq, l2_sq, l4_4, gamma, gamma_tilde):
    mu = params.mu_n
    rn = coupling_rn(inter)
    lower = gamma * grad_sq - (1 + delta) * mu * l2_sq \
        + 0.5 * (1 - delta) * rn * l4_4
    upper = gamma_tilde * grad_sq - (1 - delta) * mu * l2_sq \
        + 0.5 * (1 + delta) * rn * l4_4
    return lower, upper


def proposition1_check(psi: Field, params: FlowParams, inter: Interaction,
                       delta: float = 0.1, ops: RGOperators | None = None,
                       constants: dict | None = None) -> BoundsReport:
    """Check the two-sided bound on Re A_n at the background fields.

    gamma and gamma_tilde come from the symbol scan (pass ``constants`` to
    reuse a frozen fit across many samples).
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    ops = RGOperators(params, psi.lattice) if ops is None else ops
    rep = norms(psi)
    if rep.sup >= params.kappa_n or rep.grad_sup >= params.kappa_prime_n:
        raise ValueError(
            f"field outside the analyticity domain: sup {rep.sup:.3e}, "
            f"grad sup {rep.grad_sup:.3e}"
        )
    constants = symbol_constants(params, ops) if constants is None else constants
    re_An = float(eval_An_at_background(psi.conj(), psi, params, ops,
                                        inter).real)
    lower, upper = _sandwich(
        params, inter, delta, _grad_l2_squared(psi), rep.l2**2, rep.l4**4,
        constants["gamma_grad"], constants["gamma_tilde_grad"])
    return BoundsReport(re_An=re_An, lower=lower, upper=upper, delta=delta,
                        gamma_fit=constants["gamma_grad"],
                        gamma_tilde_fit=constants["gamma_tilde_grad"])


def proposition1_scan(psis: np.ndarray, params: FlowParams,
                      inter: Interaction, delta: float,
                      ops: RGOperators, constants: dict) -> dict:
    """Vectorized sandwich check over a batch of unit-lattice samples.

    Returns arrays (re_An, lower, upper) plus the violation count.
    """
    lat = ops.unit
    vol = lat.cell_volume
    re_An = eval_An_at_background_batch(
        np.conj(psis), psis, params, ops, inter, method="picard").real
    shaped = psis.reshape((-1,) + tuple(lat.extents))
    grad_sq = np.zeros(psis.shape[0])
    for nu in range(lat.ndim):
        d = (np.roll(shaped, -1, axis=nu + 1) - shaped) / lat.spacings[nu]
        grad_sq += vol * (np.abs(d) ** 2).reshape(psis.shape[0], -1).sum(axis=1)
    l2_sq = vol * (np.abs(psis) ** 2).sum(axis=1)
    l4_4 = vol * (np.abs(psis) ** 4).sum(axis=1)
    lower, upper = _sandwich(params, inter, delta, grad_sq, l2_sq, l4_4,
                             constants["gamma_grad"],
                             constants["gamma_tilde_grad"])
    violations = int(((re_An < lower) | (re_An > upper)).sum())
    return {"re_An": re_An, "lower": lower, "upper": upper,
            "violations": violations,
            "min_margin": float(np.minimum(re_An - lower,
                                           upper - re_An).min())}


def effective_exponent_batch(theta_star, theta, psi_star, psi,
                             params: FlowParams, ops: RGOperators,
                             inter: Interaction, perturbation=None,
                             method: str = "newton") -> np.ndarray:
    """a L^-2 <theta_* - Q psi_*, theta - Q psi>_-1 + A_n at background.

    ``perturbation``, if given, is a callable (psi_star, psi) -> batch of
    complex values added to the exponent (an opaque analytic correction).
    """
    aL2 = params.a / params.L**2
    Q = ops.Q.matrix
    volc = ops.coarse.cell_volume
    ds = theta_star - psi_star @ Q.T
    d = theta - psi @ Q.T
    coarse_term = aL2 * volc * (ds * d).sum(axis=1)
    An = eval_An_at_background_batch(psi_star, psi, params, ops, inter,
                                     method=method)
    out = coarse_term + An
    if perturbation is not None:
        out = out + perturbation(psi_star, psi)
    return out


def effective_exponent(theta_star: Field, theta: Field, psi_star: Field,
                       psi: Field, params: FlowParams, ops: RGOperators,
                       inter: Interaction, perturbation=None) -> complex:
    return complex(effective_exponent_batch(
        theta_star.flat[None, :], theta.flat[None, :],
        psi_star.flat[None, :], psi.flat[None, :], params, ops, inter,
        perturbation)[0])


def fluctuation_expansion(theta_star: Field, theta: Field,
                          dpsi_star: Field, dpsi: Field,
                          params: FlowParams, ops: RGOperators,
                          inter: Interaction, critical=None):
    """Split the exponent near the critical point into Gaussian + rest.

    Returns (quadratic, remainder) where quadratic is the fluctuation
    Gaussian form <dpsi_*, C^(n)^-1 dpsi>_0 and remainder is everything
    beyond it and the critical value.
    """
    if critical is None:
        critical = solve_critical_fields(theta_star, theta, params, ops,
                                         inter)
    shifted = critical.psi_n + dpsi
    rep = norms(shifted)
    if rep.sup >= params.kappa_n or rep.grad_sup >= params.kappa_prime_n:
        from .background import DomainEscapeError
        raise DomainEscapeError(
            f"shifted field outside the analyticity domain "
            f"(sup {rep.sup:.3e}, grad {rep.grad_sup:.3e})"
        )
    e_crit = effective_exponent(theta_star, theta, critical.psi_star_n,
                                critical.psi_n, params, ops, inter)
    e_shift = effective_exponent(theta_star, theta,
                                 critical.psi_star_n + dpsi_star,
                                 shifted, params, ops, inter)
    cinv = ops.covariance_inverse(1.0).matrix
    vol0 = ops.unit.cell_volume
    quadratic = complex(vol0 * dpsi_star.flat @ (cinv @ dpsi.flat))
    remainder = e_shift - e_crit - quadratic
    return quadratic, remainder
