"""Background fields, degree expansions, and critical coarse fields.

The background fields (phi_*, phi) on the fine lattice are the stationary
point of the off-shell action at fixed unit-lattice fields (psi_*, psi);
the critical fields (psi_*n, psi_n) are in turn the stationary point of
the theta-coupled effective exponent.  Both are found by Newton iteration
from the linear (free) solution; everything is batched over leading axes
so that quadrature drivers can solve many configurations at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .interaction import (
    Interaction,
    eval_V_prime_batch,
    eval_V_prime_star_batch,
)
from .lattice import Field, norms
from .operators import FlowParams, RGOperators

__all__ = [
    "BackgroundSolution",
    "CriticalFields",
    "DivergenceError",
    "DomainEscapeError",
    "solve_background",
    "solve_background_batch",
    "degree_expansion",
    "solve_critical_fields",
    "solve_critical_fields_batch",
    "linear_critical_matrix",
]

BACKGROUND_TOL = 1e-11
CRITICAL_TOL = 1e-9
MAX_ITER = 200


class DivergenceError(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(f"{msg}; residual history {history}")
        self.history = list(history)


class DomainEscapeError(RuntimeError):
    """An iterate left the analyticity domain of the background map."""


@dataclass(frozen=True)
class BackgroundSolution:
    phi_star: Field
    phi: Field
    residual: float
    iterations: int
    degree_parts: dict | None = None
    residual_history: tuple = ()


@dataclass(frozen=True)
class CriticalFields:
    psi_star_n: Field
    psi_n: Field
    rho_n: Field
    converged: bool
    residual: float = 0.0
    residual_history: tuple = ()


class _Kernels:
    """Dense matrices shared by every background/critical solve.

    M  = D_n + Q_n* fQ_n Q_n - mu_n  (the starred equation uses M^T),
    R  = Q_n* fQ_n  mapping unit fields into fine source terms.
    """

    def __init__(self, params: FlowParams, ops: RGOperators):
        self.params = params
        self.ops = ops
        a_n, mu = params.a_n, params.mu_n
        Qn = ops.Qn.matrix
        Qn_star = ops.Qn_star.matrix
        nf = ops.fine.nsites
        self.M = ops.Dn.matrix + a_n * (Qn_star @ Qn) - mu * np.eye(nf)
        self.R = a_n * Qn_star
        self.S_mu = np.linalg.inv(self.M)
        self.Qn = Qn


def _kernels(params: FlowParams, ops: RGOperators) -> _Kernels:
    return ops._get("background-kernels", lambda: _Kernels(params, ops))


def _bg_residual(ker: _Kernels, inter: Interaction, phi_star, phi,
                 psi_star, psi):
    lat = ker.ops.fine
    F1 = phi_star @ ker.M + eval_V_prime_star_batch(
        phi_star, phi, phi_star, inter, lat) - psi_star @ ker.R.T
    F2 = phi @ ker.M.T + eval_V_prime_batch(
        phi, phi_star, phi, inter, lat) - psi @ ker.R.T
    return F1, F2


def _bg_jacobian(ker: _Kernels, inter: Interaction, phi_star, phi):
    """Batched Jacobian of the background system, shape (B, 2Nf, 2Nf).

    The interaction blocks are exact for the local quartic; for kernel
    interactions the off-diagonal couplings of the smeared quartic are
    dropped, which turns Newton into a quasi-Newton scheme that still
    converges for the weak couplings in scope.
    """
    B, nf = phi.shape
    lam = inter.lambda_n if inter.kind == "local-quartic" else 0.0
    J = np.zeros((B, 2 * nf, 2 * nf), dtype=complex)
    J[:, :nf, :nf] = ker.M.T[None, :, :]
    J[:, nf:, nf:] = ker.M[None, :, :]
    if lam:
        idx = np.arange(nf)
        J[:, idx, idx] += 2.0 * lam * phi_star * phi
        J[:, idx, nf + idx] += lam * phi_star**2
        J[:, nf + idx, idx] += lam * phi**2
        J[:, nf + idx, nf + idx] += 2.0 * lam * phi_star * phi
    # matrix acts from the left on stacked (phi_star, phi); rows follow
    # (F1, F2) with d F1 / d phi_* = M^T + diag, etc.  The M blocks above
    # are placed so that J @ delta matches the linearization of
    # _bg_residual under phi -> phi + delta.
    return J


def solve_background_batch(psi_star: np.ndarray, psi: np.ndarray,
                           params: FlowParams, ops: RGOperators,
                           inter: Interaction, tol: float = BACKGROUND_TOL,
                           max_iter: int = MAX_ITER,
                           method: str = "newton"):
    """Solve the background equations for a batch of unit-lattice fields.

    Returns (phi_star, phi, residual, iterations, history) with leading
    batch axes; ``method`` is "newton" (default) or "picard", the latter a
    fixed-point sweep phi <- S(mu) (R psi - V') that is much cheaper per
    configuration when the batch is large and the coupling weak.
    """
    ker = _kernels(params, ops)
    B = psi.shape[0]
    nf = ops.fine.nsites
    lat = ops.fine
    phi_star = psi_star @ (ker.R.T @ ker.S_mu)
    phi = psi @ (ker.R.T @ ker.S_mu.T)
    history = []
    for it in range(max_iter):
        F1, F2 = _bg_residual(ker, inter, phi_star, phi, psi_star, psi)
        res = float(max(np.abs(F1).max(initial=0.0),
                        np.abs(F2).max(initial=0.0)))
        history.append(res)
        if res < tol:
            return phi_star, phi, res, it, history
        if not np.isfinite(res) or (len(history) > 6
                                    and res > 10.0 * history[0]):
            raise DivergenceError("background iteration diverged", history)
        if method == "picard":
            vp_star = eval_V_prime_star_batch(phi_star, phi, phi_star,
                                              inter, lat)
            vp = eval_V_prime_batch(phi, phi_star, phi, inter, lat)
            phi_star = (psi_star @ ker.R.T - vp_star) @ ker.S_mu
            phi = (psi @ ker.R.T - vp) @ ker.S_mu.T
        else:
            J = _bg_jacobian(ker, inter, phi_star, phi)
            rhs = np.concatenate([F1, F2], axis=1)
            step = np.linalg.solve(J, rhs[..., None])[..., 0]
            phi_star = phi_star - step[:, :nf]
            phi = phi - step[:, nf:]
    F1, F2 = _bg_residual(ker, inter, phi_star, phi, psi_star, psi)
    res = float(max(np.abs(F1).max(initial=0.0), np.abs(F2).max(initial=0.0)))
    if res < tol:
        return phi_star, phi, res, max_iter, history
    raise DivergenceError(
        f"background iteration did not reach {tol:.1e} in {max_iter} steps",
        history,
    )


def solve_background(psi_star: Field, psi: Field, params: FlowParams,
                     ops: RGOperators, inter: Interaction,
                     with_degree_parts: bool = False,
                     tol: float = BACKGROUND_TOL) -> BackgroundSolution:
    phi_star, phi, res, it, hist = solve_background_batch(
        psi_star.flat[None, :], psi.flat[None, :], params, ops, inter,
        tol=tol)
    parts = None
    if with_degree_parts:
        parts = degree_expansion(psi_star, psi, params, ops, inter,
                                 solution=(phi_star[0], phi[0]))
    return BackgroundSolution(
        phi_star=Field(ops.fine, phi_star[0]),
        phi=Field(ops.fine, phi[0]),
        residual=res, iterations=it, degree_parts=parts,
        residual_history=tuple(hist),
    )


def degree_expansion(psi_star: Field, psi: Field, params: FlowParams,
                     ops: RGOperators, inter: Interaction,
                     max_degree: int = 5, solution=None) -> dict:
    """Split the background fields by polynomial degree in (psi_*, psi).

    Phi is the degree-1 part, phi^(>=3) the rest, and phi^(>=5) what is
    left after also removing the explicit cubic correction.
    """
    ker = _kernels(params, ops)
    lat = ops.fine
    if solution is None:
        ps, p, _, _, _ = solve_background_batch(
            psi_star.flat[None, :], psi.flat[None, :], params, ops, inter)
        phi_star, phi = ps[0], p[0]
    else:
        phi_star, phi = solution
    Phi = (psi.flat @ (ker.R.T @ ker.S_mu.T))
    Phi_star = (psi_star.flat @ (ker.R.T @ ker.S_mu))
    ge3 = phi - Phi
    ge3_star = phi_star - Phi_star
    parts = {
        "Phi": Field(lat, Phi),
        "Phi_star": Field(lat, Phi_star),
        "phi_ge3": Field(lat, ge3),
        "phi_ge3_star": Field(lat, ge3_star),
    }
    if max_degree >= 5:
        vp = eval_V_prime_batch(Phi[None, :], Phi_star[None, :],
                                Phi[None, :], inter, lat)[0]
        vp_star = eval_V_prime_star_batch(Phi_star[None, :], Phi[None, :],
                                          Phi_star[None, :], inter, lat)[0]
        parts["phi_ge5"] = Field(lat, ge3 + vp @ ker.S_mu.T)
        parts["phi_ge5_star"] = Field(lat, ge3_star + vp_star @ ker.S_mu)
    return parts


def linear_critical_matrix(params: FlowParams, ops: RGOperators,
                           starred: bool = False) -> np.ndarray:
    """Matrix of the linear critical-field solve.

    psi_n = K^{-1} (a/L^2) Q* theta with
    K = (a/L^2) Q*Q + Delta(mu_n); the starred system uses K^T.
    """
    ker = _kernels(params, ops)
    a_n = params.a_n
    nu = ops.unit.nsites
    Delta_mu = a_n * (np.eye(nu) - a_n * (ops.Qn.matrix @ ker.S_mu
                                          @ ops.Qn_star.matrix))
    K = (params.a / params.L**2) * (ops.Q_star.matrix @ ops.Q.matrix) \
        + Delta_mu
    return K.T if starred else K


def _critical_grad(ker: _Kernels, params: FlowParams, ops: RGOperators,
                   theta_star, theta, psi_star, psi, phi_star, phi):
    aL2 = params.a / params.L**2
    a_n = params.a_n
    Q = ops.Q.matrix
    Q_star = ops.Q_star.matrix
    Qn = ker.Qn
    G_star = a_n * (psi - phi @ Qn.T) \
        - aL2 * ((theta - psi @ Q.T) @ Q_star.T)
    G = a_n * (psi_star - phi_star @ Qn.T) \
        - aL2 * ((theta_star - psi_star @ Q.T) @ Q_star.T)
    return G_star, G


def solve_critical_fields_batch(theta_star: np.ndarray, theta: np.ndarray,
                                params: FlowParams, ops: RGOperators,
                                inter: Interaction,
                                tol: float = CRITICAL_TOL,
                                max_iter: int = MAX_ITER):
    """Newton iteration on the joint stationarity system of the exponent.

    Returns (psi_star_n, psi_n, rho_n, converged, residual, history).
    """
    ker = _kernels(params, ops)
    B = theta.shape[0]
    nu = ops.unit.nsites
    nf = ops.fine.nsites
    aL2 = params.a / params.L**2
    a_n = params.a_n
    K = linear_critical_matrix(params, ops)
    psi = np.linalg.solve(K, aL2 * (theta @ ops.Q_star.matrix.T).T).T
    psi_star = np.linalg.solve(K.T, aL2 * (theta_star
                                           @ ops.Q_star.matrix.T).T).T
    QsQ = ops.Q_star.matrix @ ops.Q.matrix
    history = []
    for it in range(max_iter):
        phi_star, phi, _, _, _ = solve_background_batch(
            psi_star, psi, params, ops, inter)
        G_star, G = _critical_grad(ker, params, ops, theta_star, theta,
                                   psi_star, psi, phi_star, phi)
        res = float(max(np.abs(G_star).max(initial=0.0),
                        np.abs(G).max(initial=0.0)))
        history.append(res)
        if res < tol:
            break
        if not np.isfinite(res) or (len(history) > 6
                                    and res > 10.0 * history[0]):
            raise DivergenceError("critical-field iteration diverged",
                                  history)
        # implicit derivative of the background fields: J_bg d(phi) = dRHS
        J_bg = _bg_jacobian(ker, inter, phi_star, phi)
        rhs = np.zeros((B, 2 * nf, 2 * nu), dtype=complex)
        rhs[:, :nf, :nu] = ker.R[None, :, :]
        rhs[:, nf:, nu:] = ker.R[None, :, :]
        dphi = np.linalg.solve(J_bg, rhs)
        dps_dpss = dphi[:, :nf, :nu]   # d phi_* / d psi_*
        dps_dps = dphi[:, :nf, nu:]    # d phi_* / d psi
        dp_dpss = dphi[:, nf:, :nu]    # d phi  / d psi_*
        dp_dps = dphi[:, nf:, nu:]     # d phi  / d psi
        Qn = ker.Qn[None, :, :]
        eye = np.eye(nu)[None, :, :]
        Jc = np.zeros((B, 2 * nu, 2 * nu), dtype=complex)
        # rows: G_star then G; columns: psi_star then psi.  G_star(x) =
        # sum_j d G_star(x) / d psi_*(j) etc., with batched fields stored
        # as row vectors, so each block is the transpose of the map above.
        Jc[:, :nu, :nu] = -a_n * (Qn @ dp_dpss)
        Jc[:, :nu, nu:] = a_n * (eye - Qn @ dp_dps) + aL2 * QsQ[None, :, :]
        Jc[:, nu:, :nu] = a_n * (eye - Qn @ dps_dpss) + aL2 * QsQ.T[None]
        Jc[:, nu:, nu:] = -a_n * (Qn @ dps_dps)
        grad = np.concatenate([G_star, G], axis=1)
        step = np.linalg.solve(Jc, grad[..., None])[..., 0]
        psi_star = psi_star - step[:, :nu]
        psi = psi - step[:, nu:]
    converged = history[-1] < tol
    rho = np.conj(psi_star) - psi
    return psi_star, psi, rho, converged, history[-1], history


def solve_critical_fields(theta_star: Field, theta: Field,
                          params: FlowParams, ops: RGOperators,
                          inter: Interaction,
                          tol: float = CRITICAL_TOL) -> CriticalFields:
    ps, p, rho, conv, res, hist = solve_critical_fields_batch(
        theta_star.flat[None, :], theta.flat[None, :], params, ops, inter,
        tol=tol)
    psi_n = Field(ops.unit, p[0])
    rep = norms(psi_n)
    if rep.sup >= params.kappa_n or rep.grad_sup >= params.kappa_prime_n:
        raise DomainEscapeError(
            f"critical field left the analyticity domain: sup {rep.sup:.3e} "
            f"vs kappa {params.kappa_n:.3e}, grad {rep.grad_sup:.3e} "
            f"vs kappa' {params.kappa_prime_n:.3e}"
        )
    if not conv:
        raise DivergenceError("critical-field Newton did not converge", hist)
    return CriticalFields(
        psi_star_n=Field(ops.unit, ps[0]), psi_n=psi_n,
        rho_n=Field(ops.unit, rho[0]), converged=conv, residual=res,
        residual_history=tuple(hist),
    )
