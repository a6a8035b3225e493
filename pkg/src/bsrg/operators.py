"""Dense lattice operators for one coarse-graining step.

Everything is built as an explicit matrix on flattened site vectors, which
keeps the whole toolchain honest at desk scale: adjoints are bilinear
transposes with cell-volume weights, inverses are genuine dense inverses,
and square roots are principal-branch matrix functions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .lattice import (
    Field,
    Lattice,
    LatticeError,
    block_sizes,
    coarse_lattice,
    fine_lattice,
    make_lattice,
    plane_wave,
    random_field,
    translate,
)

__all__ = [
    "LinOp",
    "FlowParams",
    "OperatorError",
    "InvertibilityError",
    "SpectralError",
    "BranchError",
    "identity_op",
    "shift_op",
    "bilinear_adjoint",
    "transpose_op",
    "block_average_Q",
    "compose_Qn",
    "build_fQn",
    "build_Dn",
    "greens_Sn",
    "build_Delta_n",
    "covariance_C",
    "principal_sqrt",
    "symbol",
    "q_minus_plus",
    "sup_op_norm",
    "save_linop",
    "load_linop",
    "RGOperators",
]


class OperatorError(ValueError):
    """Misuse of an operator (shape mismatch, missing structure)."""


class InvertibilityError(OperatorError):
    def __init__(self, msg, smallest_singular_value):
        super().__init__(f"{msg} (smallest singular value {smallest_singular_value:.3e})")
        self.smallest_singular_value = smallest_singular_value


class SpectralError(OperatorError):
    def __init__(self, msg, min_eig):
        super().__init__(f"{msg} (minimum Hermitian-part eigenvalue {min_eig:.3e})")
        self.min_eig = min_eig


class BranchError(OperatorError):
    """Spectrum touches the branch cut of the principal square root."""


@dataclass(frozen=True)
class LinOp:
    """Dense linear operator between fields on two lattices."""

    domain: Lattice
    codomain: Lattice
    matrix: np.ndarray
    translation_invariant: bool = False

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        if mat.shape != (self.codomain.nsites, self.domain.nsites):
            raise OperatorError(
                f"matrix shape {mat.shape} does not match "
                f"({self.codomain.nsites}, {self.domain.nsites})"
            )
        mat = mat.copy()
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        if self.translation_invariant and self.domain == self.codomain:
            _spot_check_invariance(self)

    def apply(self, f: Field) -> Field:
        if f.lattice != self.domain:
            raise OperatorError("field lattice does not match operator domain")
        return Field(self.codomain, self.matrix @ f.flat)

    def __call__(self, f: Field) -> Field:
        return self.apply(f)

    def __matmul__(self, other: "LinOp") -> "LinOp":
        if other.codomain != self.domain:
            raise OperatorError("operator composition: lattice mismatch")
        return LinOp(other.domain, self.codomain, self.matrix @ other.matrix)

    def __add__(self, other: "LinOp") -> "LinOp":
        if (other.domain, other.codomain) != (self.domain, self.codomain):
            raise OperatorError("operator sum: lattice mismatch")
        return LinOp(
            self.domain, self.codomain, self.matrix + other.matrix,
            self.translation_invariant and other.translation_invariant,
        )

    def __sub__(self, other: "LinOp") -> "LinOp":
        return self + (-1.0) * other

    def __mul__(self, scalar) -> "LinOp":
        return LinOp(self.domain, self.codomain, scalar * self.matrix,
                     self.translation_invariant)

    __rmul__ = __mul__


def _spot_check_invariance(op: LinOp, tol=1e-10):
    """Cheap sample check that a flagged operator commutes with translations."""
    lat = op.domain
    if lat.nsites > 4096:
        return
    rng = np.random.default_rng(7)
    f = random_field(lat, rng)
    shift = tuple(rng.integers(0, e) for e in lat.extents)
    lhs = translate(op.apply(f), shift).flat
    rhs = op.apply(translate(f, shift)).flat
    scale = np.abs(op.matrix).max() + 1.0
    if not np.allclose(lhs, rhs, atol=tol * scale * lat.nsites):
        raise OperatorError("operator flagged translation-invariant is not")


def identity_op(lat: Lattice) -> LinOp:
    return LinOp(lat, lat, np.eye(lat.nsites, dtype=complex), True)


def shift_op(lat: Lattice, nu: int, steps: int = 1) -> LinOp:
    """(S f)(x) = f(x + steps * e_nu), periodic."""
    idx = np.arange(lat.nsites).reshape(lat.extents)
    cols = np.roll(idx, -steps, axis=nu).ravel()
    mat = np.zeros((lat.nsites, lat.nsites), dtype=complex)
    mat[np.arange(lat.nsites), cols] = 1.0
    return LinOp(lat, lat, mat, True)


def bilinear_adjoint(op: LinOp) -> LinOp:
    """Adjoint with respect to the bilinear volume-weighted pairings.

    <op* g, f>_domain = <g, op f>_codomain for all f, g.
    """
    w = op.codomain.cell_volume / op.domain.cell_volume
    return LinOp(op.codomain, op.domain, w * op.matrix.T)


def transpose_op(op: LinOp) -> LinOp:
    """Plain transpose; for same-lattice operators this is the bilinear adjoint."""
    if op.domain != op.codomain:
        raise OperatorError("transpose_op is for same-lattice operators; "
                            "use bilinear_adjoint")
    return LinOp(op.domain, op.codomain, op.matrix.T, op.translation_invariant)


def _block_map(dom: Lattice, cod: Lattice):
    """Column block assignment for a block average dom -> cod."""
    ratios = []
    for ed, ec in zip(dom.extents, cod.extents):
        if ed % ec != 0:
            raise LatticeError(
                f"extents {dom.extents} not divisible by coarse extents {cod.extents}"
            )
        ratios.append(ed // ec)
    idx = np.indices(dom.extents)
    coarse_multi = [idx[d] // ratios[d] for d in range(dom.ndim)]
    rows = np.ravel_multi_index(coarse_multi, cod.extents).ravel()
    return rows, int(np.prod(ratios))


def block_average_Q(unit: Lattice, coarse: Lattice) -> LinOp:
    """Averaging operator over parabolic blocks; rows sum to 1."""
    rows, bsize = _block_map(unit, coarse)
    mat = np.zeros((coarse.nsites, unit.nsites), dtype=complex)
    mat[rows, np.arange(unit.nsites)] = 1.0 / bsize
    return LinOp(unit, coarse, mat)


def compose_Qn(params: "FlowParams", fine: Lattice, unit: Lattice) -> LinOp:
    """n-fold block average mapping fine-lattice fields to unit-lattice fields."""
    n, L = params.n, params.L
    expect = fine_lattice(unit, L, n)
    if tuple(fine.extents) != tuple(expect.extents):
        raise OperatorError(
            f"fine lattice extents {fine.extents} are not the {n}-fold "
            f"parabolic refinement of {unit.extents}"
        )
    if n == 0:
        return identity_op(unit)
    levels = [fine]
    for j in range(n - 1, 0, -1):
        levels.append(make_lattice(unit.spatial_dim, unit.extents, L, n=j, level="fine"))
    levels.append(unit)
    op = None
    for dom, cod in zip(levels[:-1], levels[1:]):
        step = block_average_Q(dom, cod)
        op = step if op is None else step @ op
    return op


def build_fQn(params: "FlowParams", unit: Lattice) -> LinOp:
    """The block-spin weight operator: a_n times the identity."""
    return params.a_n * identity_op(unit)


def build_Dn(params: "FlowParams", fine: Lattice) -> LinOp:
    """Parabolic kinetic operator on the fine lattice.

    Time part (f(x) - f(x + e_0)) / eps_0 plus the (positive) five-point
    spatial Laplacian, so the symbol at small k is
    -i k0 + (eps_0/2) k0^2 + |k|^2 + higher order, with nonnegative real
    part over the whole zone.
    """
    eps0 = fine.spacings[0]
    op = (1.0 / eps0) * (identity_op(fine) - shift_op(fine, 0, 1))
    for nu in range(1, fine.ndim):
        eps = fine.spacings[nu]
        lap = 2.0 * identity_op(fine) - shift_op(fine, nu, 1) - shift_op(fine, nu, -1)
        op = op + (1.0 / eps**2) * lap
    return op


def _solve_inverse(mat: np.ndarray, what: str) -> np.ndarray:
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv[-1] < 1e-12 * sv[0]:
        raise InvertibilityError(f"{what} is numerically singular", float(sv[-1]))
    return np.linalg.inv(mat)


def greens_Sn(params: "FlowParams", fine: Lattice, unit: Lattice,
              mu: complex = 0.0, Qn: LinOp | None = None) -> LinOp:
    """S_n(mu) = (D_n + Q_n* fQ_n Q_n - mu)^(-1) on the fine lattice."""
    Qn = compose_Qn(params, fine, unit) if Qn is None else Qn
    Dn = build_Dn(params, fine)
    Qn_star = bilinear_adjoint(Qn)
    M = Dn.matrix + params.a_n * (Qn_star.matrix @ Qn.matrix) \
        - mu * np.eye(fine.nsites)
    return LinOp(fine, fine, _solve_inverse(M, "D_n + Q_n* fQ_n Q_n - mu"))


def build_Delta_n(params: "FlowParams", fine: Lattice, unit: Lattice,
                  Qn: LinOp | None = None, Sn0: LinOp | None = None) -> LinOp:
    """fQ_n (1 - Q_n S_n(0) Q_n* fQ_n) on the unit lattice."""
    Qn = compose_Qn(params, fine, unit) if Qn is None else Qn
    Sn0 = greens_Sn(params, fine, unit, 0.0, Qn) if Sn0 is None else Sn0
    Qn_star = bilinear_adjoint(Qn)
    a = params.a_n
    mat = a * (np.eye(unit.nsites) - a * (Qn.matrix @ Sn0.matrix @ Qn_star.matrix))
    return LinOp(unit, unit, mat, translation_invariant=True)


def covariance_C(params: "FlowParams", Q: LinOp, Delta: LinOp, t: float) -> LinOp:
    """Fluctuation covariance family C(t).

    C(t)^(-1) = (a t / L^2) Q* Q + t Delta + (1 - t) 1 on the unit lattice;
    the Hermitian part of C(t)^(-1) must be positive definite.
    """
    if not 0.0 <= t <= 1.0:
        raise OperatorError(f"t must lie in [0, 1], got {t}")
    unit = Q.domain
    Q_star = bilinear_adjoint(Q)
    cinv = (params.a * t / params.L**2) * (Q_star.matrix @ Q.matrix) \
        + t * Delta.matrix + (1.0 - t) * np.eye(unit.nsites)
    herm = 0.5 * (cinv + cinv.conj().T)
    min_eig = float(np.linalg.eigvalsh(herm)[0])
    if min_eig <= 0.0:
        raise SpectralError("Hermitian part of C(t)^(-1) is not positive definite",
                            min_eig)
    return LinOp(unit, unit, _solve_inverse(cinv, "C(t)^(-1)"))


def covariance_C_inverse(params: "FlowParams", Q: LinOp, Delta: LinOp,
                         t: float) -> LinOp:
    """C(t)^(-1) itself (no inversion round trip)."""
    if not 0.0 <= t <= 1.0:
        raise OperatorError(f"t must lie in [0, 1], got {t}")
    unit = Q.domain
    Q_star = bilinear_adjoint(Q)
    cinv = (params.a * t / params.L**2) * (Q_star.matrix @ Q.matrix) \
        + t * Delta.matrix + (1.0 - t) * np.eye(unit.nsites)
    return LinOp(unit, unit, cinv)


def principal_sqrt(op: LinOp) -> LinOp:
    """Principal operator square root for spectra in the open right half-plane."""
    if op.domain != op.codomain:
        raise OperatorError("square root needs a same-lattice operator")
    eig = np.linalg.eigvals(op.matrix)
    if np.min(eig.real) <= 0.0:
        raise BranchError(
            f"spectrum reaches the closed left half-plane "
            f"(min real part {np.min(eig.real):.3e}); principal branch undefined"
        )
    root = scipy.linalg.sqrtm(np.asarray(op.matrix))
    resid = np.linalg.norm(root @ root - op.matrix) / max(np.linalg.norm(op.matrix), 1e-300)
    if resid > 1e-8:
        raise BranchError(f"square root reconstruction residual {resid:.3e}")
    return LinOp(op.domain, op.codomain, root)


def symbol(op: LinOp, k) -> complex:
    """Eigenvalue of a translation-invariant operator on the plane wave exp(i k.x)."""
    if not op.translation_invariant:
        raise OperatorError("symbol is only defined for translation-invariant operators")
    pw = plane_wave(op.domain, k)
    out = op.apply(pw).flat
    lam = complex(np.vdot(pw.flat, out) / op.domain.nsites)
    resid = np.linalg.norm(out - lam * pw.flat) / math.sqrt(op.domain.nsites)
    if resid > 1e-8 * (abs(lam) + np.abs(op.matrix).max()):
        raise OperatorError(
            f"plane wave with k={k} is not an eigenvector (residual {resid:.3e}); "
            "is k on the momentum grid?"
        )
    return lam


def q_minus_plus(unit: Lattice, coarse: Lattice, nu: int) -> LinOp:
    """The averaging operator on difference fields.

    Satisfies d_nu^coarse Q = R_nu d_nu^unit exactly:
    R_nu = (1/b_nu) sum_{s=0}^{b_nu - 1} Q Shift(s e_nu).
    """
    Q = block_average_Q(unit, coarse)
    b = unit.extents[nu] // coarse.extents[nu]
    mat = np.zeros_like(Q.matrix)
    for s in range(b):
        mat += (Q @ shift_op(unit, nu, s)).matrix
    return LinOp(unit, coarse, mat / b)


def sup_op_norm(op: LinOp) -> float:
    """Operator norm from sup norm to sup norm: max absolute row sum."""
    return float(np.abs(op.matrix).sum(axis=1).max())


def save_linop(op: LinOp, path):
    rec = {
        "domain": op.domain.describe(),
        "codomain": op.codomain.describe(),
        "translation_invariant": op.translation_invariant,
        "shape": list(op.matrix.shape),
        "data": [[float(v.real), float(v.imag)] for v in op.matrix.ravel()],
    }
    with open(path, "w") as fh:
        json.dump(rec, fh)


def load_linop(path) -> LinOp:
    with open(path) as fh:
        rec = json.load(fh)

    def _lat(d):
        return Lattice(d["spatial_dim"], tuple(d["extents"]), tuple(d["spacings"]),
                       d["level"], d["L"], d["n"])

    data = np.array([complex(re, im) for re, im in rec["data"]])
    return LinOp(_lat(rec["domain"]), _lat(rec["codomain"]),
                 data.reshape(rec["shape"]), rec["translation_invariant"])


# --- flow parameters ---------------------------------------------------------

class ParamsError(ValueError):
    pass


def _an_recursion(a: float, L: int, n: int) -> float:
    val = a
    for _ in range(n):
        val = L**2 * val / (L**2 + val)
    return min(2.0, max(0.5, val))


@dataclass(frozen=True)
class FlowParams:
    """All scale-n scalars of the coarse-graining step."""

    n: int
    n_p: int
    L: int
    a: float
    a_n: float
    mu_n: float
    lambda_n: float
    v0: float
    eps: float
    kappa_n: float
    kappa_prime_n: float
    eta: float
    eta_prime: float
    c0: float
    r_n: float

    def __post_init__(self):
        if not 1 <= self.n <= self.n_p:
            raise ParamsError(f"need 1 <= n <= n_p, got n={self.n}, n_p={self.n_p}")
        if self.L < 2:
            raise ParamsError(f"L must be >= 2, got {self.L}")
        if self.a <= 0:
            raise ParamsError("block-spin strength a must be positive")
        if not 0.5 <= self.a_n <= 2.0:
            raise ParamsError(f"a_n must lie in [1/2, 2], got {self.a_n}")
        if abs(self.mu_n) >= 4.0 * self.v0 ** (5 * self.eps):
            raise ParamsError(
                f"|mu_n|={abs(self.mu_n):.3e} violates the bound "
                f"4 v0^(5 eps)={4 * self.v0 ** (5 * self.eps):.3e}"
            )
        if self.lambda_n < 0:
            raise ParamsError("lambda_n must be nonnegative")
        if self.lambda_n * self.kappa_n**2 >= self.v0 ** (1.5 * self.eps):
            raise ParamsError(
                f"lambda_n kappa_n^2={self.lambda_n * self.kappa_n ** 2:.3e} violates "
                f"the bound v0^(3 eps / 2)={self.v0 ** (1.5 * self.eps):.3e}"
            )
        if not self.eta < 7.0 / 8.0:
            raise ParamsError(f"eta must be < 7/8, got {self.eta}")
        if not self.eta_prime < 3.0 / 4.0:
            raise ParamsError(f"eta_prime must be < 3/4, got {self.eta_prime}")
        if self.kappa_n <= 0 or self.kappa_prime_n <= 0:
            raise ParamsError("field and gradient radii must be positive")
        if self.c0 <= 0 or self.r_n <= 0:
            raise ParamsError("c0 and r_n must be positive")

    @classmethod
    def default(cls, v0=1e-3, n=1, L=2, eps=0.1, c0=0.1, a=1.0,
                lambda_scale=1.0, mu_scale=1.0, eta=0.8, eta_prime=0.7,
                kappa=None, kappa_prime=None, n_p=None, r_n=None) -> "FlowParams":
        """Consistent scale-n parameters for an initial coupling v0."""
        lambda_n = lambda_scale * v0
        mu_n = mu_scale * v0 ** (5 * eps)
        if kappa is None:
            if lambda_n > 0:
                # lambda_n kappa_n^2 = 0.81 v0^(4 eps): well inside the
                # allowed v0^(3 eps / 2), so the box is small enough for
                # the action sandwich to hold at a 10% margin, yet still
                # wide against the O(1) fluctuation covariance
                kappa = 0.9 * v0 ** (2.0 * eps) / math.sqrt(lambda_n)
            else:
                kappa = 8.0
        if kappa_prime is None:
            kappa_prime = kappa
        if r_n is None:
            # half the gradient radius: large enough that the discarded
            # fluctuation tail beyond the disk is exponentially small,
            # while staying strictly inside the c0^(1/4) kappa' wall
            r_n = 0.5 * kappa_prime
        return cls(
            n=n, n_p=n if n_p is None else n_p, L=L, a=a,
            a_n=_an_recursion(a, L, n), mu_n=mu_n, lambda_n=lambda_n,
            v0=v0, eps=eps, kappa_n=kappa, kappa_prime_n=kappa_prime,
            eta=eta, eta_prime=eta_prime, c0=c0, r_n=r_n,
        )

    @property
    def kappa_next(self) -> float:
        return self.L**self.eta * self.kappa_n

    @property
    def kappa_prime_next(self) -> float:
        return self.L**self.eta_prime * self.kappa_prime_n

    @property
    def rv_eps_inv(self) -> float:
        """The scale-splitting threshold 1 / r_n-coupling^eps used in the
        near/far decomposition of the coarse-field Gaussian."""
        return self.lambda_n ** (-self.eps) if self.lambda_n > 0 else math.inf

    def replace(self, **kw) -> "FlowParams":
        d = self.__dict__.copy()
        d.update(kw)
        return FlowParams(**d)


# --- cached operator context -------------------------------------------------

class RGOperators:
    """Builds and caches every operator of the step for one (params, unit).

    All members are immutable LinOps; construction is lazy so that cheap
    uses (domain predicates, single operators) never pay for the full set.
    """

    def __init__(self, params: FlowParams, unit: Lattice):
        self.params = params
        self.unit = unit
        self.coarse = coarse_lattice(unit, params.L)
        self.fine = fine_lattice(unit, params.L, params.n)
        self._cache = {}

    def _get(self, key, builder):
        if key not in self._cache:
            self._cache[key] = builder()
        return self._cache[key]

    @property
    def Q(self) -> LinOp:
        return self._get("Q", lambda: block_average_Q(self.unit, self.coarse))

    @property
    def Q_star(self) -> LinOp:
        return self._get("Q_star", lambda: bilinear_adjoint(self.Q))

    @property
    def Qn(self) -> LinOp:
        return self._get("Qn", lambda: compose_Qn(self.params, self.fine, self.unit))

    @property
    def Qn_star(self) -> LinOp:
        return self._get("Qn_star", lambda: bilinear_adjoint(self.Qn))

    @property
    def fQn(self) -> LinOp:
        return self._get("fQn", lambda: build_fQn(self.params, self.unit))

    @property
    def Dn(self) -> LinOp:
        return self._get("Dn", lambda: build_Dn(self.params, self.fine))

    def Sn(self, mu: complex = 0.0) -> LinOp:
        key = ("Sn", complex(mu))
        return self._get(key, lambda: greens_Sn(self.params, self.fine, self.unit,
                                                mu, self.Qn))

    @property
    def Delta(self) -> LinOp:
        return self._get("Delta", lambda: build_Delta_n(
            self.params, self.fine, self.unit, self.Qn, self.Sn(0.0)))

    def covariance(self, t: float) -> LinOp:
        key = ("C", float(t))
        return self._get(key, lambda: covariance_C(self.params, self.Q, self.Delta, t))

    def covariance_inverse(self, t: float) -> LinOp:
        key = ("Cinv", float(t))
        return self._get(key, lambda: covariance_C_inverse(
            self.params, self.Q, self.Delta, t))

    def sqrt_covariance(self, t: float) -> LinOp:
        key = ("D", float(t))
        return self._get(key, lambda: principal_sqrt(self.covariance(t)))

    @property
    def C_n(self) -> LinOp:
        return self.covariance(1.0)

    @property
    def D_n(self) -> LinOp:
        return self.sqrt_covariance(1.0)

    @property
    def det_C(self) -> complex:
        return self._get("detC", lambda: complex(np.linalg.det(self.C_n.matrix)))

    def q_minus_plus(self, nu: int) -> LinOp:
        key = ("Qmp", nu)
        return self._get(key, lambda: q_minus_plus(self.unit, self.coarse, nu))
