"""The quartic interaction V_n and its bilinear gradient.

Two kinds are supported: a strictly local quartic, and a short-range
translation-invariant kernel given by a table of offset weights.  Both are
quadri-linear forms W[phi_*, phi, phi_*, phi] with V = W / 2; the gradient
V' follows the three-argument slot convention fixed by the Euler identity
<phi_*, V'(phi, phi_*, phi)>_n = 2 V(phi_*, phi).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .lattice import Field, Lattice

__all__ = ["Interaction", "InteractionError", "eval_V", "eval_V_prime",
           "coupling_rn", "eval_V_batch", "eval_V_prime_batch"]

LOCAL = "local-quartic"
KERNEL = "short-range-kernel"


class InteractionError(ValueError):
    pass


@dataclass(frozen=True)
class Interaction:
    """Quartic interaction at scale n.

    For the kernel kind, ``kernel`` maps offset triples (o2, o3, o4) --
    integer lattice vectors for the slots beyond the first -- to nonnegative
    weights; the local kind is the single entry {(0, 0, 0): lambda_n}.
    """

    kind: str = LOCAL
    lambda_n: float = 0.0
    kernel: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in (LOCAL, KERNEL):
            raise InteractionError(f"unknown interaction kind {self.kind!r}")
        if self.kind == LOCAL and self.lambda_n < 0:
            raise InteractionError("local coupling must be nonnegative")
        if self.kind == KERNEL:
            for off, w in self.kernel.items():
                if w < 0:
                    raise InteractionError(
                        f"kernel entries must be nonnegative, got {w} at {off}"
                    )

    def offsets(self, ndim: int):
        if self.kind == LOCAL:
            zero = (0,) * ndim
            return [((zero, zero, zero), self.lambda_n)]
        return [(tuple(tuple(int(c) for c in o) for o in off), float(w))
                for off, w in self.kernel.items()]


def coupling_rn(inter: Interaction) -> float:
    """The scale-n coupling constant: the kernel summed over three slots.

    The slot sums carry the cell volume of each integrated argument, which
    cancels against the delta-function normalization of the kernel, so the
    result is just the total weight.
    """
    if inter.kind == LOCAL:
        return float(inter.lambda_n)
    return float(sum(w for _, w in inter.kernel.items()))


def _rolled(arr: np.ndarray, offset, ndim: int) -> np.ndarray:
    """arr(u + offset) for batched site arrays of shape (B, *extents)."""
    if not any(offset):
        return arr
    return np.roll(arr, tuple(-int(c) for c in offset),
                   axis=tuple(range(1, ndim + 1)))


def eval_V_batch(phi_star: np.ndarray, phi: np.ndarray, inter: Interaction,
                 lat: Lattice) -> np.ndarray:
    """V_n for a batch of field pairs; inputs shaped (B, nsites)."""
    shape = (-1,) + tuple(lat.extents)
    fs = phi_star.reshape(shape)
    f = phi.reshape(shape)
    ndim = lat.ndim
    total = np.zeros(fs.shape[0], dtype=complex)
    for (o2, o3, o4), w in inter.offsets(ndim):
        prod = fs * _rolled(f, o2, ndim) * _rolled(fs, o3, ndim) \
            * _rolled(f, o4, ndim)
        total += w * prod.reshape(fs.shape[0], -1).sum(axis=1)
    return 0.5 * lat.cell_volume * total


def eval_V_prime_batch(a: np.ndarray, b: np.ndarray, c: np.ndarray,
                       inter: Interaction, lat: Lattice) -> np.ndarray:
    """The trilinear gradient V'(a, b, c), batched; inputs (B, nsites).

    Symmetrized over the two starred slots of the quadri-linear form so
    that <phi_*, V'(phi, phi_*, phi)>_n = 2 V(phi_*, phi) exactly.
    """
    shape = (-1,) + tuple(lat.extents)
    av = a.reshape(shape)
    bv = b.reshape(shape)
    cv = c.reshape(shape)
    ndim = lat.ndim
    out = np.zeros_like(av)
    for (o2, o3, o4), w in inter.offsets(ndim):
        out += 0.5 * w * _rolled(av, o2, ndim) * _rolled(bv, o3, ndim) \
            * _rolled(cv, o4, ndim)
        m3 = tuple(-x for x in o3)
        d24 = tuple(x - y for x, y in zip(o2, o3))
        d44 = tuple(x - y for x, y in zip(o4, o3))
        out += 0.5 * w * _rolled(bv, m3, ndim) * _rolled(av, d24, ndim) \
            * _rolled(cv, d44, ndim)
    return out.reshape(av.shape[0], -1)


def eval_V_prime_star_batch(a: np.ndarray, b: np.ndarray, c: np.ndarray,
                            inter: Interaction, lat: Lattice) -> np.ndarray:
    """Gradient with respect to the unstarred field, batched.

    Slot convention (a, b, c) = (phi_*, phi, phi_*):
    <phi, V'_*(phi_*, phi, phi_*)>_n = 2 V(phi_*, phi).
    """
    shape = (-1,) + tuple(lat.extents)
    av = a.reshape(shape)
    bv = b.reshape(shape)
    cv = c.reshape(shape)
    ndim = lat.ndim
    out = np.zeros_like(av)
    for (o2, o3, o4), w in inter.offsets(ndim):
        m2 = tuple(-x for x in o2)
        d32 = tuple(x - y for x, y in zip(o3, o2))
        d42 = tuple(x - y for x, y in zip(o4, o2))
        out += 0.5 * w * _rolled(av, m2, ndim) * _rolled(cv, d32, ndim) \
            * _rolled(bv, d42, ndim)
        m4 = tuple(-x for x in o4)
        d24 = tuple(x - y for x, y in zip(o2, o4))
        d34 = tuple(x - y for x, y in zip(o3, o4))
        out += 0.5 * w * _rolled(av, m4, ndim) * _rolled(bv, d24, ndim) \
            * _rolled(cv, d34, ndim)
    return out.reshape(av.shape[0], -1)


def eval_V(phi_star: Field, phi: Field, inter: Interaction) -> complex:
    lat = phi.lattice
    return complex(eval_V_batch(phi_star.flat[None, :], phi.flat[None, :],
                                inter, lat)[0])


def eval_V_prime(a: Field, b: Field, c: Field, inter: Interaction) -> Field:
    lat = a.lattice
    out = eval_V_prime_batch(a.flat[None, :], b.flat[None, :],
                             c.flat[None, :], inter, lat)[0]
    return Field(lat, out)
