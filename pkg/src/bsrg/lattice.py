"""Finite periodic anisotropic lattices and complex fields on them.

A lattice has one temporal direction (index 0) and 1-3 spatial directions.
Blocks are anisotropic: the temporal block ratio is L^2, the spatial ratio
is L, matching the -ik0 + |k|^2 dispersion of the kinetic operator.  Three
levels appear in one coarse-graining step:

* ``unit``   -- spacing 1 in every direction,
* ``coarse`` -- the block sublattice of a unit lattice, spacings (L^2, L, ...),
* ``fine``   -- the n-fold parabolic refinement, spacings (L^-2n, L^-n, ...).

Fields are immutable complex arrays indexed by lattice site.  All pairings
are bilinear (no implicit conjugation) and weighted by the cell volume.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

__all__ = [
    "Lattice",
    "Field",
    "NormReport",
    "make_lattice",
    "unit_lattice",
    "coarse_lattice",
    "fine_lattice",
    "block_sizes",
    "zeros",
    "constant",
    "delta",
    "plane_wave",
    "random_field",
    "as_field",
    "translate",
    "forward_difference",
    "backward_difference",
    "norms",
    "pairing",
    "dft",
    "idft",
    "momentum_grid",
    "field_to_json",
    "field_from_json",
    "field_to_csv",
    "field_from_csv",
]


class LatticeError(ValueError):
    """Raised for inconsistent lattice construction or mismatched fields."""


@dataclass(frozen=True)
class Lattice:
    """A periodic anisotropic lattice: extents and spacings per direction.

    Direction 0 is temporal.  ``level`` tags which of the three lattices of
    the coarse-graining step this is ("unit", "coarse" or "fine").
    """

    spatial_dim: int
    extents: tuple
    spacings: tuple
    level: str = "unit"
    L: int = 2
    n: int = 0

    def __post_init__(self):
        if not 1 <= self.spatial_dim <= 3:
            raise LatticeError(f"spatial_dim must be 1-3, got {self.spatial_dim}")
        if len(self.extents) != self.spatial_dim + 1:
            raise LatticeError("need one extent per direction (time + spatial)")
        if len(self.spacings) != self.spatial_dim + 1:
            raise LatticeError("need one spacing per direction")
        if any(e < 1 for e in self.extents):
            raise LatticeError(f"extents must be positive, got {self.extents}")
        if any(s <= 0 for s in self.spacings):
            raise LatticeError(f"spacings must be positive, got {self.spacings}")

    @property
    def ndim(self) -> int:
        return self.spatial_dim + 1

    @property
    def nsites(self) -> int:
        return int(np.prod(self.extents))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    def site_positions(self) -> np.ndarray:
        """(nsites, ndim) array of physical coordinates, C site order."""
        grids = np.meshgrid(
            *[np.arange(e) * s for e, s in zip(self.extents, self.spacings)],
            indexing="ij",
        )
        return np.stack([g.ravel() for g in grids], axis=-1)

    def describe(self) -> dict:
        return {
            "spatial_dim": self.spatial_dim,
            "extents": list(self.extents),
            "spacings": list(self.spacings),
            "level": self.level,
            "L": self.L,
            "n": self.n,
        }


def block_sizes(lat: Lattice, L: int) -> tuple:
    """Per-direction block sizes for one coarse-graining step.

    The parabolic block is L^2 sites in time and L in each spatial
    direction, clipped to the extent of the lattice so that very small
    desk-scale tori (down to a single site) still admit a coarse level.
    """
    ratios = (L * L,) + (L,) * lat.spatial_dim
    return tuple(min(r, e) for r, e in zip(ratios, lat.extents))


def make_lattice(spatial_dim, extents, L, n=0, level="unit"):
    """Build a lattice at the requested level of the coarse-graining step.

    * unit:   spacing 1 everywhere.
    * fine:   spacing L^-2n temporally, L^-n spatially; extents are the
              given unit extents scaled up accordingly.
    * coarse: the block sublattice of the unit lattice with the given
              extents; extents must be divisible by the block sizes.
    """
    extents = tuple(int(e) for e in extents)
    if L < 2:
        raise LatticeError(f"block ratio L must be >= 2, got {L}")
    if level == "unit":
        return Lattice(spatial_dim, extents, (1.0,) * (spatial_dim + 1), "unit", L, 0)
    if level == "fine":
        scale = (L ** (2 * n),) + (L**n,) * spatial_dim
        fext = tuple(e * s for e, s in zip(extents, scale))
        fspc = tuple(1.0 / s for s in scale)
        return Lattice(spatial_dim, fext, fspc, "fine", L, n)
    if level == "coarse":
        unit = Lattice(spatial_dim, extents, (1.0,) * (spatial_dim + 1), "unit", L, 0)
        return coarse_lattice(unit, L)
    raise LatticeError(f"unknown level {level!r}")


def unit_lattice(spatial_dim, extents, L=2):
    return make_lattice(spatial_dim, extents, L, level="unit")


def coarse_lattice(unit: Lattice, L=None) -> Lattice:
    """The block sublattice of a unit lattice (spacings = block sizes)."""
    L = unit.L if L is None else L
    blocks = block_sizes(unit, L)
    for e, b in zip(unit.extents, blocks):
        if e % b != 0:
            raise LatticeError(
                f"extents {unit.extents} not divisible by block sizes {blocks}"
            )
    cext = tuple(e // b for e, b in zip(unit.extents, blocks))
    cspc = tuple(float(b) for b in blocks)
    return Lattice(unit.spatial_dim, cext, cspc, "coarse", L, unit.n)


def fine_lattice(unit: Lattice, L=None, n=1) -> Lattice:
    L = unit.L if L is None else L
    return make_lattice(unit.spatial_dim, unit.extents, L, n=n, level="fine")


@dataclass(frozen=True)
class Field:
    """A complex-valued function on lattice sites, immutable after creation."""

    lattice: Lattice
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != tuple(self.lattice.extents):
            if vals.size == self.lattice.nsites:
                vals = vals.reshape(self.lattice.extents)
            else:
                raise LatticeError(
                    f"value shape {vals.shape} does not match extents "
                    f"{self.lattice.extents}"
                )
        if not np.all(np.isfinite(vals.view(float))):
            raise LatticeError("field values must be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def conj(self) -> "Field":
        return Field(self.lattice, np.conj(self.values))

    def __add__(self, other):
        _check_same_lattice(self, other)
        return Field(self.lattice, self.values + other.values)

    def __sub__(self, other):
        _check_same_lattice(self, other)
        return Field(self.lattice, self.values - other.values)

    def __mul__(self, scalar):
        return Field(self.lattice, self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.lattice, -self.values)


@dataclass(frozen=True)
class NormReport:
    sup: float
    l2: float
    l4: float
    grad_sup: float
    grad_l2: float


def _check_same_lattice(f: Field, g: Field):
    if f.lattice != g.lattice:
        raise LatticeError(
            f"fields live on different lattices: {f.lattice.describe()} "
            f"vs {g.lattice.describe()}"
        )


def as_field(lattice: Lattice, values) -> Field:
    return Field(lattice, np.asarray(values, dtype=complex))


def zeros(lattice: Lattice) -> Field:
    return Field(lattice, np.zeros(lattice.extents, dtype=complex))


def constant(lattice: Lattice, c) -> Field:
    return Field(lattice, np.full(lattice.extents, c, dtype=complex))


def delta(lattice: Lattice, site) -> Field:
    vals = np.zeros(lattice.extents, dtype=complex)
    vals[tuple(site)] = 1.0
    return Field(lattice, vals)


def plane_wave(lattice: Lattice, k) -> Field:
    """exp(i k.x) with x the physical site coordinates."""
    k = np.asarray(k, dtype=float)
    pos = lattice.site_positions()
    vals = np.exp(1j * pos @ k).reshape(lattice.extents)
    return Field(lattice, vals)


def random_field(lattice: Lattice, rng, scale=1.0) -> Field:
    """Complex Gaussian field with the given per-site scale."""
    shape = tuple(lattice.extents)
    vals = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return Field(lattice, scale * vals / math.sqrt(2.0))


def translate(f: Field, shift) -> Field:
    """Translate by an integer lattice vector (periodic)."""
    return Field(f.lattice, np.roll(f.values, tuple(int(s) for s in shift),
                                    axis=tuple(range(f.lattice.ndim))))


def forward_difference(f: Field, nu: int) -> Field:
    """(f(x + e_nu) - f(x)) / spacing_nu with periodic wraparound."""
    lat = f.lattice
    if not 0 <= nu < lat.ndim:
        raise LatticeError(f"direction {nu} out of range for {lat.ndim} directions")
    shifted = np.roll(f.values, -1, axis=nu)
    return Field(lat, (shifted - f.values) / lat.spacings[nu])


def backward_difference(f: Field, nu: int) -> Field:
    """(f(x) - f(x - e_nu)) / spacing_nu with periodic wraparound."""
    lat = f.lattice
    if not 0 <= nu < lat.ndim:
        raise LatticeError(f"direction {nu} out of range for {lat.ndim} directions")
    shifted = np.roll(f.values, 1, axis=nu)
    return Field(lat, (f.values - shifted) / lat.spacings[nu])


def norms(f: Field) -> NormReport:
    """Cell-volume weighted L^p norms plus sup norms of f and its gradient.

    grad_l2 is the sum over directions of the L^2 norms of the forward
    differences (not the root of the sum of squares).
    """
    vol = f.lattice.cell_volume
    absv = np.abs(f.flat)
    sup = float(absv.max(initial=0.0))
    l2 = float(math.sqrt(vol * float(np.sum(absv**2))))
    l4 = float((vol * float(np.sum(absv**4))) ** 0.25)
    grad_sup = 0.0
    grad_l2 = 0.0
    for nu in range(f.lattice.ndim):
        d = np.abs(forward_difference(f, nu).flat)
        grad_sup = max(grad_sup, float(d.max(initial=0.0)))
        grad_l2 += math.sqrt(vol * float(np.sum(d**2)))
    return NormReport(sup=sup, l2=l2, l4=l4, grad_sup=grad_sup, grad_l2=grad_l2)


def pairing(f: Field, g: Field) -> complex:
    """Bilinear cell-volume weighted pairing <f, g> = vol * sum f(x) g(x).

    No implicit conjugation: conjugate explicitly at the call site.
    """
    _check_same_lattice(f, g)
    return complex(f.lattice.cell_volume * np.sum(f.flat * g.flat))


def dft(f: Field) -> Field:
    """Unitary discrete Fourier transform; output indexed by momentum modes."""
    n = f.lattice.nsites
    return Field(f.lattice, np.fft.fftn(f.values) / math.sqrt(n))


def idft(f: Field) -> Field:
    n = f.lattice.nsites
    return Field(f.lattice, np.fft.ifftn(f.values) * math.sqrt(n))


def momentum_grid(lattice: Lattice) -> np.ndarray:
    """Array of shape extents + (ndim,): momentum vector of each dft mode.

    k_nu runs over (2 pi / (extent_nu * spacing_nu)) Z reduced to the first
    Brillouin zone (-pi/spacing, pi/spacing].
    """
    axes = []
    for e, s in zip(lattice.extents, lattice.spacings):
        k = 2.0 * math.pi * np.fft.fftfreq(e, d=s)
        axes.append(k)
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack(grids, axis=-1)


# --- serialization -----------------------------------------------------------

def field_to_json(f: Field) -> str:
    rec = {
        "lattice": f.lattice.describe(),
        "sites": [[i, float(v.real), float(v.imag)] for i, v in enumerate(f.flat)],
    }
    return json.dumps(rec)


def field_from_json(text: str) -> Field:
    rec = json.loads(text)
    lat = Lattice(
        spatial_dim=rec["lattice"]["spatial_dim"],
        extents=tuple(rec["lattice"]["extents"]),
        spacings=tuple(rec["lattice"]["spacings"]),
        level=rec["lattice"]["level"],
        L=rec["lattice"]["L"],
        n=rec["lattice"]["n"],
    )
    vals = np.zeros(lat.nsites, dtype=complex)
    for i, re, im in rec["sites"]:
        vals[i] = re + 1j * im
    return Field(lat, vals.reshape(lat.extents))


def field_to_csv(f: Field) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["# lattice", json.dumps(f.lattice.describe())])
    w.writerow(["site", "re", "im"])
    for i, v in enumerate(f.flat):
        w.writerow([i, repr(float(v.real)), repr(float(v.imag))])
    return buf.getvalue()


def field_from_csv(text: str) -> Field:
    rows = list(csv.reader(io.StringIO(text)))
    lat_desc = json.loads(rows[0][1])
    lat = Lattice(
        spatial_dim=lat_desc["spatial_dim"],
        extents=tuple(lat_desc["extents"]),
        spacings=tuple(lat_desc["spacings"]),
        level=lat_desc["level"],
        L=lat_desc["L"],
        n=lat_desc["n"],
    )
    vals = np.zeros(lat.nsites, dtype=complex)
    for row in rows[2:]:
        if not row:
            continue
        i, re, im = int(row[0]), float(row[1]), float(row[2])
        vals[i] = re + 1j * im
    return Field(lat, vals.reshape(lat.extents))
