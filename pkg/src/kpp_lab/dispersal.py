"""Dispersal operators: Laplacian, kernel convolution minus identity, lattice neighbour sums.

Each operator acts on full-domain Fields (with boundary continuation) and, in
exponentially tilted form, on periodic cell fields.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .domain_grid import (
    LATTICE,
    Cell,
    CellField,
    Domain,
    Field,
    cell_offsets,
    flat_cell_index,
)
from .errors import ConfigurationError, PreconditionError

MAX_KERNEL_WRAPS = 64


def smooth_bump(s):
    """exp(-1/(1-s^2)) on |s| < 1, zero outside (unnormalized)."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


@dataclass(frozen=True)
class KernelSpec:
    """Radial kernel kappa supported on the ball of radius ``radius``.

    ``profile`` is "bump" (the smooth bump) or "table", in which case ``table``
    holds (radius, value) samples interpolated linearly and zero beyond the last radius.
    """

    radius: float = 1.0
    profile: str = "bump"
    table: tuple | None = None

    def __post_init__(self):
        if self.radius <= 0:
            raise ConfigurationError("kernel radius must be positive", "dispersal.kernel.radius")
        if self.profile not in ("bump", "table"):
            raise ConfigurationError(f"unknown kernel profile {self.profile!r}", "dispersal.kernel.profile")
        if self.profile == "table":
            if not self.table or len(self.table) < 2:
                raise ConfigurationError("tabulated kernel needs at least two rows", "dispersal.kernel.table")
            r = np.array([row[0] for row in self.table])
            k = np.array([row[1] for row in self.table])
            if np.any(np.diff(r) <= 0):
                raise ConfigurationError("kernel radii must increase", "dispersal.kernel.table")
            if np.any(k < 0):
                raise ConfigurationError("kernel values must be non-negative", "dispersal.kernel.table")

    @classmethod
    def from_csv(cls, path):
        rows = []
        with Path(path).open() as fh:
            for row in csv.reader(fh):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except ValueError:
                    continue  # header line
        if not rows:
            raise ConfigurationError(f"no kernel rows in {path}", "dispersal.kernel.table")
        return cls(radius=rows[-1][0], profile="table", table=tuple(rows))

    def density(self, r):
        """Unnormalized kappa as a function of |z|."""
        r = np.asarray(r, dtype=float)
        if self.profile == "bump":
            return smooth_bump(r / self.radius)
        rr = np.array([row[0] for row in self.table])
        kk = np.array([row[1] for row in self.table])
        return np.where(r <= rr[-1], np.interp(r, rr, kk), 0.0)

    def quadrature(self, spacing, dim):
        """Midpoint-rule offsets (integer multi-indices) and weights normalized to unit mass."""
        return _kernel_quadrature(self, float(spacing), int(dim))


@lru_cache(maxsize=64)
def _kernel_quadrature(kernel, spacing, dim):
    m = int(math.floor(kernel.radius / spacing + 1e-9))
    rng = np.arange(-m, m + 1)
    grids = np.meshgrid(*([rng] * dim), indexing="ij")
    offsets = np.stack([g.ravel() for g in grids], axis=-1)
    dist = np.sqrt(np.sum((offsets * spacing) ** 2, axis=-1))
    w = kernel.density(dist) * spacing**dim
    keep = w > 0
    offsets, w = offsets[keep], w[keep]
    if not np.any(offsets != 0):
        # only the zero offset survives: A would vanish identically
        raise ConfigurationError(
            f"kernel radius {kernel.radius} resolves no nonzero grid offsets at spacing {spacing}",
            "dispersal.kernel.radius",
        )
    w = w / w.sum()
    offsets.setflags(write=False)
    w.setflags(write=False)
    return offsets, w


def _symmetric_pairs(offsets, weights):
    """Split offsets into the zero offset and (z, -z) pairs when the weights allow it.

    Returns (pairs, singles): pairs are (z, w) standing for w*(S_z + S_{-z}),
    singles are (z, w) for unpaired offsets.
    """
    lookup = {tuple(z): w for z, w in zip(offsets.tolist(), weights)}
    pairs, singles, seen = [], [], set()
    for z in sorted(lookup):
        if z in seen or all(c == 0 for c in z):
            continue
        neg = tuple(-c for c in z)
        seen.update((z, neg))
        if neg in lookup and lookup[neg] == lookup[z]:
            pairs.append((z, lookup[z]))
        else:
            singles.append((z, lookup[z]))
            if neg in lookup:
                singles.append((neg, lookup[neg]))
    return pairs, singles


class _Shifter:
    """Shifted views of a field padded by boundary continuation."""

    def __init__(self, shape, width, mode):
        self.shape = shape
        self.width = width
        self.mode = mode

    def pad(self, u):
        return np.pad(u, self.width, mode=self.mode)

    def view(self, padded, z):
        w = self.width
        return padded[tuple(slice(w + zd, w + zd + n) for zd, n in zip(z, self.shape))]


@dataclass(frozen=True)
class RandomDispersal:
    """A u = Laplacian of u (continuum only)."""

    name = "random"

    def bind(self, domain: Domain) -> Callable[[np.ndarray], np.ndarray]:
        _require(domain, continuum=True, name="random dispersal")
        inv_h2 = 1.0 / domain.spacing**2
        dim = domain.dim
        shifter = _Shifter(domain.shape, 1, "reflect")
        units = [tuple(int(i == d) for i in range(dim)) for d in range(dim)]

        def apply(u):
            p = shifter.pad(u)
            out = np.zeros(domain.shape)
            for e in units:
                neg = tuple(-c for c in e)
                out += (shifter.view(p, e) + shifter.view(p, neg)) - 2.0 * u
            return out * inv_h2

        return apply

    def operator_bound(self, spacing, dim):
        return 4.0 * dim / spacing**2

    def cell_matrix(self, cell: Cell, tilt: "TiltSpec") -> np.ndarray:
        n = cell.size
        L = np.zeros((n, n))
        rows = np.arange(n)
        base = cell_offsets(cell)
        h = cell.spacing
        for d in range(cell.dim):
            e = np.zeros(cell.dim, dtype=int)
            e[d] = 1
            plus = flat_cell_index(cell, base + e)
            minus = flat_cell_index(cell, base - e)
            drift = tilt.mu * tilt.xi[d] / h  # -2 mu xi_d * (1/(2h))
            np.add.at(L, (rows, plus), 1.0 / h**2 - drift)
            np.add.at(L, (rows, minus), 1.0 / h**2 + drift)
            np.add.at(L, (rows, rows), -2.0 / h**2)
        L[rows, rows] += tilt.mu**2
        return L


@dataclass(frozen=True)
class NonlocalDispersal:
    """A u(x) = int kappa(y - x) u(y) dy - u(x), midpoint quadrature on the grid."""

    kernel: KernelSpec = field(default_factory=KernelSpec)
    name = "nonlocal"

    def bind(self, domain: Domain):
        _require(domain, continuum=True, name="nonlocal dispersal")
        offsets, weights = self.kernel.quadrature(domain.spacing, domain.dim)
        pairs, singles = _symmetric_pairs(offsets, weights)
        width = int(np.abs(offsets).max()) if offsets.size else 0
        shifter = _Shifter(domain.shape, width, "edge")

        def apply(u):
            p = shifter.pad(u)
            out = np.zeros(domain.shape)
            # difference form keeps constants annihilated exactly
            for z, w in pairs:
                neg = tuple(-c for c in z)
                out += w * ((shifter.view(p, z) - u) + (shifter.view(p, neg) - u))
            for z, w in singles:
                out += w * (shifter.view(p, z) - u)
            return out

        return apply

    def operator_bound(self, spacing, dim):
        return 2.0

    def cell_matrix(self, cell: Cell, tilt: "TiltSpec") -> np.ndarray:
        offsets, weights = self.kernel.quadrature(cell.spacing, cell.dim)
        extent = min(cell.shape)
        if np.abs(offsets).max() > MAX_KERNEL_WRAPS * extent:
            raise PreconditionError(
                f"kernel support spans more than {MAX_KERNEL_WRAPS} cell periods; "
                "periodized kernel not representable"
            )
        n = cell.size
        L = np.zeros((n, n))
        rows = np.arange(n)
        base = cell_offsets(cell)
        s = (offsets * cell.spacing) @ np.asarray(tilt.xi)
        tilted = weights * np.exp(-tilt.mu * s)
        for z, w in zip(offsets, tilted):
            np.add.at(L, (rows, flat_cell_index(cell, base + z)), w)
        L[rows, rows] -= 1.0
        return L

    def exponential_moment(self, spacing, dim, xi, mu):
        """Discrete sum_z w_z exp(-mu z.xi): the tilted operator's action on constants, plus one."""
        offsets, weights = self.kernel.quadrature(spacing, dim)
        s = (offsets * spacing) @ np.asarray(xi, dtype=float)
        return float(np.sum(weights * np.exp(-mu * s)))


@dataclass(frozen=True)
class DiscreteDispersal:
    """A u(j) = sum_k a_k (u(j+k) - u(j)) over unit neighbours k (lattice only).

    ``rates`` maps each unit vector (tuple of ints) to a positive rate.
    """

    rates: Mapping
    name = "discrete"

    def __post_init__(self):
        rates = {tuple(int(c) for c in k): float(a) for k, a in dict(self.rates).items()}
        dims = {len(k) for k in rates}
        if len(dims) != 1:
            raise ConfigurationError("neighbour vectors must share one dimension", "dispersal.rates")
        dim = dims.pop()
        for k, a in rates.items():
            if sum(abs(c) for c in k) != 1:
                raise ConfigurationError(f"neighbour {k} is not a unit lattice vector", "dispersal.rates")
            if not a > 0:
                raise ConfigurationError(f"rate for neighbour {k} must be > 0, got {a}", "dispersal.rates")
        missing = [k for k in unit_vectors(dim) if k not in rates]
        if missing:
            raise ConfigurationError(f"missing rates for neighbours {missing}", "dispersal.rates")
        object.__setattr__(self, "rates", dict(sorted(rates.items())))

    @classmethod
    def symmetric(cls, dim=1, rate=1.0):
        return cls({k: rate for k in unit_vectors(dim)})

    @property
    def dim(self):
        return len(next(iter(self.rates)))

    def bind(self, domain: Domain):
        _require(domain, continuum=False, name="discrete dispersal")
        if domain.dim != self.dim:
            raise PreconditionError(f"rates are {self.dim}-dimensional, domain is {domain.dim}-dimensional")
        shifter = _Shifter(domain.shape, 1, "edge")
        axes = []
        for d in range(self.dim):
            e = tuple(int(i == d) for i in range(self.dim))
            neg = tuple(-c for c in e)
            axes.append((e, self.rates[e], neg, self.rates[neg]))

        def apply(u):
            p = shifter.pad(u)
            out = np.zeros(domain.shape)
            for e, ap, neg, am in axes:
                out += ap * (shifter.view(p, e) - u) + am * (shifter.view(p, neg) - u)
            return out

        return apply

    def operator_bound(self, spacing, dim):
        return 2.0 * sum(self.rates.values())

    def cell_matrix(self, cell: Cell, tilt: "TiltSpec") -> np.ndarray:
        n = cell.size
        L = np.zeros((n, n))
        rows = np.arange(n)
        base = cell_offsets(cell)
        for k, a in self.rates.items():
            kv = np.array(k)
            np.add.at(L, (rows, flat_cell_index(cell, base + kv)), a * math.exp(-tilt.mu * float(kv @ tilt.xi)))
            L[rows, rows] -= a
        return L

    def symbol(self, xi, mu):
        """sum_k a_k (exp(-mu k.xi) - 1): exact tilted action on constants."""
        xi = np.asarray(xi, dtype=float)
        return sum(a * (math.exp(-mu * float(np.dot(k, xi))) - 1.0) for k, a in self.rates.items())


DispersalSpec = RandomDispersal | NonlocalDispersal | DiscreteDispersal


def unit_vectors(dim):
    out = []
    for d in range(dim):
        for s in (1, -1):
            out.append(tuple(s if i == d else 0 for i in range(dim)))
    return out


def _require(domain, continuum, name):
    if continuum and domain.kind == LATTICE:
        raise PreconditionError(f"{name} needs a continuum domain, got a lattice")
    if not continuum and domain.kind != LATTICE:
        raise PreconditionError(f"{name} needs a lattice domain, got {domain.kind}")


@dataclass(frozen=True)
class TiltSpec:
    """Direction xi on the unit sphere and decay exponent mu >= 0."""

    xi: tuple
    mu: float = 0.0

    def __post_init__(self):
        xi = tuple(float(c) for c in np.atleast_1d(self.xi))
        if abs(math.sqrt(sum(c * c for c in xi)) - 1.0) > 1e-12:
            raise ConfigurationError(f"direction {xi} is not a unit vector", "experiment.xi")
        if not self.mu >= 0:
            raise PreconditionError(f"tilt exponent mu must be >= 0, got {self.mu}")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "mu", float(self.mu))

    @property
    def dim(self):
        return len(self.xi)


def unit_direction(v):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return tuple(v / np.linalg.norm(v))


def apply_dispersal(spec, u: Field) -> Field:
    """A u on the truncated domain, returned as a Field at the same time stamp."""
    return Field(u.domain, spec.bind(u.domain)(u.values), u.t)


def tilted_matrix(spec, tilt: TiltSpec, cell: Cell) -> np.ndarray:
    """Dense matrix of the tilted operator acting on p-periodic cell fields."""
    if tilt.dim != cell.dim:
        raise PreconditionError(f"tilt is {tilt.dim}-dimensional, cell is {cell.dim}-dimensional")
    _require_cell(spec, cell)
    return spec.cell_matrix(cell, tilt)


def _require_cell(spec, cell):
    if isinstance(spec, DiscreteDispersal):
        if cell.kind != LATTICE:
            raise PreconditionError("discrete dispersal needs a lattice cell")
    elif cell.kind == LATTICE:
        raise PreconditionError(f"{spec.name} dispersal needs a continuum cell")


def apply_tilted(spec, tilt: TiltSpec, v: CellField) -> CellField:
    L = tilted_matrix(spec, tilt, v.cell)
    return CellField(v.cell, (L @ v.values.ravel()).reshape(v.cell.shape), v.t)
