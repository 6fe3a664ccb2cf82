"""Truncated habitats (continuum boxes and lattice windows), periodic cells, sampled fields."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from .errors import ConfigurationError, PreconditionError

CONTINUUM = "continuum"
LATTICE = "lattice"

_ALIGN_RTOL = 1e-9


def _as_int_ratio(num, den, what, path):
    ratio = num / den
    k = int(round(ratio))
    if k < 1 or abs(k * den - num) > _ALIGN_RTOL * max(abs(num), 1.0):
        raise ConfigurationError(f"{what} (ratio {ratio:.6g} is not a positive integer)", path)
    return k


@dataclass(frozen=True)
class Cell:
    """One periodic cell [0, p_1) x ... sampled on the grid."""

    kind: str
    spacing: float
    periods: tuple
    shape: tuple

    @property
    def dim(self):
        return len(self.shape)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @cached_property
    def coords(self):
        axes = [np.arange(n) * self.spacing for n in self.shape]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)


@dataclass(frozen=True)
class Domain:
    """Box [-L, L]^N sampled with spacing h (h = 1 on lattices); the origin is a grid point.

    ``buffer`` is the width of the boundary strip whose values theorem checks never read.
    """

    kind: str
    dim: int
    half_extent: float
    spacing: float
    periods: tuple
    buffer: float = 0.0

    @property
    def is_lattice(self):
        return self.kind == LATTICE

    @property
    def half_points(self):
        return int(round(self.half_extent / self.spacing))

    @property
    def shape(self):
        return (2 * self.half_points + 1,) * self.dim

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def origin_index(self):
        return (self.half_points,) * self.dim

    @property
    def buffer_points(self):
        return int(math.ceil(self.buffer / self.spacing - _ALIGN_RTOL))

    @property
    def interior_extent(self):
        """Largest |x_i| still outside the exclusion buffer."""
        return (self.half_points - self.buffer_points) * self.spacing

    @cached_property
    def cell(self):
        shape = tuple(int(round(p / self.spacing)) for p in self.periods)
        return Cell(self.kind, self.spacing, tuple(self.periods), shape)

    @cached_property
    def axes(self):
        n = self.half_points
        return [np.arange(-n, n + 1) * self.spacing for _ in range(self.dim)]

    @cached_property
    def coords(self):
        """Array of shape ``shape + (dim,)`` with the position of each grid point."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    @cached_property
    def radius(self):
        return np.sqrt(np.sum(self.coords**2, axis=-1))

    @cached_property
    def interior_mask(self):
        """Grid points at distance >= buffer from every face of the box."""
        b = self.buffer_points
        mask = np.zeros(self.shape, dtype=bool)
        sl = tuple(slice(b, n - b) for n in self.shape)
        mask[sl] = True
        return mask

    def descriptor(self):
        p = ":".join(_fmt(x) for x in self.periods)
        return (
            f"{self.kind};dim={self.dim};L={_fmt(self.half_extent)};"
            f"h={_fmt(self.spacing)};p={p};B={_fmt(self.buffer)}"
        )

    @classmethod
    def from_descriptor(cls, text):
        kind, *items = text.split(";")
        kv = dict(item.split("=", 1) for item in items)
        periods = [float(x) for x in kv["p"].split(":")]
        spec = dict(kind=kind, dim=int(kv["dim"]), periods=periods, buffer=float(kv["B"]))
        if kind == LATTICE:
            spec["R"] = float(kv["L"])
        else:
            spec["L"] = float(kv["L"])
            spec["h"] = float(kv["h"])
        return build_domain(spec)


def _fmt(x):
    return repr(float(x)) if not float(x).is_integer() else str(int(x))


def build_domain(spec: dict) -> Domain:
    """Validate domain parameters and return a Domain.

    ``spec`` keys: ``kind`` ("continuum" | "lattice"), ``dim``, ``L`` and ``h``
    (continuum) or ``R`` (lattice), ``periods`` (scalar or one per axis) and an
    optional ``buffer`` (defaults to a tenth of the half extent).
    """
    kind = spec.get("kind", CONTINUUM)
    if kind not in (CONTINUUM, LATTICE):
        raise ConfigurationError(f"unknown domain kind {kind!r}", "domain.kind")
    dim = int(spec.get("dim", 1))
    if dim not in (1, 2):
        raise ConfigurationError(f"dim must be 1 or 2, got {dim}", "domain.dim")

    periods = spec.get("periods", spec.get("p", 1))
    if np.isscalar(periods):
        periods = [periods] * dim
    periods = [float(p) for p in periods]
    if len(periods) != dim:
        raise ConfigurationError(f"expected {dim} periods, got {len(periods)}", "domain.periods")
    if any(p <= 0 for p in periods):
        raise ConfigurationError("periods must be positive", "domain.periods")

    if kind == LATTICE:
        R = spec.get("R", spec.get("L"))
        if R is None or float(R) <= 0 or not float(R).is_integer():
            raise ConfigurationError(f"index radius must be a positive integer, got {R!r}", "domain.R")
        half, h = float(R), 1.0
        for i, p in enumerate(periods):
            if not p.is_integer():
                raise ConfigurationError(f"lattice period on axis {i} must be an integer, got {p}", "domain.periods")
            _as_int_ratio(half, p, f"R={_fmt(half)} is not a multiple of period {_fmt(p)} on axis {i}", "domain.R")
    else:
        half = float(spec.get("L", 0))
        h = float(spec.get("h", 0))
        if h <= 0:
            raise ConfigurationError(f"spacing must be positive, got {h}", "domain.h")
        if half <= 0:
            raise ConfigurationError(f"half extent must be positive, got {half}", "domain.L")
        for i, p in enumerate(periods):
            _as_int_ratio(p, h, f"period {_fmt(p)} on axis {i} is not an integer multiple of h={_fmt(h)}", "domain.h")
            _as_int_ratio(half, p, f"L={_fmt(half)} is not an integer multiple of period {_fmt(p)} on axis {i}", "domain.L")

    buffer = float(spec.get("buffer", 0.1 * half))
    if buffer < 0 or buffer >= half:
        raise ConfigurationError(f"buffer must lie in [0, {half}), got {buffer}", "domain.buffer")
    return Domain(kind, dim, half, h, tuple(periods), buffer)


@dataclass(frozen=True, eq=False)
class Field:
    """Grid samples of u(t, .) on a Domain. Immutable once built.

    ``positive_floor`` tags the field as strictly positive: construction fails
    unless every value is at least that floor.
    """

    domain: Domain
    values: np.ndarray
    t: float = 0.0
    positive_floor: float | None = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(self.domain.shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        if self.positive_floor is not None:
            if self.positive_floor <= 0:
                raise ValueError("positive_floor must be > 0")
            if vals.min() < self.positive_floor:
                raise ValueError(
                    f"field tagged strictly positive has min {vals.min():.3g} < {self.positive_floor:.3g}"
                )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, domain, c, t=0.0):
        return cls(domain, np.full(domain.shape, float(c)), t)

    @classmethod
    def from_function(cls, domain, fn, t=0.0):
        """Sample ``fn(coords)`` where coords has shape ``domain.shape + (dim,)``."""
        return cls(domain, fn(domain.coords), t)

    def with_values(self, values, t=None):
        return Field(self.domain, values, self.t if t is None else t)

    def min(self):
        return float(self.values.min())

    def max(self):
        return float(self.values.max())

    def sup_norm(self):
        return float(np.abs(self.values).max())


@dataclass(frozen=True, eq=False)
class CellField:
    """Samples of a p-periodic function on one cell."""

    cell: Cell
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.size != self.cell.size:
            raise ValueError(f"cell field needs {self.cell.size} values, got {vals.size}")
        vals = vals.reshape(self.cell.shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError("cell values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, cell, c, t=0.0):
        return cls(cell, np.full(cell.shape, float(c)), t)


def _check_aligned(cell, domain):
    if cell != domain.cell:
        raise PreconditionError(
            f"cell {cell.shape} (spacing {cell.spacing}) is not aligned with domain cell "
            f"{domain.cell.shape} (spacing {domain.spacing})"
        )


def extend_periodic(c: CellField, d: Domain) -> Field:
    """Tile a cell over the domain, anchoring cell index 0 at the origin."""
    _check_aligned(c.cell, d)
    n = d.half_points
    idx = [np.mod(np.arange(-n, n + 1), m) for m in c.cell.shape]
    return Field(d, c.values[np.ix_(*idx)], c.t)


def restrict_to_cell(u: Field) -> CellField:
    """Copy the cell whose corner sits at the origin."""
    d = u.domain
    o = d.half_points
    sl = tuple(slice(o, o + m) for m in d.cell.shape)
    return CellField(d.cell, u.values[sl], u.t)


Region = Union[Callable[[np.ndarray], np.ndarray], np.ndarray]


def region_mask(domain: Domain, region: Region | None) -> np.ndarray:
    if region is None:
        return np.ones(domain.shape, dtype=bool)
    if callable(region):
        mask = np.asarray(region(domain.coords), dtype=bool)
    else:
        mask = np.asarray(region, dtype=bool)
    return np.broadcast_to(mask, domain.shape)


def outside_radius(r: float) -> Callable[[np.ndarray], np.ndarray]:
    """Predicate selecting points with ||x|| >= r."""
    return lambda coords: np.sqrt(np.sum(coords**2, axis=-1)) >= r - 1e-12


def sup_norm_gap(u: Field, v: Field, region: Region | None = None) -> float:
    """max |u - v| over the grid points selected by ``region``."""
    if u.domain != v.domain:
        raise PreconditionError("fields live on different domains")
    mask = region_mask(u.domain, region)
    if not mask.any():
        raise PreconditionError("empty region: sup-norm gap would be vacuous")
    return float(np.abs(u.values - v.values)[mask].max())


def write_field_csv(u: Field, path) -> Path:
    path = Path(path)
    coords = u.domain.coords.reshape(-1, u.domain.dim)
    with path.open("w", newline="") as fh:
        fh.write(f"# domain={u.domain.descriptor()} t={float(u.t)!r}\n")
        w = csv.writer(fh)
        for x, val in zip(coords, u.values.ravel()):
            w.writerow([repr(float(c)) for c in x] + [repr(float(val))])
    return path


def read_field_csv(path) -> Field:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
        if not header.startswith("# domain="):
            raise ValueError(f"{path}: missing '# domain=' header")
        desc, t = header[len("# domain="):].rsplit(" t=", 1)
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    domain = Domain.from_descriptor(desc)
    return Field(domain, rows[:, -1], float(t))


def cell_offsets(cell: Cell) -> np.ndarray:
    """Integer multi-indices of the cell points in C order, shape (size, dim)."""
    grids = np.meshgrid(*[np.arange(m) for m in cell.shape], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def flat_cell_index(cell: Cell, multi: np.ndarray) -> np.ndarray:
    """Flatten (possibly out-of-range) integer multi-indices with periodic wrap."""
    multi = np.mod(multi, np.asarray(cell.shape))
    return np.ravel_multi_index(tuple(multi.T), cell.shape)


def as_points(x: Sequence[float] | float, dim: int) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.shape[-1] != dim:
        arr = arr.reshape(-1, dim)
    return arr
