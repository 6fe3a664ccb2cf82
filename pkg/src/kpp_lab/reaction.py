"""KPP reaction terms f(t, x, u) = f0(t, x, u) + localized perturbation, with sampled hypothesis checks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .domain_grid import Cell, Domain
from .errors import ConfigurationError, HypothesisViolation

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TrigTerm:
    """amplitude * trig(2 pi (time_mode t / T + sum_i space_modes[i] x_i / p_i))."""

    amplitude: float
    kind: str = "cos"
    time_mode: int = 0
    space_modes: tuple = ()

    def __post_init__(self):
        if self.kind not in ("sin", "cos"):
            raise ConfigurationError(f"trig kind must be 'sin' or 'cos', got {self.kind!r}", "reaction.r0.terms")
        object.__setattr__(self, "space_modes", tuple(int(m) for m in self.space_modes))

    def spatial_phase(self, coords, periods):
        if not any(self.space_modes):
            return None
        phase = np.zeros(coords.shape[:-1])
        for i, m in enumerate(self.space_modes):
            if m:
                phase = phase + m * coords[..., i] / periods[i]
        return TWO_PI * phase

    def evaluate(self, t, coords, T, periods):
        phase = TWO_PI * self.time_mode * _phase(t, T)
        sp = self.spatial_phase(coords, periods)
        if sp is not None:
            phase = phase + sp
        fn = np.sin if self.kind == "sin" else np.cos
        return self.amplitude * fn(phase)


def _phase(t, T):
    """t/T reduced to [0, 1)."""
    return math.fmod(t, T) / T if t >= 0 else 1.0 + math.fmod(t, T) / T


@dataclass(frozen=True, eq=False)
class CoefficientTable:
    """Cell x time-slab samples; linear interpolation in time, periodic wrap."""

    times: tuple
    values: np.ndarray
    spacing: float

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape[0] != len(self.times):
            raise ConfigurationError("table needs one row per time slab", "reaction.r0.table")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ConfigurationError("table times must increase", "reaction.r0.table")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))

    @classmethod
    def from_csv(cls, path, spacing, cell_shape):
        """Rows: slab time then the flattened cell values (C order)."""
        rows = []
        with Path(path).open() as fh:
            for row in csv.reader(fh):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    rows.append([float(c) for c in row])
                except ValueError:
                    continue
        arr = np.array(rows)
        n = int(np.prod(cell_shape))
        if arr.ndim != 2 or arr.shape[1] != n + 1:
            raise ConfigurationError(
                f"table {path} must have 1 + {n} columns (time, cell values)", "reaction.r0.table"
            )
        return cls(tuple(arr[:, 0]), arr[:, 1:].reshape((-1, *cell_shape)), spacing)

    def _cell_index(self, coords):
        shape = self.values.shape[1:]
        idx = np.rint(coords / self.spacing).astype(int)
        return tuple(np.mod(idx[..., i], shape[i]) for i in range(len(shape)))

    def evaluate(self, t, coords, T):
        idx = self._cell_index(coords)
        times = np.asarray(self.times)
        if len(times) == 1:
            return self.values[0][idx]
        s = _phase(t, T) * T
        k = int(np.searchsorted(times, s, side="right")) - 1
        if k < 0:
            k0, k1, t0, t1 = len(times) - 1, 0, times[-1] - T, times[0]
        elif k == len(times) - 1:
            k0, k1, t0, t1 = k, 0, times[k], times[0] + T
        else:
            k0, k1, t0, t1 = k, k + 1, times[k], times[k + 1]
        theta = (s - t0) / (t1 - t0)
        return (1.0 - theta) * self.values[k0][idx] + theta * self.values[k1][idx]


@dataclass(frozen=True)
class PeriodicCoefficient:
    """Time-T, space-p periodic coefficient: constant + trig terms, or a table."""

    constant: float = 0.0
    terms: tuple = ()
    table: CoefficientTable | None = None

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    @classmethod
    def const(cls, c):
        return cls(float(c))

    @property
    def autonomous(self):
        if self.table is not None:
            return len(self.table.times) == 1
        return all(t.time_mode == 0 for t in self.terms)

    @property
    def homogeneous(self):
        if self.table is not None:
            flat = self.table.values.reshape(len(self.table.times), -1)
            return bool(np.all(flat == flat[:, :1]))
        return all(not any(t.space_modes) for t in self.terms)

    def upper(self):
        if self.table is not None:
            return float(self.table.values.max())
        return self.constant + sum(abs(t.amplitude) for t in self.terms)

    def lower(self):
        if self.table is not None:
            return float(self.table.values.min())
        return self.constant - sum(abs(t.amplitude) for t in self.terms)

    def evaluate(self, t, coords, T, periods):
        coords = np.asarray(coords, dtype=float)
        if self.table is not None:
            return self.table.evaluate(t, coords, T)
        out = np.full(coords.shape[:-1], self.constant)
        for term in self.terms:
            out = out + term.evaluate(t, coords, T, periods)
        return out

    def sampler(self, coords, T, periods) -> Callable[[float], np.ndarray]:
        """Return t -> values at ``coords`` with the time-independent part precomputed."""
        coords = np.asarray(coords, dtype=float)
        if self.table is not None:
            if self.autonomous:
                fixed = self.table.evaluate(0.0, coords, T)
                return lambda t: fixed
            return lambda t: self.table.evaluate(t, coords, T)
        static = np.full(coords.shape[:-1], self.constant)
        dynamic = []
        for term in self.terms:
            if term.time_mode == 0:
                static = static + term.evaluate(0.0, coords, T, periods)
            else:
                dynamic.append((term, term.spatial_phase(coords, periods)))
        if not dynamic:
            return lambda t: static

        def sample(t):
            out = static
            for term, sp in dynamic:
                phase = TWO_PI * term.time_mode * _phase(t, T)
                fn = np.sin if term.kind == "sin" else np.cos
                out = out + term.amplitude * fn(phase if sp is None else phase + sp)
            return out

        return sample


@dataclass(frozen=True)
class LocalizedPerturbation:
    """delta_r(x): a radial perturbation decaying as ||x|| -> infinity.

    Shapes: "none", "bump" (smooth, peak ``amplitude``, support ``radius``),
    "gaussian" (width ``radius``), "exponential" (rate ``rate``), "table"
    (radial samples, zero beyond the last radius) and "constant" (does not
    decay; only useful as a negative control for the decay hypothesis).
    """

    shape: str = "none"
    amplitude: float = 0.0
    radius: float = 1.0
    rate: float = 1.0
    table: tuple | None = None

    SHAPES = ("none", "bump", "gaussian", "exponential", "table", "constant")

    def __post_init__(self):
        if self.shape not in self.SHAPES:
            raise ConfigurationError(f"unknown perturbation shape {self.shape!r}", "reaction.dr.shape")
        if self.shape in ("bump", "gaussian") and self.radius <= 0:
            raise ConfigurationError("perturbation radius must be positive", "reaction.dr.radius")
        if self.shape == "exponential" and self.rate <= 0:
            raise ConfigurationError("perturbation rate must be positive", "reaction.dr.rate")
        if self.shape == "table" and not self.table:
            raise ConfigurationError("tabulated perturbation needs rows", "reaction.dr.table")

    def evaluate(self, coords):
        coords = np.asarray(coords, dtype=float)
        r = np.sqrt(np.sum(coords**2, axis=-1))
        a = self.amplitude
        if self.shape == "none" or a == 0.0:
            return np.zeros_like(r)
        if self.shape == "bump":
            s = r / self.radius
            out = np.zeros_like(r)
            inside = s < 1.0
            out[inside] = a * np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
            return out
        if self.shape == "gaussian":
            return a * np.exp(-((r / self.radius) ** 2))
        if self.shape == "exponential":
            return a * np.exp(-self.rate * r)
        if self.shape == "constant":
            return np.full_like(r, a)
        rr = np.array([row[0] for row in self.table])
        vv = np.array([row[1] for row in self.table])
        return a * np.where(r <= rr[-1], np.interp(r, rr, vv), 0.0)

    def sup(self):
        if self.shape == "none":
            return 0.0
        if self.shape == "table":
            vv = [row[1] * self.amplitude for row in self.table]
            return max(0.0, max(vv))
        return max(0.0, self.amplitude)

    def inf(self):
        if self.shape == "none":
            return 0.0
        if self.shape == "table":
            vv = [row[1] * self.amplitude for row in self.table]
            return min(0.0, min(vv))
        return min(0.0, self.amplitude)

    @property
    def vanishes(self):
        return self.shape == "none" or self.amplitude == 0.0


class BoundReaction:
    """f and f0 evaluated on a fixed set of points, vectorized in u."""

    def __init__(self, f, f0, df_du=None):
        self.f = f
        self.f0 = f0
        self.df_du = df_du


@dataclass(frozen=True)
class ParametricKPP:
    """f(t, x, u) = r0(t, x) + dr(x) - b(t, x) u with b bounded below by b_min > 0."""

    r0: PeriodicCoefficient
    b: PeriodicCoefficient = field(default_factory=lambda: PeriodicCoefficient(1.0))
    dr: LocalizedPerturbation = field(default_factory=LocalizedPerturbation)
    T: float = 1.0
    periods: tuple = (1.0,)
    M0_override: float | None = None

    def __post_init__(self):
        if not isinstance(self.b, PeriodicCoefficient):
            object.__setattr__(self, "b", PeriodicCoefficient(float(self.b)))
        if not isinstance(self.r0, PeriodicCoefficient):
            object.__setattr__(self, "r0", PeriodicCoefficient(float(self.r0)))
        object.__setattr__(self, "periods", tuple(float(p) for p in np.atleast_1d(self.periods)))
        if self.T <= 0:
            raise ConfigurationError("temporal period T must be positive", "reaction.T")
        if not self.b_min > 0:
            raise HypothesisViolation(
                f"(H0) needs d f/du < 0, i.e. b_min > 0; got b_min = {self.b_min:.6g}", "reaction.b"
            )

    @property
    def b_min(self):
        return self.b.lower()

    @property
    def b_max(self):
        return self.b.upper()

    @property
    def M0(self):
        if self.M0_override is not None:
            return float(self.M0_override)
        return max(self.r0.upper() + self.dr.sup(), 0.0) / self.b_min + 1.0

    @property
    def autonomous(self):
        return self.r0.autonomous and self.b.autonomous

    def rate_bound(self):
        """max|f| on [0, M0] plus M0 * max b, the reaction part of the explicit step bound."""
        r_hi = self.r0.upper() + self.dr.sup()
        r_lo = self.r0.lower() + self.dr.inf()
        max_abs_f = max(abs(r_hi), abs(r_lo), abs(r_lo - self.b_max * self.M0))
        return max_abs_f + self.M0 * self.b_max

    def eval_f(self, t, x, u):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        r = self.r0.evaluate(t, x, self.T, self.periods) + self.dr.evaluate(x)
        return r - self.b.evaluate(t, x, self.T, self.periods) * u

    def eval_f0(self, t, x, u):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self.r0.evaluate(t, x, self.T, self.periods) - self.b.evaluate(t, x, self.T, self.periods) * u

    def eval_df_du(self, t, x, u):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return -self.b.evaluate(t, x, self.T, self.periods) * np.ones_like(np.asarray(u, dtype=float))

    def bind(self, coords) -> BoundReaction:
        coords = np.asarray(coords, dtype=float)
        r0 = self.r0.sampler(coords, self.T, self.periods)
        b = self.b.sampler(coords, self.T, self.periods)
        dr = self.dr.evaluate(coords)
        if self.r0.autonomous:
            r_fixed = r0(0.0) + dr

            def f(t, u):
                return r_fixed - b(t) * u
        else:
            def f(t, u):
                return (r0(t) + dr) - b(t) * u

        def f0(t, u):
            return r0(t) - b(t) * u

        def df_du(t, u):
            return -b(t) * np.ones_like(u)

        return BoundReaction(f, f0, df_du)

    def without_perturbation(self):
        return ParametricKPP(self.r0, self.b, LocalizedPerturbation(), self.T, self.periods, self.M0_override)


@dataclass(frozen=True)
class CustomReaction:
    """User-supplied f(t, x, u) and reference f0; both vectorized over x of shape (..., dim).

    M0 must be declared. Hypotheses are only sample-checked.
    """

    f: Callable
    f0: Callable
    M0: float
    T: float = 1.0
    periods: tuple = (1.0,)
    df_du: Callable | None = None
    autonomous: bool = False

    def eval_f(self, t, x, u):
        return self.f(t, np.atleast_1d(np.asarray(x, dtype=float)), u)

    def eval_f0(self, t, x, u):
        return self.f0(t, np.atleast_1d(np.asarray(x, dtype=float)), u)

    def eval_df_du(self, t, x, u):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.df_du is not None:
            return self.df_du(t, x, u)
        step = 1e-5
        return (self.f(t, x, u + step) - self.f(t, x, u - step)) / (2 * step)

    def rate_bound(self, n_samples=33):
        us = np.linspace(0.0, self.M0, n_samples)
        ts = np.linspace(0.0, self.T, 9)
        x0 = np.zeros((1, len(self.periods)))
        worst = max(float(np.max(np.abs(self.f(t, x0, u)))) for t in ts for u in us)
        slope = max(float(np.max(np.abs(self.eval_df_du(t, x0, u)))) for t in ts for u in us)
        return worst + self.M0 * slope

    def bind(self, coords) -> BoundReaction:
        coords = np.asarray(coords, dtype=float)
        return BoundReaction(
            lambda t, u: self.f(t, coords, u),
            lambda t, u: self.f0(t, coords, u),
            (lambda t, u: self.df_du(t, coords, u)) if self.df_du else None,
        )


ReactionSpec = ParametricKPP | CustomReaction


def fisher(T=1.0, periods=(1.0,), dr=None):
    """f(u) = 1 - u."""
    return ParametricKPP(PeriodicCoefficient(1.0), PeriodicCoefficient(1.0), dr or LocalizedPerturbation(), T, periods)


def eval_f(spec, t, x, u):
    return spec.eval_f(t, x, u)


@dataclass(frozen=True)
class CellCoefficient:
    """Time-periodic coefficient a(t, x) on one periodic cell."""

    cell: Cell
    T: float
    fn: Callable[[float], np.ndarray]
    autonomous: bool = False

    def __call__(self, t):
        return np.broadcast_to(np.asarray(self.fn(t), dtype=float), self.cell.shape)

    @classmethod
    def constant(cls, cell, a, T=1.0):
        vals = np.full(cell.shape, float(a))
        return cls(cell, T, lambda t: vals, True)

    @classmethod
    def from_array(cls, cell, values, T=1.0):
        vals = np.array(values, dtype=float).reshape(cell.shape)
        return cls(cell, T, lambda t: vals, True)

    def shifted(self, c):
        return CellCoefficient(self.cell, self.T, lambda t: self(t) + c, self.autonomous)

    def bounds(self, n_t=64):
        ts = [0.0] if self.autonomous else np.linspace(0.0, self.T, n_t, endpoint=False)
        vals = np.array([self(t) for t in ts])
        return float(vals.min()), float(vals.max())


def linearize_at_zero(spec, domain: Domain) -> CellCoefficient:
    """a0(t, x) = f0(t, x, 0) on the domain's periodic cell."""
    cell = domain.cell
    coords = cell.coords
    if isinstance(spec, ParametricKPP):
        r0 = spec.r0.sampler(coords, spec.T, spec.periods)
        return CellCoefficient(cell, spec.T, r0, spec.r0.autonomous)
    zero = np.zeros(cell.shape)
    return CellCoefficient(cell, spec.T, lambda t: spec.f0(t, coords, zero), spec.autonomous)


@dataclass
class HypothesisReport:
    """Sampled check of one hypothesis; each clause records violations and the worst margin."""

    hypothesis: str
    clauses: dict
    sampling: str
    notes: list = field(default_factory=list)
    gaps: list | None = None

    @property
    def passed(self):
        return all(c["violations"] == 0 for c in self.clauses.values())

    def to_dict(self):
        out = {
            "hypothesis": self.hypothesis,
            "pass": self.passed,
            "clauses": self.clauses,
            "sampling": self.sampling,
            "notes": list(self.notes),
        }
        if self.gaps is not None:
            out["gaps"] = self.gaps
        return out


def _sample_points(domain: Domain, max_points):
    pts = domain.coords.reshape(-1, domain.dim)
    if len(pts) > max_points:
        stride = int(math.ceil(len(pts) / max_points))
        pts = pts[::stride]
    return pts


def check_H0(spec, domain: Domain, n_t=16, n_u=41, margin=1.0, max_points=4000) -> HypothesisReport:
    """Sample f < 0 for u >= M0 and df/du < 0 for u >= 0 over [0, T] x domain x [0, M0 + margin]."""
    pts = _sample_points(domain, max_points)
    ts = np.linspace(0.0, spec.T, n_t, endpoint=False)
    M0 = spec.M0
    u_hi = np.linspace(M0, M0 + margin, n_u)
    u_all = np.linspace(0.0, M0 + margin, n_u)

    worst_f, viol_f = -np.inf, 0
    worst_fu, viol_fu = -np.inf, 0
    worst_per, viol_per = 0.0, 0
    for t in ts:
        for u in u_hi:
            fv = np.asarray(spec.eval_f(t, pts, u))
            worst_f = max(worst_f, float(fv.max()))
            viol_f += int(np.sum(fv >= 0))
        for u in u_all:
            fu = np.asarray(spec.eval_df_du(t, pts, u))
            worst_fu = max(worst_fu, float(fu.max()))
            viol_fu += int(np.sum(fu >= 0))
        for u in (0.0, M0):
            d = np.abs(np.asarray(spec.eval_f(t + spec.T, pts, u)) - np.asarray(spec.eval_f(t, pts, u)))
            worst_per = max(worst_per, float(d.max()))
            viol_per += int(np.sum(d > 1e-9))

    notes = []
    estimated = isinstance(spec, CustomReaction) and spec.df_du is None
    if estimated:
        notes.append("df/du estimated by central differences with step 1e-5")
    if isinstance(spec, CustomReaction):
        notes.append("uniform continuity of f, f_t, f_u: declared, not checked")
    clauses = {
        "f_negative_above_M0": {"violations": viol_f, "worst_margin": worst_f, "M0": M0},
        "f_u_negative": {"violations": viol_fu, "worst_margin": worst_fu, "estimated": estimated},
        "time_periodic": {"violations": viol_per, "worst_margin": worst_per},
    }
    sampling = f"{n_t} times x {len(pts)} points x {n_u} u-levels on [0, {M0 + margin:.6g}]"
    return HypothesisReport("H0", clauses, sampling, notes)


def check_H1(spec, domain: Domain, radii: Sequence[float], tol=1e-3, n_t=8, n_u=11) -> HypothesisReport:
    """sup over ||x|| >= r, t in [0, T], u in [0, M0 + 1] of |f - f0| for each radius."""
    radii = [float(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must increase")
    pts = domain.coords.reshape(-1, domain.dim)
    dist = np.sqrt(np.sum(pts**2, axis=-1))
    ts = np.linspace(0.0, spec.T, n_t, endpoint=False)
    us = np.linspace(0.0, spec.M0 + 1.0, n_u)
    gap_field = np.zeros(len(pts))
    for t in ts:
        for u in us:
            d = np.abs(np.asarray(spec.eval_f(t, pts, u)) - np.asarray(spec.eval_f0(t, pts, u)))
            gap_field = np.maximum(gap_field, d)
    gaps = []
    for r in radii:
        sel = dist >= r - 1e-12
        if not sel.any():
            raise ValueError(f"no sampled points with ||x|| >= {r}")
        gaps.append(float(gap_field[sel].max()))
    increases = sum(1 for a, b in zip(gaps, gaps[1:]) if b > a)
    clauses = {
        "gap_nonincreasing": {"violations": increases, "worst_margin": max([b - a for a, b in zip(gaps, gaps[1:])], default=0.0)},
        "final_gap_below_tol": {"violations": int(gaps[-1] >= tol), "worst_margin": gaps[-1], "tol": tol},
    }
    sampling = f"{n_t} times x {n_u} u-levels on [0, {spec.M0 + 1:.6g}] x grid points beyond each radius"
    return HypothesisReport("H1", clauses, sampling, gaps=gaps)
