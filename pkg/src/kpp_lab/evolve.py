"""Explicit time integration of u_t = A u + u f(t, x, u) and the comparison-principle harness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dispersal import RandomDispersal
from .domain_grid import Domain, Field
from .errors import BlowupError, CFLError, PreconditionError

NEGATIVE_CLAMP = -1e-13
BOUND_SLACK = 1e-10
SCHEMES = ("euler", "rk4")


@dataclass(frozen=True)
class IntegratorSpec:
    """Explicit scheme, time step (None: largest step the stability bound allows) and CFL safety."""

    scheme: str = "euler"
    dt: float | None = None
    safety: float = 0.9

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not 0 < self.safety <= 1:
            raise ValueError(f"safety must lie in (0, 1], got {self.safety}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")


def max_stable_dt(spec, domain: Domain, rx, safety=0.9) -> float:
    """Largest dt allowed by the explicit stability bound for this operator/reaction pair."""
    if isinstance(spec, RandomDispersal):
        return safety * domain.spacing**2 / (2 * domain.dim)
    return safety / (spec.operator_bound(domain.spacing, domain.dim) + rx.rate_bound())


def resolve_dt(spec, domain, rx, integ: IntegratorSpec) -> float:
    limit = max_stable_dt(spec, domain, rx, integ.safety)
    if integ.dt is None:
        return limit
    if integ.dt > limit * (1 + 1e-12):
        raise CFLError(f"dt={integ.dt:.6g} exceeds stability limit {limit:.6g} for {spec.name} dispersal")
    return integ.dt


class System:
    """Right-hand side A u + u f(t, x, u) bound to one domain."""

    def __init__(self, spec, rx, domain: Domain):
        self.spec = spec
        self.rx = rx
        self.domain = domain
        self.apply = spec.bind(domain)
        self.reaction = rx.bind(domain.coords)

    def rhs(self, t, u):
        return self.apply(u) + u * self.reaction.f(t, u)

    def advance(self, u, t, dt, scheme):
        if scheme == "euler":
            new = u + dt * self.rhs(t, u)
        else:
            k1 = self.rhs(t, u)
            k2 = self.rhs(t + 0.5 * dt, u + 0.5 * dt * k1)
            k3 = self.rhs(t + 0.5 * dt, u + 0.5 * dt * k2)
            k4 = self.rhs(t + dt, u + dt * k3)
            new = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(new)):
            raise BlowupError(t + dt)
        tiny = (new < 0.0) & (new >= NEGATIVE_CLAMP)
        if tiny.any():
            new[tiny] = 0.0
        return new


def step(u: Field, t: float, spec, rx, integ: IntegratorSpec = IntegratorSpec()) -> Field:
    """One explicit step from time t."""
    dt = resolve_dt(spec, u.domain, rx, integ)
    system = System(spec, rx, u.domain)
    return Field(u.domain, system.advance(u.values.copy(), t, dt, integ.scheme), t + dt)


@dataclass
class Trajectory:
    """Snapshots (time, Field) with strictly increasing times on one domain."""

    domain: Domain
    times: list = field(default_factory=list)
    fields: list = field(default_factory=list)

    def append(self, u: Field):
        if u.domain is not self.domain and u.domain != self.domain:
            raise ValueError("snapshot on a different domain")
        if self.times and not u.t > self.times[-1]:
            raise ValueError("snapshot times must increase strictly")
        self.times.append(float(u.t))
        self.fields.append(u)

    def __len__(self):
        return len(self.fields)

    def __getitem__(self, k):
        return self.fields[k]

    @property
    def final(self):
        return self.fields[-1]

    def values(self):
        return np.stack([f.values for f in self.fields])

    def write_csv(self, path) -> Path:
        """Long format: t, coordinates..., u."""
        path = Path(path)
        coords = self.domain.coords.reshape(-1, self.domain.dim)
        names = ["x", "y"][: self.domain.dim]
        with path.open("w") as fh:
            fh.write(f"# domain={self.domain.descriptor()}\n")
            fh.write(",".join(["t", *names, "u"]) + "\n")
            for t, u in zip(self.times, self.fields):
                block = np.column_stack([np.full(len(coords), t), coords, u.values.ravel()])
                np.savetxt(fh, block, delimiter=",", fmt="%.17g")
        return path


def plan_steps(t_start, t_end, dt_max, multiple=1):
    """Number of equal steps covering [t_start, t_end] with dt <= dt_max, rounded up to ``multiple``."""
    span = t_end - t_start
    n = max(1, math.ceil(span / dt_max - 1e-12))
    n = multiple * math.ceil(n / multiple)
    return n, span / n


def solve(
    u0: Field,
    t_span,
    spec,
    rx,
    integ: IntegratorSpec = IntegratorSpec(),
    record_every: int = 1,
    step_multiple: int = 1,
) -> Trajectory:
    """Integrate from u0 over t_span, recording every ``record_every`` steps plus the endpoints."""
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    if u0.min() < 0:
        raise PreconditionError("initial data must be non-negative")
    dt_max = resolve_dt(spec, u0.domain, rx, integ)
    n, dt = plan_steps(t0, t1, dt_max, step_multiple)
    system = System(spec, rx, u0.domain)
    traj = Trajectory(u0.domain)
    traj.append(Field(u0.domain, u0.values, t0))
    u = u0.values.copy()
    for k in range(1, n + 1):
        t = t0 + (k - 1) * dt
        u = system.advance(u, t, dt, integ.scheme)
        if k % record_every == 0 or k == n:
            traj.append(Field(u0.domain, u, t1 if k == n else t0 + k * dt))
    return traj


def period_map(u: Field, k_periods: int, spec, rx, integ: IntegratorSpec = IntegratorSpec(), t0: float = 0.0) -> Field:
    """u -> u(t0 + k T; u) with the reaction's temporal period T."""
    if u.min() < 0:
        raise PreconditionError("period map needs non-negative data")
    start = Field(u.domain, u.values, t0)
    traj = solve(start, (t0, t0 + k_periods * rx.T), spec, rx, integ, record_every=10**12)
    return traj.final


def residual_subsuper(traj: Trajectory, sense: str, spec, rx, region=None) -> float:
    """Worst violation of u_t >= (<=) A u + u f for a super (sub) solution candidate.

    Positive means violated. Time derivatives are centered differences between
    neighbouring snapshots; only points inside the domain buffer are read.
    """
    if sense not in ("sub", "super"):
        raise ValueError("sense must be 'sub' or 'super'")
    if len(traj) < 3:
        raise PreconditionError("need at least 3 snapshots for centered time differences")
    system = System(spec, rx, traj.domain)
    mask = traj.domain.interior_mask if region is None else region
    worst = -np.inf
    for k in range(1, len(traj) - 1):
        tm, tk, tp = traj.times[k - 1], traj.times[k], traj.times[k + 1]
        ut = (traj[k + 1].values - traj[k - 1].values) / (tp - tm)
        r = ut - system.rhs(tk, traj[k].values)
        viol = r if sense == "sub" else -r
        worst = max(worst, float(viol[mask].max()))
    return worst


@dataclass
class ComparisonReport:
    min_gap: float
    final_min_gap: float
    times_checked: int
    passed: bool
    tolerance: float = -1e-10

    def to_dict(self):
        return {
            "min_gap": self.min_gap,
            "final_min_gap": self.final_min_gap,
            "times_checked": self.times_checked,
            "pass": self.passed,
            "tolerance": self.tolerance,
        }


def comparison_harness(
    u01: Field, u02: Field, t_end: float, spec, rx, integ: IntegratorSpec = IntegratorSpec(), record_every=1
) -> ComparisonReport:
    """Evolve an ordered pair u01 <= u02 and report min over time and space of u2 - u1."""
    if np.any(u01.values > u02.values):
        raise PreconditionError("comparison harness needs u01 <= u02 pointwise")
    a = solve(u01, (0.0, t_end), spec, rx, integ, record_every)
    b = solve(u02, (0.0, t_end), spec, rx, integ, record_every)
    gaps = [float((fb.values - fa.values).min()) for fa, fb in zip(a.fields, b.fields)]
    min_gap = min(gaps)
    tol = -1e-10
    return ComparisonReport(min_gap, gaps[-1], len(gaps), min_gap >= tol, tol)
