"""Attractors, part-metric contraction, uniqueness, tails, and front spreading checks."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import stats

from .domain_grid import Domain, Field, build_domain, outside_radius, region_mask
from .dispersal import unit_direction
from .errors import (
    ConvergenceError,
    DomainTooSmallError,
    ExtinctionError,
    PreconditionError,
)
from .evolve import IntegratorSpec, System, plan_steps, resolve_dt, solve
from .reaction import CustomReaction, ParametricKPP
from .spectral import SpeedResult

MONOTONE_TOL = 1e-12
EXTINCTION_LEVEL = 1e-6


def worker_count():
    """Worker cap from KPP_LAB_THREADS (defaults to the CPU count)."""
    raw = os.environ.get("KPP_LAB_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _values(u):
    return u.values if hasattr(u, "values") else np.asarray(u, dtype=float)


def part_metric(u, v, eps_pos=0.0) -> float:
    """rho(u, v) = inf{ln a : u/a <= v <= a u} = max |ln u - ln v| for strictly positive u, v."""
    a, b = _values(u), _values(v)
    if isinstance(u, Field) and isinstance(v, Field) and u.domain != v.domain:
        raise PreconditionError("fields live on different domains")
    if a.shape != b.shape:
        raise PreconditionError("fields have different shapes")
    if a.min() <= eps_pos or b.min() <= eps_pos:
        raise PreconditionError("part metric undefined outside X++ (values must be strictly positive)")
    return float(np.abs(np.log(a) - np.log(b)).max())


@dataclass
class PartMetricReport:
    rho: list
    delta_hat: float | None
    worst_increase: float
    sigma: float
    passed: bool

    def to_dict(self):
        return {
            "rho": self.rho,
            "delta_hat": self.delta_hat,
            "worst_increase": self.worst_increase,
            "sigma": self.sigma,
            "pass": self.passed,
        }


def _monotone_violation(seq):
    return max([b - a for a, b in zip(seq, seq[1:])], default=-math.inf)


def part_metric_decay_test(
    u0: Field, v0: Field, n_periods: int, spec, rx, integ: IntegratorSpec = IntegratorSpec(), sigma=1e-6
) -> PartMetricReport:
    """rho_n = rho(u(nT; u0), u(nT; v0)): nonincreasing, and strictly decreasing while rho_n >= sigma.

    ``delta_hat`` is the smallest per-period drop observed while rho_n >= sigma.
    """
    for name, w in (("u0", u0), ("v0", v0)):
        if w.min() <= 0:
            raise PreconditionError(f"{name} must be strictly positive")
    domain = u0.domain
    system = System(spec, rx, domain)
    n, dt = plan_steps(0.0, rx.T, resolve_dt(spec, domain, rx, integ))
    a, b = u0.values.copy(), v0.values.copy()
    rho = [part_metric(a, b)]
    for p in range(n_periods):
        for k in range(n):
            t = p * rx.T + k * dt
            a = system.advance(a, t, dt, integ.scheme)
            b = system.advance(b, t, dt, integ.scheme)
        if a.min() <= 0 or b.min() <= 0:
            raise PreconditionError(f"positivity lost after {p + 1} periods")
        rho.append(part_metric(a, b))
    drops = [x - y for x, y in zip(rho, rho[1:]) if x >= sigma]
    worst = _monotone_violation(rho)
    delta_hat = min(drops) if drops else None
    passed = worst <= MONOTONE_TOL and (delta_hat is None or delta_hat > 0)
    return PartMetricReport(rho, delta_hat, worst, sigma, passed)


@dataclass
class AttractorResult:
    """One period of the limit u*, stored at phases k T / n_phases."""

    u_star: list
    phases: list
    T: float
    history: list
    iterations: int
    residual: float

    def at_phase(self, k):
        return self.u_star[k % len(self.u_star)]

    def at_time(self, t):
        """Snapshot at the stored phase nearest to t mod T."""
        n = len(self.u_star)
        k = int(round((math.fmod(t, self.T) / self.T) * n)) % n
        return self.u_star[k]

    def min(self):
        return min(f.min() for f in self.u_star)

    def max(self):
        return max(f.max() for f in self.u_star)

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "min": self.min(),
            "max": self.max(),
            "phases": self.phases,
        }


def find_attractor(
    spec,
    rx,
    domain: Domain,
    start=None,
    integ: IntegratorSpec = IntegratorSpec(),
    tol=1e-8,
    max_periods=2000,
    n_phases=8,
) -> AttractorResult:
    """Iterate the period map until the sup-norm change per period drops below ``tol``.

    ``start`` is a constant (>= M0, so the iteration descends from a
    supersolution; defaults to M0) or a strictly positive Field.
    """
    if start is None:
        start = rx.M0
    if isinstance(start, Field):
        if start.min() <= 0:
            raise PreconditionError("start field must be strictly positive")
        u = start.values.copy()
    else:
        start = float(start)
        if start < rx.M0:
            raise PreconditionError(f"constant start {start:.6g} is below M0={rx.M0:.6g}")
        u = np.full(domain.shape, start)

    system = System(spec, rx, domain)
    n, dt = plan_steps(0.0, rx.T, resolve_dt(spec, domain, rx, integ), n_phases)
    history = []
    converged = False
    for p in range(1, max_periods + 1):
        prev = u
        u = prev.copy()
        for k in range(n):
            u = system.advance(u, k * dt, dt, integ.scheme)
        delta = float(np.abs(u - prev).max())
        rho = part_metric(prev, u) if prev.min() > 0 and u.min() > 0 else None
        history.append({"iteration": p, "sup_delta": delta, "part_metric": rho})
        if u.max() < EXTINCTION_LEVEL:
            raise ExtinctionError(
                f"extinction after {p} periods (sup u < {EXTINCTION_LEVEL}): "
                "medium does not satisfy the instability assumption"
            )
        if delta < tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"no periodic limit within {max_periods} periods", diagnostic=history[-5:])

    stride = n // n_phases
    snapshots, phases = [], []
    w = u.copy()
    for k in range(n):
        if k % stride == 0:
            snapshots.append(Field(domain, w, k * dt))
            phases.append(k * dt)
        w = system.advance(w, k * dt, dt, integ.scheme)
    residual = float(np.abs(w - u).max())
    result = AttractorResult(snapshots, phases, rx.T, history, p, residual)
    if result.min() <= 0:
        raise ExtinctionError("limit is not strictly positive")
    return result


@dataclass
class LiouvilleReport:
    attractors: list
    start_labels: list
    pairwise: dict
    max_distance: float
    threshold: float
    history_violations: list
    passed: bool

    def to_dict(self):
        return {
            "starts": self.start_labels,
            "pairwise_sup_distance": self.pairwise,
            "max_distance": self.max_distance,
            "threshold": self.threshold,
            "part_metric_history_worst_increase": self.history_violations,
            "iterations": [a.iterations for a in self.attractors],
            "pass": self.passed,
        }


def _label(start):
    if isinstance(start, Field):
        return f"field(min={start.min():.4g},max={start.max():.4g})"
    return f"constant({float(start):.6g})"


def liouville_check(
    spec,
    rx,
    domain: Domain,
    starts,
    integ: IntegratorSpec = IntegratorSpec(),
    tol=1e-8,
    threshold=None,
    max_periods=2000,
    n_phases=8,
) -> LiouvilleReport:
    """Attractors from distinct admissible starts must coincide at matched phases.

    Also checks that each run's part-metric history rho(u_n, u_{n+1}) is nonincreasing.
    """
    starts = list(starts)
    if len(starts) < 2:
        raise PreconditionError("need at least two starts")
    for s in starts:
        if isinstance(s, Field):
            if s.min() <= 0:
                raise PreconditionError("start fields must be strictly positive")
        elif float(s) < rx.M0:
            raise PreconditionError(f"constant start {float(s):.6g} is below M0={rx.M0:.6g} (or not positive)")
    threshold = 10 * tol if threshold is None else threshold

    def run(s):
        return find_attractor(spec, rx, domain, s, integ, tol, max_periods, n_phases)

    with ThreadPoolExecutor(max_workers=min(worker_count(), len(starts))) as pool:
        results = list(pool.map(run, starts))
    labels = [_label(s) for s in starts]
    pairwise = {}
    for i, j in combinations(range(len(results)), 2):
        d = max(
            float(np.abs(a.values - b.values).max())
            for a, b in zip(results[i].u_star, results[j].u_star)
        )
        pairwise[f"{i}-{j}"] = d
    max_d = max(pairwise.values())
    violations = []
    for r in results:
        rho = [h["part_metric"] for h in r.history if h["part_metric"] is not None]
        violations.append(_monotone_violation(rho) if len(rho) > 1 else None)
    hist_ok = all(v is None or v <= MONOTONE_TOL for v in violations)
    return LiouvilleReport(results, labels, pairwise, max_d, threshold, violations, max_d < threshold and hist_ok)


@dataclass
class TailReport:
    radii: list
    gaps: list
    tol: float
    passed: bool

    def to_dict(self):
        return {"radii": self.radii, "gaps": self.gaps, "tol": self.tol, "pass": self.passed}


def tail_gap_profile(u_star: AttractorResult, u0_star: AttractorResult, radii, tol=1e-2) -> TailReport:
    """max over phases of sup_{||x|| >= r, inside buffer} |u* - u0*| for each r."""
    if len(u_star.u_star) != len(u0_star.u_star):
        raise PreconditionError("attractors stored at different phase grids")
    domain = u_star.u_star[0].domain
    if u0_star.u_star[0].domain != domain:
        raise PreconditionError("attractors live on different domains")
    radii = [float(r) for r in radii]
    limit = domain.interior_extent
    gaps = []
    for r in radii:
        if r > limit + 1e-12:
            raise PreconditionError(f"radius {r} reaches into the exclusion buffer (max {limit})")
        mask = region_mask(domain, outside_radius(r)) & domain.interior_mask
        if not mask.any():
            raise PreconditionError(f"no interior points with ||x|| >= {r}")
        gaps.append(
            max(float(np.abs(a.values - b.values)[mask].max()) for a, b in zip(u_star.u_star, u0_star.u_star))
        )
    monotone = all(b <= a + MONOTONE_TOL for a, b in zip(gaps, gaps[1:]))
    return TailReport(radii, gaps, tol, monotone and gaps[-1] < tol)


def _smooth_step(tau):
    """C-infinity step: 0 for tau <= 0, 1 for tau >= 1."""
    tau = np.asarray(tau, dtype=float)
    g = lambda s: np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    a, b = g(tau), g(1.0 - tau)
    return a / (a + b)


def make_front_profile(domain: Domain, xi, kind="step", offset=0.0, delta0=0.5, width=None, t=0.0) -> Field:
    """Non-increasing profile in x.xi: delta0 behind (x.xi <= offset - width), exactly 0 for x.xi >= offset.

    "step" uses a unit-width smooth transition; "psi0" a wider one (default 5).
    """
    if kind not in ("step", "psi0"):
        raise ValueError(f"unknown front profile kind {kind!r}")
    if width is None:
        width = 1.0 if kind == "step" else 5.0
    xi = np.asarray(unit_direction(xi))
    s = domain.coords @ xi
    return Field(domain, delta0 * _smooth_step((offset - s) / width), t)


@dataclass
class FrontRecord:
    times: list
    positions: list
    level: float
    window: tuple
    speed: float
    stderr: float

    def to_dict(self):
        return {
            "level": self.level,
            "window": list(self.window),
            "speed": self.speed,
            "stderr": self.stderr,
        }


def front_position(u: Field, xi, level) -> float:
    """Largest s with u >= level at every interior point with x.xi <= s.

    Returns nan when the back-most interior point is already below level and
    +inf when no interior point is below level.
    """
    domain = u.domain
    xi = np.asarray(unit_direction(xi))
    mask = domain.interior_mask
    s = (domain.coords @ xi)[mask]
    vals = u.values[mask]
    below = vals < level
    if not below.any():
        return math.inf
    order = np.argsort(s, kind="stable")
    s, vals, below = s[order], vals[order], below[order]
    i = int(np.argmax(below))
    if i == 0:
        return math.nan
    if domain.dim == 1:
        u_prev, u_next = vals[i - 1], vals[i]
        return float(s[i - 1] + (u_prev - level) / (u_prev - u_next) * (s[i] - s[i - 1]))
    return float(s[i])


def track_front(traj, xi, level, transient=0.2) -> FrontRecord:
    """Level-crossing positions per snapshot and a least-squares speed over the post-transient window."""
    positions = [front_position(u, xi, level) for u in traj.fields]
    start = int(math.ceil(transient * len(positions)))
    window = list(range(start, len(positions)))
    if len(window) < 2:
        raise PreconditionError("too few snapshots after the transient to fit a speed")
    pos = np.array([positions[k] for k in window])
    if np.any(np.isnan(pos)):
        raise PreconditionError(f"no level crossing at level {level} in the regression window")
    if np.any(np.isinf(pos)):
        raise DomainTooSmallError("front reached the exclusion buffer: domain too small for t_end")
    times = np.array([traj.times[k] for k in window])
    fit = stats.linregress(times, pos)
    return FrontRecord(
        list(traj.times), positions, float(level), (float(times[0]), float(times[-1])), float(fit.slope), float(fit.stderr)
    )


@dataclass
class FeatureReport:
    c_low: float
    c_high: float
    outer_max: float
    inner_gap: float
    outer_tol: float
    inner_tol: float
    times: list
    passed: bool

    def to_dict(self):
        return {
            "c_low": self.c_low,
            "c_high": self.c_high,
            "outer_max": self.outer_max,
            "inner_gap": self.inner_gap,
            "outer_tol": self.outer_tol,
            "inner_tol": self.inner_tol,
            "times": self.times,
            "outer_pass": self.outer_max < self.outer_tol,
            "inner_pass": self.inner_gap < self.inner_tol,
            "pass": self.passed,
        }


def spreading_feature_check(
    traj, xi, c_low, c_high, u_star, outer_tol=1e-3, inner_tol=1e-2, final_frac=0.25
) -> FeatureReport:
    """Over the final snapshots: max u where |x.xi| >= c_high t, and max |u - u*| where |x.xi| <= c_low t."""
    n = len(traj)
    window = [k for k in range(int(math.floor((1 - final_frac) * n)), n) if traj.times[k] > 0]
    if not window:
        raise PreconditionError("final-time window is empty")
    domain = traj.domain
    s = np.abs(domain.coords @ np.asarray(unit_direction(xi)))
    interior = domain.interior_mask
    outer_max, inner_gap = 0.0, 0.0
    for k in window:
        t = traj.times[k]
        u = traj[k].values
        outer = interior & (s >= c_high * t)
        inner = interior & (s <= c_low * t)
        if not outer.any():
            raise DomainTooSmallError(f"outer cone |x.xi| >= {c_high}*{t:.4g} leaves the interior")
        ref = u_star.at_time(t).values if isinstance(u_star, AttractorResult) else _values(u_star)
        outer_max = max(outer_max, float(u[outer].max()))
        if inner.any():
            inner_gap = max(inner_gap, float(np.abs(u - ref)[inner].max()))
    times = [traj.times[k] for k in window]
    passed = outer_max < outer_tol and inner_gap < inner_tol
    return FeatureReport(c_low, c_high, outer_max, inner_gap, outer_tol, inner_tol, times, passed)


def periodic_limit(rx):
    """The reaction with its localized perturbation removed (f -> f0)."""
    if isinstance(rx, ParametricKPP):
        return rx.without_perturbation()
    if isinstance(rx, CustomReaction):
        return CustomReaction(rx.f0, rx.f0, rx.M0, rx.T, rx.periods, None, rx.autonomous)
    raise TypeError(f"unsupported reaction {type(rx).__name__}")


def baseline_min(spec, rx, domain: Domain, integ: IntegratorSpec = IntegratorSpec(), tol=1e-8) -> float:
    """inf of u0* over cell and period, from an attractor run on a small window of the periodic medium."""
    half = max(4 * max(domain.periods), 4 * domain.spacing, 2.0)
    half = max(domain.periods) * math.ceil(half / max(domain.periods))
    window = {
        "kind": domain.kind,
        "dim": domain.dim,
        "periods": list(domain.periods),
        "buffer": max(domain.periods),
    }
    if domain.is_lattice:
        window["R"] = int(half)
    else:
        window.update(L=half, h=domain.spacing)
    small = build_domain(window)
    res = find_attractor(spec, periodic_limit(rx), small, integ=integ, tol=tol)
    return min(float(f.values[small.interior_mask].min()) for f in res.u_star)


def front_speed(
    spec,
    rx,
    domain: Domain,
    xi,
    t_end,
    integ: IntegratorSpec = IntegratorSpec(),
    level=None,
    kind="step",
    offset=0.0,
    delta0=None,
    record_interval=1.0,
    transient=0.2,
):
    """Simulate from a front-like profile and fit the level-crossing speed.

    Defaults: delta0 and level are both half the minimum of the periodic
    attractor u0*. Returns (SpeedResult, FrontRecord, Trajectory).
    """
    if level is None or delta0 is None:
        m = baseline_min(spec, rx, domain, integ)
        level = 0.5 * m if level is None else level
        delta0 = 0.5 * m if delta0 is None else delta0
    u0 = make_front_profile(domain, xi, kind, offset, delta0)
    dt = resolve_dt(spec, domain, rx, integ)
    per_record = max(1, int(round(record_interval / dt)))
    n_records = max(1, int(math.ceil(t_end / (per_record * dt))))
    traj = solve(u0, (0.0, n_records * per_record * dt), spec, rx, IntegratorSpec(integ.scheme, dt, integ.safety), per_record)
    rec = track_front(traj, xi, level, transient)
    result = SpeedResult(rec.speed, None, None, "front_tracking", stderr=rec.stderr)
    return result, rec, traj
