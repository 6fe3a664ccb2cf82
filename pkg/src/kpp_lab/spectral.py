"""Principal growth rates of tilted periodic problems and the variational spreading speed.

The growth rate of v_t = A_{xi,mu} v + a(t, x) v over the periodic cell is
read off the time-T solution map (the monodromy matrix): it is positive, so
power iteration from the constant field converges to the dominant factor
exp(lambda T).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dispersal import TiltSpec, tilted_matrix, unit_direction
from .domain_grid import CellField
from .errors import CFLError, ConvergenceError, DegenerateMediumError
from .evolve import IntegratorSpec, plan_steps
from .reaction import CellCoefficient, linearize_at_zero

ACCURACY_DT = 1e-3
MAX_STEPS_PER_PERIOD = 2_000_000
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0

DEFAULT_LINEAR_INTEGRATOR = IntegratorSpec("rk4")


class _CellSystem:
    """v_t = L v + a(t) v on the flattened cell; works on vectors and column blocks."""

    def __init__(self, L, a: CellCoefficient):
        self.L = L
        self.a = a

    def coef(self, t):
        return self.a(t).ravel()

    def rhs(self, t, V):
        c = self.coef(t)
        return self.L @ V + (c[:, None] * V if V.ndim == 2 else c * V)

    def advance(self, V, t, dt, scheme):
        if scheme == "euler":
            return V + dt * self.rhs(t, V)
        k1 = self.rhs(t, V)
        k2 = self.rhs(t + 0.5 * dt, V + 0.5 * dt * k1)
        k3 = self.rhs(t + 0.5 * dt, V + 0.5 * dt * k2)
        k4 = self.rhs(t + dt, V + dt * k3)
        return V + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def step_matrix(self, dt, scheme):
        """One-step propagator for time-independent coefficients."""
        n = self.L.shape[0]
        M = dt * (self.L + np.diag(self.coef(0.0)))
        if scheme == "euler":
            return np.eye(n) + M
        M2 = M @ M
        M3 = M2 @ M
        return np.eye(n) + M + M2 / 2.0 + M3 / 6.0 + (M3 @ M) / 24.0


def _plan(system: _CellSystem, T, integ: IntegratorSpec, multiple=1):
    lo, hi = system.a.bounds()
    norm = float(np.abs(system.L).sum(axis=1).max()) + max(abs(lo), abs(hi))
    dt_cfl = integ.safety * 2.0 / norm if norm > 0 else T
    if integ.dt is not None and integ.dt > dt_cfl * (1 + 1e-12):
        raise CFLError(f"dt={integ.dt:.6g} exceeds the cell stability limit {dt_cfl:.6g}")
    dt_max = min(dt_cfl, integ.dt if integ.dt is not None else ACCURACY_DT)
    n, dt = plan_steps(0.0, T, dt_max, multiple)
    if n > MAX_STEPS_PER_PERIOD:
        raise CFLError(f"tilted problem needs {n} steps per period; reduce mu (operator norm {norm:.3g})")
    return n, dt


def linear_period_map(
    a: CellCoefficient, tilt: TiltSpec, v0: CellField, spec, integ: IntegratorSpec = DEFAULT_LINEAR_INTEGRATOR
) -> CellField:
    """v(T) for v_t = A_{xi,mu} v + a v, v(0) = v0, integrated with the evolve schemes."""
    system = _CellSystem(tilted_matrix(spec, tilt, v0.cell), a)
    n, dt = _plan(system, a.T, integ)
    v = v0.values.ravel().copy()
    for k in range(n):
        v = system.advance(v, k * dt, dt, integ.scheme)
    return CellField(v0.cell, v.reshape(v0.cell.shape), v0.t + a.T)


def monodromy(system: _CellSystem, T, n, dt, scheme, autonomous):
    if autonomous:
        return np.linalg.matrix_power(system.step_matrix(dt, scheme), n)
    P = np.eye(system.L.shape[0])
    for k in range(n):
        P = system.advance(P, k * dt, dt, scheme)
    return P


@dataclass
class EigenEstimate:
    """Growth rate lambda with its time-periodic positive eigenfunction.

    ``eigenfunction`` holds phi(t_k) = exp(-lambda t_k) v(t_k) at ``n_record``
    equally spaced phases of one period.
    """

    lam: float
    tilt: TiltSpec
    iterations: int
    residual: float
    growth_factor: float
    eigenfunction: list
    certified: bool
    factors: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "lambda": self.lam,
            "xi": list(self.tilt.xi),
            "mu": self.tilt.mu,
            "iterations": self.iterations,
            "residual": self.residual,
            "principal_certified": self.certified,
        }


def principal_growth(
    a: CellCoefficient,
    tilt: TiltSpec,
    spec,
    integ: IntegratorSpec = DEFAULT_LINEAR_INTEGRATOR,
    rtol=1e-10,
    max_iter=10_000,
    residual_tol=1e-8,
    n_record=8,
) -> EigenEstimate:
    """Power iteration on the period map from the constant-1 cell field.

    Stops once the last five sup-norm growth factors agree to ``rtol``.
    ``certified`` is False when the eigen-residual stays above ``residual_tol``
    although the factors converged, or the limit is not strictly positive.
    """
    cell = a.cell
    system = _CellSystem(tilted_matrix(spec, tilt, cell), a)
    n, dt = _plan(system, a.T, integ, multiple=n_record)
    P = monodromy(system, a.T, n, dt, integ.scheme, a.autonomous)

    v = np.ones(cell.size)
    factors = []
    converged = False
    for it in range(1, max_iter + 1):
        w = P @ v
        g = float(np.abs(w).max())
        if g == 0.0:
            raise ConvergenceError("period map annihilated the iterate")
        v = w / g
        factors.append(g)
        if len(factors) >= 5:
            last = factors[-5:]
            if max(last) - min(last) <= rtol * g:
                converged = True
                break
    if not converged:
        raise ConvergenceError(
            f"growth factors did not settle within {max_iter} periods", diagnostic=factors[-10:]
        )
    g = factors[-1]
    lam = math.log(g) / a.T
    residual = float(np.abs(P @ v - g * v).max() / np.abs(v).max())

    snapshots = []
    stride = n // n_record
    u = v.copy()
    for k in range(n):
        if k % stride == 0:
            t = k * dt
            snapshots.append(CellField(cell, (u * math.exp(-lam * t)).reshape(cell.shape), t))
        u = system.advance(u, k * dt, dt, integ.scheme)
    positive = all(s.values.min() > 0 for s in snapshots)
    return EigenEstimate(lam, tilt, it, residual, g, snapshots, residual <= residual_tol and positive, factors)


def golden_section(fn, lo, hi, rtol=1e-6, max_iter=200):
    """Minimize a unimodal ``fn`` on [lo, hi]; stops when the bracket width <= rtol * |x|."""
    a, b = float(lo), float(hi)
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if b - a <= rtol * abs(0.5 * (a + b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = fn(d)
    return (c, fc) if fc < fd else (d, fd)


@dataclass
class SpeedResult:
    c_star: float
    mu_star: float | None
    lambda_at_mu_star: float | None
    method: str
    scan: list = field(default_factory=list)
    lambda_zero: float | None = None
    certified: bool = True
    stderr: float | None = None

    def to_dict(self):
        return {
            "c_star": self.c_star,
            "mu_star": self.mu_star,
            "lambda": self.lambda_at_mu_star,
            "lambda_zero": self.lambda_zero,
            "method": self.method,
            "certified": self.certified,
            "iterations": len(self.scan),
        }


def variational_speed(
    rx,
    xi,
    spec,
    domain,
    integ: IntegratorSpec = DEFAULT_LINEAR_INTEGRATOR,
    mu_min=1e-3,
    mu_max=20.0,
    ratio=1.3,
    rtol=1e-6,
) -> SpeedResult:
    """c0*(xi) = inf_{mu > 0} lambda_{xi,mu}(f0(., ., 0)) / mu.

    A geometric mu-scan brackets the minimum (lambda_mu / mu is unimodal
    because lambda_mu is convex with lambda_0 > 0); golden-section search
    refines it.
    """
    xi = unit_direction(xi)
    a0 = linearize_at_zero(rx, domain)
    base = principal_growth(a0, TiltSpec(xi, 0.0), spec, integ)
    if base.lam <= 0:
        raise DegenerateMediumError(base.lam)

    trace = {}
    certified = [base.certified]

    def evaluate(mu):
        if mu not in trace:
            est = principal_growth(a0, TiltSpec(xi, mu), spec, integ)
            certified.append(est.certified)
            trace[mu] = est.lam
        return trace[mu] / mu

    mus, vals = [], []
    mu = mu_min
    bracket = None
    while mu <= mu_max * (1 + 1e-12):
        mus.append(mu)
        vals.append(evaluate(mu))
        if len(vals) >= 2 and vals[-1] > vals[-2]:
            if len(vals) == 2:
                raise ConvergenceError(
                    f"minimum of lambda/mu at the lower bracket edge mu={mu_min}; widen the bracket",
                    diagnostic=list(zip(mus, vals)),
                )
            bracket = (mus[-3], mus[-1])
            break
        mu *= ratio
    if bracket is None:
        raise ConvergenceError(
            f"lambda/mu still decreasing at the upper bracket edge mu={mus[-1]:.4g}; widen the bracket",
            diagnostic=list(zip(mus, vals)),
        )
    mu_star, c_star = golden_section(evaluate, *bracket, rtol=rtol)
    scan = [(m, trace[m], trace[m] / m) for m in sorted(trace)]
    return SpeedResult(c_star, mu_star, trace[mu_star], "variational", scan, base.lam, all(certified))


def growth_rate_at_zero(rx, spec, domain, integ: IntegratorSpec = DEFAULT_LINEAR_INTEGRATOR) -> EigenEstimate:
    """lambda(f0(., ., 0)): the linear stability of u = 0 for the periodic limit problem."""
    a0 = linearize_at_zero(rx, domain)
    xi = tuple(1.0 if i == 0 else 0.0 for i in range(domain.dim))
    return principal_growth(a0, TiltSpec(xi, 0.0), spec, integ)
