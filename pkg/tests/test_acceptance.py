"""Acceptance suite: one pass/fail line per criterion, checked against independent oracles."""

import json
import math
import time

import numpy as np
import pytest
from scipy import integrate, optimize

from conftest import make_config, medium
from kpp_lab import analysis, cli, spectral
from kpp_lab.config import parse_config, random_smooth_field
from kpp_lab.dispersal import (
    DiscreteDispersal,
    KernelSpec,
    NonlocalDispersal,
    RandomDispersal,
    TiltSpec,
    smooth_bump,
)
from kpp_lab.domain_grid import Field, build_domain
from kpp_lab.evolve import IntegratorSpec, comparison_harness
from kpp_lab.reaction import CellCoefficient, fisher

RK4 = IntegratorSpec("rk4")


def test_criterion_1_fisher_speed(report):
    d = build_domain({"L": 10, "h": 0.05, "p": 1})
    start = time.perf_counter()
    res = spectral.variational_speed(fisher(), (1.0,), RandomDispersal(), d)
    elapsed = time.perf_counter() - start
    # oracle: (mu^2 + 1) / mu is minimal at mu = 1 with value 2
    ok = abs(res.c_star - 2.0) < 1e-3 and abs(res.mu_star - 1.0) < 1e-3 and elapsed < 30
    report(1, ok, f"c*={res.c_star:.9f} mu*={res.mu_star:.6f} runtime={elapsed:.2f}s")
    assert ok


def test_criterion_2_lattice_speed(report):
    d = build_domain({"kind": "lattice", "R": 20, "p": 1})
    res = spectral.variational_speed(fisher(), (1.0,), DiscreteDispersal.symmetric(1), d)
    mu = np.arange(0.01, 5.0 + 1e-12, 1e-4)
    oracle = float(np.min((2 * np.cosh(mu) - 1) / mu))
    err = abs(res.c_star - oracle)
    report(2, err < 1e-4, f"c*={res.c_star:.10f} grid oracle={oracle:.10f} err={err:.2e}")
    assert err < 1e-4


FRONT_CASES = [(m, b) for m in "abc" for b in (0.0, 0.5, -0.5)]


@pytest.fixture(scope="module")
def front_speeds():
    out = {}
    for name, bump in FRONT_CASES:
        cfg = medium(name, bump, L=400, h=0.1, buffer=20)
        fres, _, _ = analysis.front_speed(cfg.dispersal, cfg.reaction, cfg.domain, (1.0,), 150.0, cfg.integrator, offset=-20.0)
        out[(name, bump)] = fres.c_star
    for name in "abc":
        cfg = medium(name, 0.0, L=10, h=0.05)
        out[(name, "var")] = spectral.variational_speed(cfg.reaction, (1.0,), cfg.dispersal, cfg.domain).c_star
    return out


def test_criterion_3_front_vs_variational(report, front_speeds):
    worst_var, worst_bump, parts = 0.0, 0.0, []
    for name, bump in FRONT_CASES:
        c_var = front_speeds[(name, "var")]
        c_front = front_speeds[(name, bump)]
        worst_var = max(worst_var, abs(c_front - c_var) / c_var)
        if bump:
            base = front_speeds[(name, 0.0)]
            worst_bump = max(worst_bump, abs(c_front - base) / base)
        parts.append(f"{name}{bump:+.1f}:{c_front:.4f}/{c_var:.4f}")
    ok = worst_var < 0.05 and worst_bump < 0.02
    report(3, ok, f"max rel gap front/variational={worst_var:.4f} bump/no-bump={worst_bump:.4f} [{' '.join(parts)}]")
    assert ok


def test_criterion_4_liouville(report):
    worst_d, worst_v, ok = 0.0, 0.0, True
    for name in "abc":
        cfg = medium(name, 0.5, L=60, h=0.1, buffer=10)
        M0 = cfg.reaction.M0
        seed = random_smooth_field(cfg.domain, np.random.default_rng(7), 0.2, 1.5)
        starts = [M0 + 1, 2 * M0, 5 * M0, seed]
        rep = analysis.liouville_check(cfg.dispersal, cfg.reaction, cfg.domain, starts, cfg.integrator, tol=1e-9)
        worst_d = max(worst_d, rep.max_distance)
        worst_v = max(worst_v, max(v for v in rep.history_violations if v is not None))
        ok &= rep.max_distance < 1e-6 and all(v is None or v <= 1e-12 for v in rep.history_violations)
    report(4, ok, f"max phase-matched sup distance={worst_d:.2e} worst part-metric increase={worst_v:.2e}")
    assert ok


def test_criterion_5_tail(report):
    cfg = medium("b", 0.5, L=60, h=0.1, buffer=10)
    u_star = analysis.find_attractor(cfg.dispersal, cfg.reaction, cfg.domain, None, cfg.integrator, tol=1e-10)
    base = analysis.periodic_limit(cfg.reaction)
    u0_star = analysis.find_attractor(cfg.dispersal, base, cfg.domain, None, cfg.integrator, tol=1e-10)
    rep = analysis.tail_gap_profile(u_star, u0_star, [2, 5, 10, 20, 40], tol=1e-2)
    table = " ".join(f"r={r:g}:{g:.2e}" for r, g in zip(rep.radii, rep.gaps))
    report(5, rep.passed, table)
    assert rep.passed


def _ordering_failures(spec, domain, rx, rng, pairs=100, t_end=0.5):
    failures, worst = 0, math.inf
    for _ in range(pairs):
        a = random_smooth_field(domain, rng, 0.0, rx.M0).values
        b = random_smooth_field(domain, rng, 0.0, rx.M0).values
        lo, hi = Field(domain, np.minimum(a, b)), Field(domain, np.maximum(a, b))
        rep = comparison_harness(lo, hi, t_end, spec, rx)
        worst = min(worst, rep.min_gap)
        failures += not rep.passed
    return failures, worst


def test_criterion_6_comparison(report):
    rng = np.random.default_rng(2024)
    rx = fisher()
    cases = {
        "random": (RandomDispersal(), build_domain({"L": 10, "h": 0.1, "p": 1})),
        "nonlocal": (NonlocalDispersal(KernelSpec(1.0)), build_domain({"L": 10, "h": 0.1, "p": 1})),
        "discrete": (DiscreteDispersal.symmetric(1), build_domain({"kind": "lattice", "R": 20, "p": 1})),
    }
    results = {k: _ordering_failures(spec, d, rx, rng) for k, (spec, d) in cases.items()}
    total = sum(f for f, _ in results.values())
    detail = " ".join(f"{k}: failures={f} min gap={w:.2e}" for k, (f, w) in results.items())
    report(6, total == 0, detail)
    assert total == 0


def _kernel_moment_oracle(radius, mu, h):
    """Direct summation of J(z) exp(-mu z) over grid nodes z = j h, normalized to unit mass."""
    j = np.arange(-int(radius / h) - 1, int(radius / h) + 2)
    z = j * h
    w = np.array([smooth_bump(abs(v) / radius) for v in z])
    return float(np.sum(w * np.exp(-mu * z)) / np.sum(w))


def test_criterion_7_spectral(report):
    d = build_domain({"L": 10, "h": 0.05, "p": 1})
    cell = d.cell
    errs = {}
    a = 0.7
    coef = CellCoefficient.constant(cell, a)
    errs["laplacian"] = max(
        abs(spectral.principal_growth(coef, TiltSpec((1.0,), mu), RandomDispersal()).lam - (mu**2 + a))
        for mu in (0.0, 0.5, 1.0, 2.0)
    )

    lat = build_domain({"kind": "lattice", "R": 20, "p": 1})
    rates = DiscreteDispersal({(1,): 1.3, (-1,): 0.6})
    lat_coef = CellCoefficient.constant(lat.cell, a)
    errs["lattice"] = max(
        abs(
            spectral.principal_growth(lat_coef, TiltSpec((1.0,), mu), rates).lam
            - (1.3 * (math.exp(-mu) - 1) + 0.6 * (math.exp(mu) - 1) + a)
        )
        for mu in (0.0, 0.5, 1.5, 3.0)
    )

    nl = NonlocalDispersal(KernelSpec(1.0))
    errs["kernel"] = max(
        abs(spectral.principal_growth(coef, TiltSpec((1.0,), mu), nl).lam - (_kernel_moment_oracle(1.0, mu, 0.05) - 1 + a))
        for mu in (0.0, 1.0, 3.0)
    )

    # invariants on a non-trivial space-time periodic coefficient
    x = cell.coords[..., 0]
    var = CellCoefficient(cell, 1.0, lambda t: 1 + 0.3 * np.cos(2 * np.pi * x) + 0.4 * np.sin(2 * np.pi * t))
    tilt = TiltSpec((1.0,), 0.8)
    base = spectral.principal_growth(var, tilt, RandomDispersal()).lam
    errs["shift"] = abs(spectral.principal_growth(var.shifted(0.25), tilt, RandomDispersal()).lam - (base + 0.25))
    bigger = CellCoefficient(cell, 1.0, lambda t: var(t) + 0.1 * (1 + np.cos(2 * np.pi * x)))
    mono = spectral.principal_growth(bigger, tilt, RandomDispersal()).lam - base
    d2 = build_domain({"dim": 2, "L": 2, "h": 0.125, "p": 1})
    x2 = d2.cell.coords
    c2 = CellCoefficient.from_array(d2.cell, 1 + 0.3 * np.cos(2 * np.pi * x2[..., 0]) * np.sin(2 * np.pi * x2[..., 1]))
    lams = [
        spectral.principal_growth(c2, TiltSpec(xi, 0.0), RandomDispersal()).lam
        for xi in [(1.0, 0.0), (0.0, 1.0), (math.sqrt(0.5), math.sqrt(0.5))]
    ]
    errs["xi_independence"] = max(lams) - min(lams)

    ok = (
        errs["laplacian"] < 1e-3
        and errs["lattice"] < 1e-8
        and errs["kernel"] < 1e-6
        and errs["shift"] < 1e-8
        and mono > -1e-8
        and errs["xi_independence"] < 1e-8
    )
    detail = " ".join(f"{k}={v:.2e}" for k, v in errs.items()) + f" monotone_increment={mono:.3e}"
    report(7, ok, detail)
    assert ok


def _logistic_oracle(r, T=1.0):
    """Periodic orbit of u' = u (r(t) - u) by shooting on the period map with DOP853."""

    def period_map(u0):
        sol = integrate.solve_ivp(lambda t, u: u * (r(t) - u), (0, T), [u0], method="DOP853", rtol=1e-13, atol=1e-15)
        return sol.y[0, -1]

    u_fix = optimize.brentq(lambda u: period_map(u) - u, 0.1, 5.0, xtol=1e-15)
    return lambda ts: integrate.solve_ivp(
        lambda t, u: u * (r(t) - u), (0, T), [u_fix], method="DOP853", rtol=1e-13, atol=1e-15, t_eval=ts, dense_output=False
    ).y[0]


def test_criterion_8_periodic_logistic(report):
    cfg = parse_config(
        make_config(
            domain={"L": 2, "h": 0.1, "buffer": 0.5},
            reaction={"r0": {"constant": 1.0, "terms": [{"amplitude": 0.8, "kind": "sin", "time_mode": 1}]}, "b": 1.0},
        )
    )
    res = analysis.find_attractor(cfg.dispersal, cfg.reaction, cfg.domain, None, RK4, tol=1e-12, n_phases=16)
    oracle = _logistic_oracle(lambda t: 1.0 + 0.8 * math.sin(2 * math.pi * t))(np.array(res.phases))
    err = max(float(np.abs(f.values - o).max()) for f, o in zip(res.u_star, oracle))
    report(8, err < 1e-6, f"max |u*(t) - oracle(t)| over 16 phases={err:.2e}")
    assert err < 1e-6


def test_criterion_9_negative_controls(report, tmp_path):
    decay = make_config(reaction={"r0": -1.0, "b": 1.0}, domain={"h": 0.05})
    (tmp_path / "decay.json").write_text(json.dumps(decay))
    code_decay = cli.main(["speed", str(tmp_path / "decay.json"), "--output-dir", str(tmp_path / "decay")])

    cone = make_config(
        domain={"L": 60, "buffer": 10},
        experiment={
            "checks": [
                {"check": "cone", "c_low": 0.5, "c_high": 1.0, "t_end": 15, "record_every": 100, "expect": "fail"}
            ]
        },
    )
    (tmp_path / "cone.json").write_text(json.dumps(cone))
    code_cone = cli.main(["verify", str(tmp_path / "cone.json"), "--output-dir", str(tmp_path / "cone")])
    result = json.loads((tmp_path / "cone" / "verify.json").read_text())["results"][0]
    ok = code_decay == cli.EXIT_DEGENERATE and code_cone == 0 and result["raw_pass"] is False and result["status"] == "pass"
    report(9, ok, f"decay medium exit={code_decay}; cone c_high=1.0 raw_pass={result['raw_pass']} recorded={result['status']}")
    assert ok
