"""kpp-lab command line: simulate, speed, eigen, attractor, liouville, tail, verify.

Exit codes: 0 pass, 1 check failure, 2 configuration error, 3 degenerate medium.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import analysis, spectral
from .config import RunConfig, build_initial, build_start, load_config, random_smooth_field
from .dispersal import TiltSpec, unit_direction
from .domain_grid import Field
from .errors import ConfigurationError, DegenerateMediumError, KPPLabError
from .evolve import comparison_harness, solve
from .reaction import check_H0, check_H1, linearize_at_zero

log = logging.getLogger("kpp_lab")

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_DEGENERATE = 0, 1, 2, 3


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class Output:
    """Writes reports under one directory and tracks them for the manifest."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files = []

    def path(self, name):
        self.files.append(name)
        return self.root / name

    def json(self, name, obj):
        self.path(name).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")

    def csv(self, name, header, rows):
        with self.path(name).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in row])

    def finish(self, command, metadata):
        # timestamps live only in metadata.json so reports stay byte-identical across runs
        (self.root / "metadata.json").write_text(json.dumps(_clean(metadata), indent=2, sort_keys=True) + "\n")
        files = sorted(set(self.files + ["metadata.json"]))
        (self.root / "manifest.json").write_text(
            json.dumps({"command": command, "files": files + ["manifest.json"]}, indent=2, sort_keys=True) + "\n"
        )


def _xi(cfg, params):
    return unit_direction(params.get("xi", [1.0] + [0.0] * (cfg.domain.dim - 1)))


def run_simulate(cfg: RunConfig, params, out: Output):
    rng = np.random.default_rng(cfg.seed)
    u0 = build_initial(params.get("initial", {"kind": "constant", "value": 0.1}), cfg, rng)
    t_end = float(params.get("t_end", 10.0))
    traj = solve(u0, (0.0, t_end), cfg.dispersal, cfg.reaction, cfg.integrator, cfg.record_every)
    traj.write_csv(out.path("trajectory.csv"))
    bound = max(u0.sup_norm(), cfg.reaction.M0) + 1e-10
    lo = min(f.min() for f in traj.fields)
    hi = max(f.max() for f in traj.fields)
    report = {
        "check": "simulate",
        "t_end": traj.times[-1],
        "snapshots": len(traj),
        "min": lo,
        "max": hi,
        "bound": bound,
        "pass": lo >= 0.0 and hi <= bound,
    }
    out.json("simulate.json", report)
    return report


def _speed_kwargs(params):
    keys = ("mu_min", "mu_max", "ratio", "rtol")
    return {k: float(params[k]) for k in keys if k in params}


def run_speed(cfg: RunConfig, params, out: Output, prefix="speed"):
    xi = _xi(cfg, params)
    res = spectral.variational_speed(cfg.reaction, xi, cfg.dispersal, cfg.domain, **_speed_kwargs(params))
    out.csv(f"{prefix}_mu_scan.csv", ["mu", "lambda", "lambda_over_mu"], res.scan)
    report = {"check": "speed", "xi": list(xi), **res.to_dict(), "pass": True}
    front = params.get("front")
    if front:
        fres, rec, _ = analysis.front_speed(
            cfg.dispersal,
            cfg.reaction,
            cfg.domain,
            xi,
            float(front.get("t_end", 150.0)),
            cfg.integrator,
            level=front.get("level"),
            kind=front.get("profile", "step"),
            offset=float(front.get("offset", 0.0)),
            delta0=front.get("delta0"),
        )
        gap = abs(fres.c_star - res.c_star) / res.c_star
        tol = float(front.get("rel_tol", 0.05))
        out.csv(f"{prefix}_front_positions.csv", ["t", "position"], zip(rec.times, rec.positions))
        report.update(front_speed=fres.c_star, front_stderr=fres.stderr, front=rec.to_dict(), relative_gap=gap, rel_tol=tol)
        report["pass"] = gap <= tol
    out.json(f"{prefix}.json", report)
    return report


def run_eigen(cfg: RunConfig, params, out: Output, prefix="eigen"):
    xi = _xi(cfg, params)
    mus = params.get("mus", [params.get("mu", 0.0)])
    a0 = linearize_at_zero(cfg.reaction, cfg.domain)
    rows, records = [], []
    for mu in mus:
        est = spectral.principal_growth(a0, TiltSpec(xi, float(mu)), cfg.dispersal)
        rows.append((est.tilt.mu, est.lam, est.lam / est.tilt.mu if est.tilt.mu > 0 else None))
        records.append(est.to_dict())
    out.csv(f"{prefix}_trace.csv", ["mu", "lambda", "lambda_over_mu"], rows)
    certified = all(r["principal_certified"] for r in records)
    report = {"check": "eigen", "estimates": records, "principal_certified": certified, "pass": True}
    out.json(f"{prefix}.json", report)
    return report


def _attractor_kwargs(params):
    out = {}
    if "tol" in params:
        out["tol"] = float(params["tol"])
    if "max_periods" in params:
        out["max_periods"] = int(params["max_periods"])
    if "n_phases" in params:
        out["n_phases"] = int(params["n_phases"])
    return out


def _write_attractor(out: Output, name, res: analysis.AttractorResult):
    out.csv(
        f"{name}_history.csv",
        ["iteration", "sup_delta", "part_metric"],
        [(h["iteration"], h["sup_delta"], h["part_metric"]) for h in res.history],
    )
    d = res.u_star[0].domain
    coords = d.coords.reshape(-1, d.dim)
    names = ["x", "y"][: d.dim]
    rows = []
    for phase, f in zip(res.phases, res.u_star):
        rows.extend([phase, *c, v] for c, v in zip(coords, f.values.ravel()))
    out.csv(f"{name}_u_star.csv", ["t", *names, "u"], rows)


def run_attractor(cfg: RunConfig, params, out: Output, prefix="attractor"):
    rng = np.random.default_rng(cfg.seed)
    start = build_start(params.get("start", "M0"), cfg, rng, "experiment.start")
    res = analysis.find_attractor(
        cfg.dispersal, cfg.reaction, cfg.domain, start, cfg.integrator, **_attractor_kwargs(params)
    )
    _write_attractor(out, prefix, res)
    report = {"check": "attractor", **res.to_dict(), "pass": res.min() > 0}
    out.json(f"{prefix}.json", report)
    return report


def run_liouville(cfg: RunConfig, params, out: Output, prefix="liouville"):
    rng = np.random.default_rng(cfg.seed)
    raw = params.get("starts", ["M0+1", "2*M0", "5*M0", {"kind": "random", "low": 0.2, "high": 1.0}])
    starts = [build_start(s, cfg, rng, f"experiment.starts[{i}]") for i, s in enumerate(raw)]
    kw = _attractor_kwargs(params)
    rep = analysis.liouville_check(cfg.dispersal, cfg.reaction, cfg.domain, starts, cfg.integrator, **kw)
    for i, res in enumerate(rep.attractors):
        out.csv(
            f"{prefix}_history_{i}.csv",
            ["iteration", "sup_delta", "part_metric"],
            [(h["iteration"], h["sup_delta"], h["part_metric"]) for h in res.history],
        )
    report = {"check": "liouville", **rep.to_dict()}
    out.json(f"{prefix}.json", report)
    return report


def run_tail(cfg: RunConfig, params, out: Output, prefix="tail"):
    radii = params.get("radii", [2, 5, 10, 20, 40])
    kw = _attractor_kwargs(params)
    u_star = analysis.find_attractor(cfg.dispersal, cfg.reaction, cfg.domain, None, cfg.integrator, **kw)
    base = analysis.periodic_limit(cfg.reaction)
    u0_star = analysis.find_attractor(cfg.dispersal, base, cfg.domain, None, cfg.integrator, **kw)
    rep = analysis.tail_gap_profile(u_star, u0_star, radii, float(params.get("tol", 1e-2)))
    out.csv(f"{prefix}_gaps.csv", ["radius", "gap"], zip(rep.radii, rep.gaps))
    report = {"check": "tail", **rep.to_dict()}
    out.json(f"{prefix}.json", report)
    return report


def run_cone(cfg: RunConfig, params, out: Output, prefix="cone"):
    rng = np.random.default_rng(cfg.seed)
    xi = _xi(cfg, params)
    initial = params.get("initial", {"kind": "bump", "amplitude": 0.5, "radius": 5.0})
    u0 = build_initial(initial, cfg, rng)
    t_end = float(params.get("t_end", 100.0))
    stride = max(1, int(params.get("record_every", cfg.record_every)))
    traj = solve(u0, (0.0, t_end), cfg.dispersal, cfg.reaction, cfg.integrator, stride)
    u_star = analysis.find_attractor(cfg.dispersal, cfg.reaction, cfg.domain, None, cfg.integrator)
    rep = analysis.spreading_feature_check(
        traj,
        xi,
        float(params.get("c_low", 1.6)),
        float(params.get("c_high", 2.4)),
        u_star,
        float(params.get("outer_tol", 1e-3)),
        float(params.get("inner_tol", 1e-2)),
    )
    # the property quantifies over all front-like data; the report names the one sampled
    report = {"check": "cone", "initial": initial, **rep.to_dict()}
    out.json(f"{prefix}.json", report)
    return report


def run_hypotheses(cfg: RunConfig, params, out: Output, prefix="hypotheses"):
    h0 = check_H0(cfg.reaction, cfg.domain)
    radii = params.get("radii", [cfg.domain.interior_extent / 4, cfg.domain.interior_extent / 2, cfg.domain.interior_extent])
    h1 = check_H1(cfg.reaction, cfg.domain, radii, float(params.get("tol", 1e-3)))
    report = {"check": "hypotheses", "H0": h0.to_dict(), "H1": h1.to_dict(), "pass": h0.passed and h1.passed}
    out.json(f"{prefix}.json", report)
    return report


def run_comparison(cfg: RunConfig, params, out: Output, prefix="comparison"):
    rng = np.random.default_rng(cfg.seed)
    pairs = int(params.get("pairs", 20))
    t_end = float(params.get("t_end", 1.0))
    M0 = cfg.reaction.M0
    worst, failures = math.inf, 0
    for _ in range(pairs):
        a = random_smooth_field(cfg.domain, rng, 0.0, M0).values
        b = random_smooth_field(cfg.domain, rng, 0.0, M0).values
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        rep = comparison_harness(Field(cfg.domain, lo), Field(cfg.domain, hi), t_end, cfg.dispersal, cfg.reaction, cfg.integrator)
        worst = min(worst, rep.min_gap)
        failures += not rep.passed
    report = {"check": "comparison", "pairs": pairs, "min_gap": worst, "failures": failures, "pass": failures == 0}
    out.json(f"{prefix}.json", report)
    return report


CHECKS = {
    "speed": run_speed,
    "eigen": run_eigen,
    "attractor": run_attractor,
    "liouville": run_liouville,
    "tail": run_tail,
    "cone": run_cone,
    "hypotheses": run_hypotheses,
    "comparison": run_comparison,
}


def run_verify(cfg: RunConfig, params, out: Output):
    checks = params.get("checks", [])
    if not checks:
        raise ConfigurationError("verify needs a non-empty list of checks", "experiment.checks")
    results, aborted = [], None
    for i, item in enumerate(checks):
        name = item.get("check")
        if name not in CHECKS:
            raise ConfigurationError(f"unknown check {name!r}", f"experiment.checks[{i}].check")
        entry = {"index": i, "check": name, "expect": item.get("expect", "pass")}
        if aborted is not None:
            entry.update(status="skipped", reason=f"aborted after error in check {aborted}")
            results.append(entry)
            continue
        try:
            rep = CHECKS[name](cfg, item, out, prefix=f"check_{i}_{name}")
        except KPPLabError as exc:
            aborted = i
            entry.update(status="error", error=f"{type(exc).__name__}: {exc}", degenerate=isinstance(exc, DegenerateMediumError))
            results.append(entry)
            continue
        raw = bool(rep.get("pass"))
        ok = raw if entry["expect"] == "pass" else not raw
        entry.update(status="pass" if ok else "fail", raw_pass=raw, expected_failure=entry["expect"] == "fail")
        results.append(entry)
    passed = all(r["status"] == "pass" for r in results)
    report = {"check": "verify", "results": results, "pass": passed}
    out.json("verify.json", report)
    return report


COMMANDS = {
    "simulate": run_simulate,
    "speed": run_speed,
    "eigen": run_eigen,
    "attractor": run_attractor,
    "liouville": run_liouville,
    "tail": run_tail,
    "verify": run_verify,
}


def build_parser():
    p = argparse.ArgumentParser(prog="kpp-lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", type=Path)
        sp.add_argument("--output-dir", type=Path, default=None)
        sp.add_argument("--seed", type=int, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.output_dir is not None:
        cfg.output_dir = args.output_dir
    if args.seed is not None:
        cfg.seed = args.seed

    out = Output(cfg.output_dir)
    started = time.perf_counter()
    code = EXIT_PASS
    try:
        report = COMMANDS[args.command](cfg, cfg.experiment, out)
        if not report.get("pass", False):
            code = EXIT_FAIL
            if args.command == "verify" and any(r.get("degenerate") for r in report["results"]):
                code = EXIT_DEGENERATE
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except DegenerateMediumError as exc:
        print(str(exc), file=sys.stderr)
        out.json("error.json", {"error": "degenerate_medium", "lambda": exc.lam})
        code = EXIT_DEGENERATE
    except KPPLabError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        out.json("error.json", {"error": type(exc).__name__, "message": str(exc)})
        code = EXIT_FAIL
    out.finish(
        args.command,
        {
            "command": args.command,
            "config": str(args.config),
            "exit_code": code,
            "runtime_seconds": time.perf_counter() - started,
            "finished_at": datetime.now(timezone.utc).isoformat(),
        },
    )
    return code


if __name__ == "__main__":
    sys.exit(main())
