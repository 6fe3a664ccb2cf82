"""Run configuration: one JSON file with domain, dispersal, reaction, integrator and experiment blocks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dispersal import DiscreteDispersal, KernelSpec, NonlocalDispersal, RandomDispersal, unit_vectors
from .domain_grid import LATTICE, Domain, Field, build_domain, read_field_csv
from .errors import ConfigurationError, KPPLabError
from .evolve import IntegratorSpec
from .reaction import (
    CoefficientTable,
    LocalizedPerturbation,
    ParametricKPP,
    PeriodicCoefficient,
    TrigTerm,
)


@dataclass
class RunConfig:
    domain: Domain
    dispersal: object
    reaction: ParametricKPP
    integrator: IntegratorSpec
    record_every: int = 100
    experiment: dict = field(default_factory=dict)
    output_dir: Path = Path("kpp_out")
    seed: int = 0
    base_dir: Path = Path(".")


def _get(block, key, path, cast=float, default=None, required=False):
    if key not in block or block[key] is None:
        if required:
            raise ConfigurationError("missing required field", f"{path}.{key}")
        return default
    try:
        return cast(block[key])
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad value {block[key]!r} ({exc})", f"{path}.{key}") from None


def _resolve(base_dir, p, path):
    full = (base_dir / p).resolve()
    if not full.exists():
        raise ConfigurationError(f"file {p} does not exist", path)
    return full


def parse_domain(block) -> Domain:
    if not isinstance(block, dict):
        raise ConfigurationError("domain block must be an object", "domain")
    return build_domain(block)


def parse_dispersal(block, domain: Domain, base_dir: Path):
    kind = block.get("kind", "random")
    if kind == "random":
        spec = RandomDispersal()
    elif kind == "nonlocal":
        kb = block.get("kernel", {}) or {}
        if "table" in kb:
            spec = NonlocalDispersal(KernelSpec.from_csv(_resolve(base_dir, kb["table"], "dispersal.kernel.table")))
        else:
            spec = NonlocalDispersal(KernelSpec(radius=_get(kb, "radius", "dispersal.kernel", default=1.0)))
    elif kind == "discrete":
        if "rates" in block:
            rates = {}
            for i, item in enumerate(block["rates"]):
                try:
                    rates[tuple(int(c) for c in item["k"])] = float(item["a"])
                except (KeyError, TypeError, ValueError):
                    raise ConfigurationError("each rate needs 'k' (unit vector) and 'a'", f"dispersal.rates[{i}]") from None
            spec = DiscreteDispersal(rates)
        else:
            rate = _get(block, "rate", "dispersal", default=1.0)
            spec = DiscreteDispersal({k: rate for k in unit_vectors(domain.dim)})
    else:
        raise ConfigurationError(f"unknown dispersal kind {kind!r}", "dispersal.kind")

    if (kind == "discrete") != (domain.kind == LATTICE):
        raise ConfigurationError(
            f"{kind} dispersal is incompatible with a {domain.kind} domain", "dispersal.kind"
        )
    return spec


def parse_coefficient(value, path, domain: Domain, base_dir: Path) -> PeriodicCoefficient:
    if isinstance(value, (int, float)):
        return PeriodicCoefficient(float(value))
    if not isinstance(value, dict):
        raise ConfigurationError("expected a number or an object", path)
    if "table" in value:
        table = CoefficientTable.from_csv(
            _resolve(base_dir, value["table"], f"{path}.table"), domain.spacing, domain.cell.shape
        )
        return PeriodicCoefficient(table=table)
    terms = []
    for i, t in enumerate(value.get("terms", [])):
        try:
            modes = t.get("space_modes", [])
            if len(modes) not in (0, domain.dim):
                raise ValueError(f"space_modes needs {domain.dim} entries")
            terms.append(
                TrigTerm(float(t["amplitude"]), t.get("kind", "cos"), int(t.get("time_mode", 0)), tuple(modes))
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad trig term ({exc})", f"{path}.terms[{i}]") from None
    return PeriodicCoefficient(_get(value, "constant", path, default=0.0), tuple(terms))


def parse_reaction(block, domain: Domain, base_dir: Path) -> ParametricKPP:
    if block.get("preset") == "fisher":
        block = {"r0": 1.0, "b": 1.0, **{k: v for k, v in block.items() if k != "preset"}}
    if "r0" not in block:
        raise ConfigurationError("missing required field", "reaction.r0")
    r0 = parse_coefficient(block["r0"], "reaction.r0", domain, base_dir)
    b = parse_coefficient(block.get("b", 1.0), "reaction.b", domain, base_dir)
    drb = block.get("dr") or {}
    try:
        table = None
        if drb.get("shape") == "table":
            rows = np.loadtxt(_resolve(base_dir, drb["table"], "reaction.dr.table"), delimiter=",", ndmin=2)
            table = tuple(map(tuple, rows))
        dr = LocalizedPerturbation(
            drb.get("shape", "none"),
            float(drb.get("amplitude", 0.0 if drb.get("shape", "none") == "none" else 1.0)),
            float(drb.get("radius", 1.0)),
            float(drb.get("rate", 1.0)),
            table,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"bad perturbation ({exc})", "reaction.dr") from None
    T = _get(block, "T", "reaction", default=1.0)
    periods = block.get("periods")
    if periods is not None and [float(p) for p in np.atleast_1d(periods)] != list(domain.periods):
        raise ConfigurationError("reaction periods must match domain periods", "reaction.periods")
    return ParametricKPP(r0, b, dr, T, domain.periods, _get(block, "M0", "reaction"))


def parse_integrator(block):
    try:
        integ = IntegratorSpec(block.get("scheme", "euler"), block.get("dt"), float(block.get("safety", 0.9)))
    except ValueError as exc:
        raise ConfigurationError(str(exc), "integrator") from None
    record_every = _get(block, "record_every", "integrator", int, default=100)
    if record_every < 1:
        raise ConfigurationError("record_every must be >= 1", "integrator.record_every")
    return integ, record_every


def parse_config(raw: dict, base_dir=Path(".")) -> RunConfig:
    base_dir = Path(base_dir)
    for key in ("domain", "reaction"):
        if key not in raw:
            raise ConfigurationError("missing required block", key)
    domain = parse_domain(raw["domain"])
    dispersal = parse_dispersal(raw.get("dispersal", {}) or {}, domain, base_dir)
    reaction = parse_reaction(raw["reaction"], domain, base_dir)
    integ, record_every = parse_integrator(raw.get("integrator", {}) or {})
    return RunConfig(
        domain,
        dispersal,
        reaction,
        integ,
        record_every,
        dict(raw.get("experiment", {}) or {}),
        Path(raw.get("output_dir", "kpp_out")),
        int(raw.get("seed", 0)),
        base_dir,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON: {exc}") from None
    return parse_config(raw, path.parent)


def build_start(spec, cfg: RunConfig, rng: np.random.Generator, path="experiment.starts"):
    """Attractor start: a number, "k*M0" / "M0+c" strings, or a positive seed field object."""
    M0 = cfg.reaction.M0
    if isinstance(spec, (int, float)):
        return float(spec)
    if isinstance(spec, str):
        s = spec.replace(" ", "")
        try:
            if s.endswith("*M0"):
                return float(s[:-3]) * M0
            if s.startswith("M0+"):
                return M0 + float(s[3:])
            if s == "M0":
                return M0
        except ValueError:
            pass
        raise ConfigurationError(f"cannot parse start {spec!r}", path)
    if isinstance(spec, dict):
        return build_initial(spec, cfg, rng, path)
    raise ConfigurationError(f"cannot parse start {spec!r}", path)


def build_initial(block, cfg: RunConfig, rng: np.random.Generator, path="experiment.initial") -> Field:
    """Initial field from a config object.

    Kinds: constant(value), bump(amplitude, radius), cosine(base, amplitude,
    wavenumber), random(low, high, smoothing), front(profile, xi, offset,
    delta0), csv(path).
    """
    from .analysis import make_front_profile

    d = cfg.domain
    kind = block.get("kind", "constant")
    if kind == "constant":
        return Field.constant(d, _get(block, "value", path, required=True))
    if kind == "bump":
        amp = _get(block, "amplitude", path, default=1.0)
        rad = _get(block, "radius", path, default=5.0)
        return Field.from_function(d, lambda x: amp * np.clip(1 - np.sum(x**2, axis=-1) / rad**2, 0, None))
    if kind == "cosine":
        base = _get(block, "base", path, default=0.5)
        amp = _get(block, "amplitude", path, default=0.2)
        k = _get(block, "wavenumber", path, default=1.0)
        return Field.from_function(d, lambda x: base + amp * np.cos(k * x[..., 0]) ** 2)
    if kind == "random":
        lo = _get(block, "low", path, default=0.1)
        hi = _get(block, "high", path, default=1.0)
        return random_smooth_field(d, rng, lo, hi)
    if kind == "front":
        xi = block.get("xi", [1.0] + [0.0] * (d.dim - 1))
        return make_front_profile(
            d,
            xi,
            block.get("profile", "step"),
            _get(block, "offset", path, default=0.0),
            _get(block, "delta0", path, default=0.5),
        )
    if kind == "csv":
        u = read_field_csv(_resolve(cfg.base_dir, block["path"], f"{path}.path"))
        if u.domain != d:
            raise ConfigurationError("initial field domain differs from the configured domain", f"{path}.path")
        return u
    raise ConfigurationError(f"unknown initial kind {kind!r}", f"{path}.kind")


def random_smooth_field(domain: Domain, rng: np.random.Generator, low=0.0, high=1.0, modes=6) -> Field:
    """Random trigonometric field rescaled into [low, high]."""
    x = domain.coords
    span = 2 * domain.half_extent
    acc = np.zeros(domain.shape)
    for _ in range(modes):
        k = rng.uniform(0.5, 6.0, size=domain.dim) * 2 * np.pi / span
        acc += rng.normal() * np.cos(x @ k + rng.uniform(0, 2 * np.pi))
    lo, hi = acc.min(), acc.max()
    scaled = (acc - lo) / (hi - lo) if hi > lo else np.zeros_like(acc)
    return Field(domain, low + (high - low) * scaled)


__all__ = [
    "RunConfig",
    "load_config",
    "parse_config",
    "build_initial",
    "build_start",
    "random_smooth_field",
    "KPPLabError",
]
