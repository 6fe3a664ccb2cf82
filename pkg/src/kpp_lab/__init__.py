"""Numerical lab for KPP reaction-dispersal equations u_t = A u + u f(t, x, u)."""

from .analysis import find_attractor, front_speed, liouville_check, part_metric, tail_gap_profile
from .dispersal import DiscreteDispersal, KernelSpec, NonlocalDispersal, RandomDispersal, TiltSpec
from .domain_grid import Domain, Field, build_domain
from .evolve import IntegratorSpec, comparison_harness, period_map, solve
from .reaction import LocalizedPerturbation, ParametricKPP, PeriodicCoefficient, TrigTerm, fisher
from .spectral import principal_growth, variational_speed

__version__ = "0.1.0"

__all__ = [
    "Domain",
    "Field",
    "build_domain",
    "RandomDispersal",
    "NonlocalDispersal",
    "DiscreteDispersal",
    "KernelSpec",
    "TiltSpec",
    "ParametricKPP",
    "PeriodicCoefficient",
    "TrigTerm",
    "LocalizedPerturbation",
    "fisher",
    "IntegratorSpec",
    "solve",
    "period_map",
    "comparison_harness",
    "principal_growth",
    "variational_speed",
    "find_attractor",
    "liouville_check",
    "tail_gap_profile",
    "part_metric",
    "front_speed",
]
