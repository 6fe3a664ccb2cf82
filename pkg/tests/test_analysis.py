import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpp_lab import analysis
from kpp_lab.dispersal import NonlocalDispersal, KernelSpec, RandomDispersal
from kpp_lab.domain_grid import Field, build_domain
from kpp_lab.errors import DomainTooSmallError, ExtinctionError, PreconditionError
from kpp_lab.evolve import Trajectory, solve
from kpp_lab.reaction import LocalizedPerturbation, ParametricKPP, PeriodicCoefficient, TrigTerm, fisher

SMALL = build_domain({"L": 10, "h": 0.1, "p": 1, "buffer": 2})


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(0.01, 100), min_size=3, max_size=3),
    st.lists(st.floats(0.01, 100), min_size=3, max_size=3),
    st.lists(st.floats(0.01, 100), min_size=3, max_size=3),
)
def test_part_metric_is_a_metric(u, v, w):
    u, v, w = map(np.array, (u, v, w))
    assert analysis.part_metric(u, u) == 0
    assert analysis.part_metric(u, v) == pytest.approx(analysis.part_metric(v, u))
    assert analysis.part_metric(u, w) <= analysis.part_metric(u, v) + analysis.part_metric(v, w) + 1e-12


def test_part_metric_scaling_and_domain():
    u = np.array([1.0, 2.0, 3.0])
    assert analysis.part_metric(u, 2 * u) == pytest.approx(math.log(2))
    with pytest.raises(PreconditionError):
        analysis.part_metric(u, np.array([1.0, 0.0, 1.0]))


def test_part_metric_contracts_under_flow():
    rng = np.random.default_rng(3)
    u0 = Field(SMALL, rng.uniform(0.1, 2.0, SMALL.shape))
    v0 = Field(SMALL, rng.uniform(0.1, 2.0, SMALL.shape))
    rep = analysis.part_metric_decay_test(u0, v0, 6, RandomDispersal(), fisher())
    assert rep.passed
    assert rep.rho[-1] < rep.rho[0]
    assert rep.delta_hat > 0


def test_attractor_of_fisher_is_one():
    res = analysis.find_attractor(RandomDispersal(), fisher(), SMALL, tol=1e-10)
    assert abs(res.min() - 1.0) < 1e-9 and abs(res.max() - 1.0) < 1e-9
    deltas = [h["sup_delta"] for h in res.history]
    assert deltas == sorted(deltas, reverse=True)
    assert len(res.phases) == 8 and res.phases[0] == 0.0


def test_attractor_start_must_be_admissible():
    with pytest.raises(PreconditionError):
        analysis.find_attractor(RandomDispersal(), fisher(), SMALL, start=0.5)
    with pytest.raises(PreconditionError):
        analysis.find_attractor(RandomDispersal(), fisher(), SMALL, start=Field.constant(SMALL, 0.0))


def test_extinction_on_decaying_medium():
    rx = ParametricKPP(PeriodicCoefficient(-1.0))
    with pytest.raises(ExtinctionError):
        analysis.find_attractor(RandomDispersal(), rx, SMALL, max_periods=100)


def test_time_periodic_attractor_phases():
    rx = ParametricKPP(PeriodicCoefficient(1.0, (TrigTerm(0.5, "sin", 1),)))
    res = analysis.find_attractor(RandomDispersal(), rx, SMALL, tol=1e-10)
    # spatially homogeneous, but varying over the period
    assert all(np.ptp(f.values) < 1e-10 for f in res.u_star)
    assert res.u_star[2].values[0] != pytest.approx(res.u_star[6].values[0], abs=1e-2)
    assert res.at_time(1.25) is res.at_phase(2)


def test_liouville_on_nonlocal_with_bump(monkeypatch):
    monkeypatch.setenv("KPP_LAB_THREADS", "2")
    assert analysis.worker_count() == 2
    rx = fisher(dr=LocalizedPerturbation("bump", 0.5, 3.0))
    seed = Field.from_function(SMALL, lambda x: 0.5 + 0.3 * np.cos(x[..., 0]))
    rep = analysis.liouville_check(NonlocalDispersal(KernelSpec(1.0)), rx, SMALL, [rx.M0, 3 * rx.M0, seed], tol=1e-9)
    assert rep.passed
    assert set(rep.pairwise) == {"0-1", "0-2", "1-2"}


def test_liouville_rejects_low_start():
    with pytest.raises(PreconditionError):
        analysis.liouville_check(RandomDispersal(), fisher(), SMALL, [0.5, 3.0])


def test_tail_profile_rejects_radius_in_buffer():
    res = analysis.find_attractor(RandomDispersal(), fisher(), SMALL)
    with pytest.raises(PreconditionError):
        analysis.tail_gap_profile(res, res, [2.0, 9.0])
    rep = analysis.tail_gap_profile(res, res, [2.0, 8.0])
    assert rep.passed and rep.gaps == [0.0, 0.0]


def test_front_profile_shape():
    u = analysis.make_front_profile(SMALL, (1.0,), "step", offset=2.0, delta0=0.4)
    x = SMALL.coords[..., 0]
    assert np.all(u.values[x >= 2.0] == 0)
    assert np.allclose(u.values[x <= 1.0], 0.4)
    assert np.all(np.diff(u.values) <= 0)


def test_front_position_interpolates():
    u = Field.from_function(SMALL, lambda x: np.clip(1 - (x[..., 0] + 3) / 4, 0, 1))
    assert analysis.front_position(u, (1.0,), 0.5) == pytest.approx(-1.0)
    assert math.isnan(analysis.front_position(Field.constant(SMALL, 0.0), (1.0,), 0.5))
    assert math.isinf(analysis.front_position(Field.constant(SMALL, 1.0), (1.0,), 0.5))


def test_track_front_recovers_known_speed():
    traj = Trajectory(SMALL)
    for t in np.linspace(0, 2, 21):
        traj.append(Field.from_function(SMALL, lambda x, t=t: 1 / (1 + np.exp(x[..., 0] - 1.5 * t + 3)), t=t))
    rec = analysis.track_front(traj, (1.0,), 0.5)
    assert rec.speed == pytest.approx(1.5, abs=1e-3)
    # the mirrored direction sees the front at the back, never crossing
    with pytest.raises(PreconditionError):
        analysis.track_front(traj, (-1.0,), 0.5)


def test_track_front_detects_small_domain():
    traj = Trajectory(SMALL)
    for t in (0.0, 1.0, 2.0):
        traj.append(Field.constant(SMALL, 1.0, t))
    with pytest.raises(DomainTooSmallError):
        analysis.track_front(traj, (1.0,), 0.5, transient=0.0)


def test_spreading_feature_check_cone():
    d = build_domain({"L": 60, "h": 0.1, "p": 1, "buffer": 5})
    u0 = Field.from_function(d, lambda x: 0.5 * np.clip(1 - x[..., 0] ** 2 / 4, 0, None))
    traj = solve(u0, (0, 15), RandomDispersal(), fisher(), record_every=300)
    good = analysis.spreading_feature_check(traj, (1.0,), 0.5, 3.0, Field.constant(d, 1.0))
    bad = analysis.spreading_feature_check(traj, (1.0,), 0.5, 1.0, Field.constant(d, 1.0))
    assert good.passed
    assert not bad.passed and bad.outer_max > 0.5


def test_front_speed_on_fisher():
    d = build_domain({"L": 100, "h": 0.1, "p": 1, "buffer": 10})
    res, rec, _ = analysis.front_speed(RandomDispersal(), fisher(), d, (1.0,), 30.0, offset=-60.0)
    assert res.c_star == pytest.approx(2.0, rel=0.08)
    assert rec.level == pytest.approx(0.5, abs=1e-6)
    assert res.method == "front_tracking"
