import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from plcbf import policies as pol
from plcbf.dynamics import double_integrator, flow, quadrotor12, vehicle8
from plcbf.errors import ConfigError


@pytest.fixture
def di():
    return double_integrator()


def test_stop_examples(di):
    stop = pol.stop("stop", di)
    assert_array_equal(stop.action([1, 2, 0, 0]), [0, 0])
    assert_array_equal(stop.action([0, 0, 2, 0]), [-1, 0])


def test_pd_fixed_point(di):
    nom = pol.pd_goal("nom", di, (3.0, -2.0))
    assert_array_equal(nom.action([3.0, -2.0, 0, 0]), [0, 0])


def test_evade_directions(di):
    up = pol.evade("up", di, "up")
    down = pol.evade("down", di, "down")
    assert_array_equal(up.action([0, 0, 2, 0]), [0, 1])
    assert_array_equal(down.action([0, 0, 2, 0]), [0, -1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=2))
def test_clamp_idempotent(u):
    m = double_integrator(u_max=1.5)
    once = m.clamp(u)
    assert_array_equal(m.clamp(once), once)
    assert np.all(once <= 1.5) and np.all(once >= -1.5)


@settings(max_examples=50, deadline=None)
@given(x=st.lists(st.floats(-50, 50), min_size=4, max_size=4), t=st.floats(0, 10))
def test_actions_stay_in_bounds(x, t):
    m = double_integrator(u_max=[1.0, 2.0])
    for p in (pol.pd_goal("n", m, (0, 0)), pol.stop("s", m), pol.evade("e", m),
              pol.sinusoid("w", m, 0.5, 3.0, 1.0)):
        u = p.action(x, t)
        assert np.all(u >= m.input_lower) and np.all(u <= m.input_upper)
        assert_array_equal(p.action(x, t), u)


def test_library_orders_by_rank(di):
    lib = pol.library_from_config([{"id": "up", "type": "evade", "rank": 2},
                                   {"id": "nom", "type": "pd_goal", "params": {"goal": [1, 0]}, "rank": 0},
                                   {"id": "stop", "type": "stop", "rank": 1}], di)
    assert lib.ids == ("nom", "stop", "up")
    ranks = [p.rank for p in lib]
    assert ranks == sorted(set(ranks))
    assert lib.nominal.id == "nom"


def test_library_four_policies(di):
    spec = [{"id": "nom", "type": "pd_goal", "params": {"goal": [10, 0]}, "rank": 0},
            {"id": "stop", "type": "stop", "rank": 1},
            {"id": "up", "type": "evade", "params": {"direction": "up"}, "rank": 2},
            {"id": "down", "type": "evade", "params": {"direction": "down"}, "rank": 3}]
    lib = pol.library_from_config(spec, di)
    assert len(lib) == 4 and lib.ids == ("nom", "stop", "up", "down")


@pytest.mark.parametrize("spec", [
    [],
    [{"id": "stop", "type": "stop", "rank": 1}],
    [{"id": "a", "type": "stop", "rank": 0}, {"id": "a", "type": "evade", "rank": 1}],
    [{"id": "a", "type": "stop", "rank": 0}, {"id": "b", "type": "evade", "rank": 0}],
    [{"id": "a", "type": "teleport", "rank": 0}],
    [{"id": "a", "type": "stop", "rank": 0, "params": {"bogus": 1}}],
    [{"id": "a", "type": "lane_keep", "rank": 0}],
])
def test_library_errors(di, spec):
    with pytest.raises(ConfigError):
        pol.library_from_config(spec, di)


def test_stop_speed_nonincreasing(di):
    traj = flow(di, pol.stop("stop", di), [0, 0, 1.5, -1.2], 4.0, 0.02)
    speed = np.linalg.norm(traj.states[:, 2:], axis=1)
    assert np.all(np.diff(speed) <= 1e-15)


def test_piecewise_constant_segments(di):
    p = pol.piecewise_constant("pc", di, [[1, 0], [0, 1], [-1, 0]], 0.5)
    assert_array_equal(p.action([0, 0, 0, 0], 0.0), [1, 0])
    assert_array_equal(p.action([0, 0, 0, 0], 0.75), [0, 1])
    assert_array_equal(p.action([0, 0, 0, 0], 1.2), [-1, 0])
    assert_array_equal(p.action([0, 0, 0, 0], 9.0), [-1, 0])


def test_vehicle_policies():
    m = vehicle8()
    x = np.array([0, 0, 0, 20, 0, 0, 0, 20 / 0.3])
    brake = pol.stop("stop", m)
    assert brake.action(x)[1] < 0
    traj = flow(m, brake, x, 8.0, 0.02)
    assert traj.terminal[3] < 0.5 and traj.terminal[7] >= 0
    left = pol.evade("left", m, "up", y_target=3.5)
    traj = flow(m, left, x, 5.0, 0.02)
    assert traj.terminal[1] == pytest.approx(3.5, abs=0.3)


def test_quadrotor_stop_brakes_to_hover():
    m = quadrotor12()
    x = np.zeros(12)
    x[3] = 3.0
    x[2] = 2.0
    traj = flow(m, pol.stop("stop", m), x, 3.0, 0.01)
    assert np.linalg.norm(traj.terminal[3:6]) < 0.05
    assert abs(traj.terminal[2] - 2.0) < 0.1


def test_policy_kind_must_match_model():
    with pytest.raises(ConfigError):
        pol.waypoint("wp", double_integrator(), (0, 0, 0))
