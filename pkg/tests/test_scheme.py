import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emdini.errors import ConfigurationError, InterpolationError, SimulationBlowup
from emdini.model import SdeModel, zoo
from emdini.path import coarsen, generate
from emdini.scheme import (
    Trajectory,
    em_interpolant_paths,
    em_interpolate,
    em_paths,
    em_simulate,
    exact_gbm,
    exact_trajectory,
    sup_distance,
    sup_norm_paths,
)


def _loop_em(b, s, dw, dt, x0):
    # scalar reference recursion written out directly
    y = [x0]
    for i, w in enumerate(dw):
        t = i * dt
        y.append(y[-1] + b(t, y[-1]) * dt + s(t, y[-1]) * w)
    return np.array(y)


def test_em_matches_hand_recursion():
    g = generate(1, 1.0, 50, 2, 0)
    traj = em_simulate(zoo("bounded_nondeg"), g, 0.5)
    ref = _loop_em(lambda t, y: math.sin(y), lambda t, y: 1 + 0.5 * math.sin(y), g.increments[:, 0], g.dt, 0.5)
    np.testing.assert_allclose(traj.states[:, 0], ref, rtol=0, atol=1e-14)
    assert traj.scheme == "euler_maruyama" and traj.step == g.dt


def test_pure_bm_em_is_cumulative_sum():
    g = generate(2, 1.0, 64, 1, 0)
    traj = em_simulate(zoo("pure_bm", d=2), g, [1.0, -1.0])
    acc = np.array([1.0, -1.0])
    for i in range(64):
        acc = acc + g.increments[i]
        np.testing.assert_array_equal(traj.states[i + 1], acc)


def test_gbm_exact_closed_form():
    g = generate(1, 2.0, 40, 3, 0)
    traj = exact_gbm(0.1, 0.2, g, 1.5)
    w = np.concatenate([[0.0], np.cumsum(g.increments[:, 0])])
    t = np.arange(41) * 0.05
    np.testing.assert_allclose(traj.states[:, 0], 1.5 * np.exp((0.1 - 0.02) * t + 0.2 * w), rtol=1e-14)
    np.testing.assert_allclose(exact_trajectory(zoo("gbm"), g, 1.5).states, traj.states, rtol=1e-15)


def test_em_converges_to_gbm_exact_on_one_path():
    g = generate(1, 1.0, 2 ** 14, 9, 0)
    ex = exact_gbm(0.1, 0.2, g, 1.0)
    errs = [sup_distance(em_simulate(zoo("gbm"), coarsen(g, f), 1.0), ex) for f in (256, 16, 1)]
    assert errs[0] > errs[1] > errs[2]


def test_interpolant_on_coarse_points_returns_state():
    g = generate(1, 1.0, 64, 2, 0)
    c = coarsen(g, 8)
    m = zoo("bounded_nondeg")
    traj = em_simulate(m, c, 0.5)
    for j in range(9):
        np.testing.assert_array_equal(em_interpolate(traj, m, c, j * c.dt), traj.states[j])


def test_interpolant_formula_between_points():
    g = generate(1, 1.0, 64, 2, 0)
    c = coarsen(g, 8)
    m = zoo("bounded_nondeg")
    traj = em_simulate(m, c, 0.5)
    s = 3 * c.dt + 5 * g.dt
    y = traj.states[3, 0]
    dw = g.increments[24:29, 0].sum()
    expect = y + math.sin(y) * 5 * g.dt + (1 + 0.5 * math.sin(y)) * dw
    assert em_interpolate(traj, m, c, s)[0] == pytest.approx(expect, abs=1e-14)


def test_interpolant_rejects_off_grid_times():
    g = generate(1, 1.0, 64, 2, 0)
    c = coarsen(g, 8)
    traj = em_simulate(zoo("pure_bm"), c, 0.0)
    with pytest.raises(InterpolationError):
        em_interpolate(traj, zoo("pure_bm"), c, 0.3 * g.dt)
    with pytest.raises(InterpolationError):
        em_interpolate(traj, zoo("pure_bm"), c, 2.0)


def test_batched_interpolant_matches_single():
    m = zoo("bounded_nondeg")
    g = generate(1, 1.0, 32, 4, 0)
    c = coarsen(g, 4)
    traj = em_simulate(m, c, 0.2)
    full = em_interpolant_paths(m, traj.states[None], g.increments[None], 4, c.dt)[0]
    for k in range(33):
        np.testing.assert_allclose(full[k], em_interpolate(traj, m, c, k * g.dt), rtol=0, atol=1e-14)


def test_blowup_is_flagged_and_raised():
    def explode(t, x):
        return 1e8 * x * x

    m = SdeModel(1, explode, zoo("pure_bm").diffusion, "explode")
    g = generate(1, 1.0, 16, 0, 0)
    with pytest.raises(SimulationBlowup) as info:
        em_simulate(m, g, 1.0)
    assert info.value.step >= 1
    states, blown, first = em_paths(m, g.increments[None], g.dt, 1.0)
    assert blown[0] and np.all(np.isfinite(states))


def test_record_every_keeps_coarse_states():
    m = zoo("bounded_nondeg")
    inc = generate(1, 1.0, 16, 0, 0).increments[None]
    full, _, _ = em_paths(m, inc, 1 / 16, 0.5)
    sparse, _, _ = em_paths(m, inc, 1 / 16, 0.5, record_every=4)
    np.testing.assert_array_equal(sparse, full[:, ::4])


def test_sup_distance_on_nested_grids():
    fine = Trajectory(np.linspace(0, 1, 9), np.arange(9.0)[:, None], "exact", None, np.zeros(1))
    coarse = Trajectory(np.linspace(0, 1, 3), np.array([[0.0], [5.0], [8.0]]), "exact", None, np.zeros(1))
    assert sup_distance(fine, coarse) == 1.0
    assert sup_distance(coarse, fine, p=2) == 1.0


def test_sup_distance_incompatible_grids():
    a = Trajectory(np.linspace(0, 1, 4), np.zeros((4, 1)), "exact", None, np.zeros(1))
    b = Trajectory(np.linspace(0, 1, 3), np.zeros((3, 1)), "exact", None, np.zeros(1))
    with pytest.raises(ConfigurationError):
        sup_distance(a, b)


@settings(max_examples=50, deadline=None)
@given(arr=st.lists(st.floats(-10, 10), min_size=6, max_size=6))
def test_sup_norm_paths_matches_definition(arr):
    diff = np.array(arr).reshape(1, 3, 2)
    assert sup_norm_paths(diff)[0] == pytest.approx(max(np.linalg.norm(r) for r in diff[0]))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6), x0=st.floats(-2, 2))
def test_em_is_deterministic(seed, x0):
    g = generate(1, 1.0, 32, seed, 0)
    a = em_simulate(zoo("bounded_nondeg"), g, x0).states
    b = em_simulate(zoo("bounded_nondeg"), g, x0).states
    np.testing.assert_array_equal(a, b)
