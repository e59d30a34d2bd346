import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import cover_law_by_chain, srw_cover_tail
from rwre_lab.environment import UNIFORM_AXIS, axis_env, constant_env, sample_iid, srw_env
from rwre_lab.lattice import Cylinder
from rwre_lab.walk import (BoxExhausted, StepCapHit, StopRule, cover_time, cover_time_statistics,
                           cover_times, exit_sample, exit_sample_batch, run, run_batch)


def test_step_cap_zero_is_empty_path():
    env = srw_env(3, 2)
    p = run(env, (0, 0), StopRule.step_cap(0), 1)
    assert p.length == 0 and p.end == (0, 0, 0)


@given(st.integers(0, 2 ** 40), st.integers(0, 1000))
@settings(max_examples=20)
def test_paths_use_positive_probability_moves(seed, index):
    env = sample_iid(UNIFORM_AXIS, 12, seed, 2)
    p = run(env, (0, 0), StopRule.exit_ball(6), seed, index=index)
    for x, y in zip(p.sites[:-1], p.sites[1:]):
        diff = y - x
        assert np.abs(diff).sum() == 1
        k = int(np.flatnonzero(diff)[0]) + (2 if diff.sum() < 0 else 0)
        assert env.kernel(tuple(x))[k] > 0


def test_balanced_walk_is_martingale():
    env = sample_iid(UNIFORM_AXIS, 12, 4, 2)
    c = Cylinder(6, (1, -1), 0)
    end = exit_sample_batch(env, (1, -1, 0), c, 9, 100_000)
    for i, x0 in enumerate((1, -1)):
        v = end[:, i].astype(float)
        se = v.std(ddof=1) / math.sqrt(v.size)
        assert abs(v.mean() - x0) < 4 * se


@pytest.mark.parametrize("k,x", [(5, 0), (5, 3), (8, -2)])
def test_one_dimensional_exit_time(k, x):
    env = srw_env(k + 1, 1)
    res = run_batch(env, (x,), StopRule.exit_ball(k), 2, 40_000)
    T = res.steps.astype(float)
    assert abs(T.mean() - (k * k - x * x)) < 4 * T.std(ddof=1) / math.sqrt(T.size)


def test_one_dimensional_exit_symmetry():
    env = srw_env(6, 1)
    end = exit_sample_batch(env, (0,), Cylinder(5, (0,), 0), 3, 40_000)
    # exits through the rim must split evenly between the two sides
    rim = end[end[:, 0] != 0][:, 0]
    frac = np.mean(rim > 0)
    assert abs(frac - 0.5) < 3 * math.sqrt(0.25 / rim.size)


def test_exit_from_boundary_is_immediate():
    env = srw_env(6, 2)
    c = Cylinder(3, (0, 0), 0)
    assert exit_sample(env, (3, 0, 0), c, 1) == ((3, 0, 0), 0)
    assert exit_sample(env, (0, 0, 9), c, 1) == ((0, 0, 9), 0)


def test_cover_time_one_dimension():
    env = srw_env(4, 1)
    assert all(cover_time(env, (0,), 10, 5, index=i) == (1, False) for i in range(20))


def test_srw_cover_law():
    env = srw_env(40, 2)
    T, capped = cover_times(env, (0, 0), 10 ** 4, 6, 100_000)
    assert not capped.any()
    T = T.astype(float)
    assert abs(T.mean() - cover_law_by_chain(2)) < 3 * T.std(ddof=1) / math.sqrt(T.size)
    p = srw_cover_tail(5)
    assert p == 1 / 16
    assert abs(np.mean(T > 5) - p) < 4 * math.sqrt(p * (1 - p) / T.size)


def test_single_axis_never_covers():
    env = axis_env(0, 50, 2)
    for k in (1, 5, 20):
        T, capped = cover_time(env, (0, 0), k, 1)
        assert capped and T == k


def test_cover_statistics():
    env = srw_env(30, 2)
    stats = cover_time_statistics(env, [(0, 0), (2, 1)], 5, 2000, 3)
    assert np.all(np.abs(stats.per_site_mean - 3) < 0.3)
    assert stats.max_tail < 0.1
    assert math.isinf(cover_time_statistics(axis_env(0, 60, 2), [(0, 0)], 5, 1000, 1, guard=50).mean_power)
    with pytest.raises(ValueError):
        cover_time_statistics(env, [(0, 0)], 5, 10, 3)


def test_exhaustion_and_cap_errors():
    env = axis_env(0, 3, 2)
    rule = StopRule.hit_set([(0, 1)])
    with pytest.raises(BoxExhausted):
        run(env, (0, 0), rule, 1)
    with pytest.raises(BoxExhausted):
        run_batch(env, (0, 0), rule, 1, 10)
    big = constant_env([0.5, 0.0, 0.5, 0.0], 400)
    with pytest.raises(StepCapHit):
        run_batch(big, (0, 0), rule, 1, 10, guard=50)
    # an explicit cap is an outcome, not an error
    res = run_batch(big, (0, 0), StopRule.first_of(rule, StopRule.step_cap(50)), 1, 10)
    assert np.all(res.steps == 50)


def test_start_outside_box_rejected():
    with pytest.raises(ValueError):
        run(srw_env(2, 2), (5, 0), StopRule.step_cap(3), 0)


def test_batch_slices_are_consistent():
    env = sample_iid(UNIFORM_AXIS, 10, 1, 2)
    rule = StopRule.exit_ball(5)
    whole = run_batch(env, (0, 0), rule, 7, 200)
    tail = run_batch(env, (0, 0), rule, 7, 50, first=150)
    assert np.array_equal(whole.end[150:], tail.end)
    assert np.array_equal(run_batch(env, (0, 0), rule, 7, 200, workers=3).end, whole.end)
