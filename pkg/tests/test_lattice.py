import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import ball_by_loops, interior_by_loops, linf_boundary_by_loops
from rwre_lab.lattice import (Cylinder, ball_points, cylinder_sets, interior_points, k_minus, k_plus,
                              outer_boundary, parity_filter, parity_of, q_domain, q_extended, strict_times)


def as_set(a):
    return {tuple(int(v) for v in r) for r in np.asarray(a)}


def test_ball_examples():
    assert as_set(ball_points(1, (0, 0), 2)) == {(0, 0)}
    assert len(ball_points(1.5, (0, 0), 2)) == 9
    assert as_set(ball_points(1, (5, 5), 2)) == {(5, 5)}


def test_ball_rejects_non_positive():
    with pytest.raises(ValueError):
        ball_points(0, None, 2)


@given(st.floats(0.3, 7.0), st.integers(1, 3),
       st.lists(st.integers(-20, 20), min_size=3, max_size=3))
def test_ball_matches_loops_and_translates(R, d, c):
    c = tuple(c[:d])
    got = ball_points(R, c, d)
    assert sorted(as_set(got)) == ball_by_loops(R, c, d)
    assert as_set(got) == as_set(ball_points(R, None, d) + np.array(c))


def test_interior_examples():
    assert as_set(interior_points(2, 2)) == {(0, 0)}
    assert interior_points(1.2, 2).shape[0] == 0
    with pytest.raises(ValueError):
        interior_points(1.0, 2)


@pytest.mark.parametrize("d,Rmax", [(1, 12), (2, 12), (3, 8)])
def test_interior_matches_enumeration(d, Rmax):
    for R in np.arange(1.25, Rmax + 0.01, 0.75 if d == 3 else 0.25):
        o = interior_points(R, d)
        assert sorted(as_set(o)) == interior_by_loops(R, d)
        if o.shape[0]:
            assert as_set(o) | as_set(outer_boundary(o)) <= as_set(ball_points(R, None, d))


@pytest.mark.parametrize("d", [1, 2])
def test_closure_is_ball_at_integer_radii(d):
    for R in range(2, 13):
        o = interior_points(R, d)
        assert as_set(o) | as_set(outer_boundary(o)) == as_set(ball_points(R, None, d))


def test_closure_identity_gaps():
    # The largest admissible interior misses B_R points in these cases, so no
    # interior set can have closure exactly B_R there.
    o = interior_points(3, 3)
    closure = as_set(o) | as_set(outer_boundary(o))
    assert (-2, -2, 0) in as_set(ball_points(3, None, 3)) - closure
    o = interior_points(2 + 1e-9, 2)
    closure = as_set(o) | as_set(outer_boundary(o))
    assert as_set(ball_points(2 + 1e-9, None, 2)) - closure == {(2, 0), (-2, 0), (0, 2), (0, -2)}


def test_outer_boundary_matches_loops():
    sites = ball_points(3.3, None, 2)
    assert sorted(as_set(outer_boundary(sites))) == linf_boundary_by_loops(sites)


def test_cylinder_sets_r2():
    cs = cylinder_sets(Cylinder(2, (0, 0), 0))
    ball = as_set(ball_points(2, None, 2))
    for p in cs.K_boundary:
        x, t = tuple(p[:-1]), int(p[-1])
        assert t == 4 or (x not in ball and 0 <= t <= 4)
    assert not (as_set(cs.K) & as_set(cs.K_boundary))


def test_cylinder_r3_counts_and_closure():
    c = Cylinder(3, (0, 0), 0)
    cs = cylinder_sets(c)
    n_ball = len(ball_by_loops(3, (0, 0), 2))
    assert cs.K.shape[0] == n_ball * 9
    closure = as_set(c.domain().closure_points())
    assert as_set(cs.K) | as_set(cs.K_boundary) == closure
    assert len(closure) == cs.K.shape[0] + cs.K_boundary.shape[0]


@given(st.floats(1.1, 6.0), st.integers(0, 5))
def test_cylinder_disjoint_union(R, t0):
    c = Cylinder(R, (1, -2), t0)
    cs = cylinder_sets(c)
    k, kb = as_set(cs.K), as_set(cs.K_boundary)
    assert not (k & kb)
    assert k | kb == as_set(c.domain().closure_points())
    assert all(t0 <= p[-1] < t0 + math.ceil(R * R) for p in k)


def test_k_plus_minus_strict_windows():
    R = 2.0
    assert list(strict_times(2 * R * R, 3 * R * R)) == list(range(9, 12))
    assert list(strict_times(0, R * R)) == [1, 2, 3]
    assert set(k_plus(R)[:, -1].tolist()) == {9, 10, 11}
    assert set(k_minus(R)[:, -1].tolist()) == {1, 2, 3}


def test_q_domain_heights():
    assert q_domain(3.5, 2).n_steps == 12
    inner, bd = q_extended(4, 2, 2)
    assert inner[:, -1].max() == 15 and bd[:, -1].max() == 18
    assert not (as_set(inner) & as_set(bd))


def test_parity_examples():
    assert parity_of(np.array([[1, 0, 2]]))[0] == 1
    assert parity_filter(np.array([[1, 0, 2]]), "odd").shape[0] == 1
    assert parity_filter(np.array([[0, 0, 0]]), "even").shape[0] == 1
    with pytest.raises(ValueError):
        parity_filter(np.array([[0, 0, 0]]), "both")


@given(st.lists(st.tuples(st.integers(-9, 9), st.integers(-9, 9), st.integers(0, 20)), min_size=1, max_size=50))
def test_parity_partition(pts):
    G = np.array(pts, dtype=np.int64)
    o, e = parity_filter(G, "odd"), parity_filter(G, "even")
    assert o.shape[0] + e.shape[0] == G.shape[0]
    assert all((abs(p[0]) + abs(p[1]) + p[2]) % 2 == 1 for p in o.tolist())
