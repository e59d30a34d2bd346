import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from oracles import grid_area, grid_feasibility
from rwre_lab.abp import (ExtendedField, constraints, contact_csv, cover_outcomes, cover_outcomes_bruteforce,
                          feasible_point, polygon_area, random_admissible_field, slope_polytope_volume,
                          theta_volume, unit_ball_volume, upper_contact_set, verify_abp_chain)
from rwre_lab.backend import kernels
from rwre_lab.environment import UNIFORM_AXIS, SiteLaw, sample_iid, srw_env

seeds = st.integers(0, 2 ** 40)


def test_theta_volume_examples():
    assert theta_volume(0, 1, 2) == 0
    assert theta_volume(-1, 1, 2) == 0
    expected = math.pi / (3 * (2 + math.sqrt(2)) ** 2)
    assert abs(theta_volume(2, 1, 2) - expected) < 1e-15
    c = (2 + math.sqrt(2)) * 1.0
    num, _ = quad(lambda s: math.pi * (s / c) ** 2, 0, 1, epsabs=1e-14, epsrel=1e-14)
    assert abs(theta_volume(2, 1, 2) - num) < 1e-10
    with pytest.raises(ValueError):
        theta_volume(1, 0, 2)


@given(st.floats(0.01, 100), st.floats(0.1, 20), st.floats(0.1, 5), st.integers(1, 4))
def test_theta_volume_homogeneity(M, R, c, d):
    v = theta_volume(M, R, d)
    assert math.isclose(theta_volume(c * M, R, d), c ** (d + 1) * v, rel_tol=1e-12)
    assert math.isclose(theta_volume(M, c * R, d), v / c ** d, rel_tol=1e-12)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_theta_volume_quadrature(d):
    c = (2 + math.sqrt(d)) * 1.5
    num, _ = quad(lambda s: unit_ball_volume(d) * (s / c) ** d, 0, 3.5 / 2, epsabs=1e-14, epsrel=1e-14)
    assert abs(theta_volume(3.5, 1.5, d) - num) < 1e-10


def test_polygon_area_triangle():
    assert polygon_area(np.array([[0, 0], [4, 0], [0, 3]])) == 6.0
    assert polygon_area(np.array([[0, 0], [1, 1]])) == 0.0


def test_clipped_triangle_area():
    # p1 >= 0, p2 >= 0, p1 + p2 <= 2: vertices (0,0), (2,0), (0,2)
    A = np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]])
    b = np.array([0.0, 0.0, 2.0])
    verts = kernels.clip_polygon(A, b, (-10, 10, -10, 10), 0.0)
    assert abs(polygon_area(verts) - 2.0) < 1e-12
    ok, p = feasible_point(A, b, (-10, 10, -10, 10), 3)
    assert ok and np.all(A @ np.array(p) <= b + 1e-9)


@given(seeds, st.integers(3, 12))
@settings(max_examples=30)
def test_area_grows_when_constraint_dropped(seed, m):
    r = np.random.default_rng(seed)
    ang = r.uniform(0, 2 * np.pi, m)
    A = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    b = r.uniform(0.1, 2.0, m)
    box = (-50, 50, -50, 50)
    full = polygon_area(kernels.clip_polygon(A, b, box, 0.0))
    assert full >= 0
    j = int(r.integers(m))
    less = polygon_area(kernels.clip_polygon(np.delete(A, j, 0), np.delete(b, j), box, 0.0))
    assert less >= full - 1e-9


@given(seeds, st.integers(2, 10))
@settings(max_examples=40)
def test_lp_matches_grid_on_random_systems(seed, m):
    r = np.random.default_rng(seed)
    A = r.normal(size=(m, 2))
    b = r.normal(size=m)
    box = (-8, 8, -8, 8)
    ok, p = feasible_point(A, b, box, seed, eps=0.0)
    if ok:
        assert np.all(A @ np.array(p) <= b + 1e-9)
        assert grid_feasibility(A, b, relax=True)
    else:
        assert not grid_feasibility(A, b)


def test_contact_set_matches_slope_grid():
    # R = 3 gives the 7 x 7 site grid of O_R plus its ring; slopes stay inside [-8, 8]
    for seed in range(3):
        f = random_admissible_field(3, 2, seed)
        f.values *= 2.0 / max(1.0, f.values.max())
        sm = f.suffix_max()
        box = (-8.0, 8.0, -8.0, 8.0)
        got = {cp.point for cp in upper_contact_set(f, with_volume=False)}
        for s in range(f.top):
            for i in range(f.n_inner):
                A, b, self_slack = constraints(f, sm, i, s)
                pt = tuple(int(v) for v in f.sites[i]) + (s,)
                if self_slack < 0:
                    assert pt not in got
                    continue
                if pt in got:
                    assert grid_feasibility(A, b + 1e-9, relax=True)
                else:
                    assert not grid_feasibility(A, b)
                ok, _ = feasible_point(A, b, box, 1, eps=1e-9)
                assert ok == (pt in got)


def test_constant_field_contact_everywhere():
    f = ExtendedField.from_function(3, 2, lambda x, t: 1.0)
    cps = upper_contact_set(f)
    assert len(cps) == f.n_inner * f.top
    for cp in cps:
        assert cp.contains((0.0, 0.0))
        assert cp.volume == 0.0


def test_strict_maximum_in_contact_set():
    f = ExtendedField.from_function(3, 2, lambda x, t: 5.0 if (x, t) == ((0, 1), 2) else 0.0)
    pts = {cp.point for cp in upper_contact_set(f)}
    assert (0, 1, 2) in pts
    cp = next(c for c in upper_contact_set(f) if c.point == (0, 1, 2))
    assert cp.contains((0.0, 0.0)) and cp.volume > 0


def test_linear_field_collapses_polytope():
    beta = np.array([0.75, -0.5])
    f = ExtendedField.from_function(3, 2, lambda x, t: float(beta @ np.array(x)))
    cps = upper_contact_set(f)
    inner = [cp for cp in cps if cp.y == (0, 0)]
    assert inner
    for cp in inner:
        assert cp.contains(beta)
        assert slope_polytope_volume(cp) < 1e-12


def test_polytope_area_matches_rejection_sampling():
    f = random_admissible_field(6, 2, 4, family="bumps")
    cps = [cp for cp in upper_contact_set(f) if cp.volume > 0]
    cp = max(cps, key=lambda c: c.volume)
    lo, hi = cp.vertices.min(axis=0), cp.vertices.max(axis=0)
    r = np.random.default_rng(0)
    n = 2_000_000
    pts = lo + (hi - lo) * r.random((n, 2))
    inside = np.all(pts @ cp.A.T <= cp.b, axis=1)
    est = inside.mean() * np.prod(hi - lo)
    assert abs(est - cp.volume) <= 0.01 * cp.volume
    h = float(max(hi - lo)) / 512
    shift = (lo + hi) / 2
    assert abs(grid_area(cp.A, cp.b - cp.A @ shift, h=h, lim=float(max(hi - lo))) - cp.volume) <= 0.01 * cp.volume


@pytest.mark.parametrize("law,k", [(UNIFORM_AXIS, 3), (SiteLaw("elliptic-mixture", {"eps": 0.2}), 4)])
def test_cover_outcomes_match_bruteforce(law, k):
    env = sample_iid(law, 6, 2, 2)
    a = cover_outcomes(env, (1, -1), k)
    b = cover_outcomes_bruteforce(env, (1, -1), k)

    def agg(o):
        out = {}
        for x, T, s, p in zip(o.x.tolist(), o.T.tolist(), o.signs.tolist(), o.prob.tolist()):
            key = (tuple(x), T, tuple(s))
            out[key] = out.get(key, 0.0) + p
        return out

    A, B = agg(a), agg(b)
    assert A.keys() == B.keys()
    assert all(abs(A[q] - B[q]) < 1e-14 for q in A)
    assert abs(a.prob.sum() - 1) < 1e-14


def test_srw_cover_outcome_law():
    o = cover_outcomes(srw_env(8, 2), (0, 0), 6)
    # P(T > k) = 2^(1 - k) shows up as the mass left at T = k without full signs
    stuck = o.prob[(o.T == 6) & np.any(o.signs == 0, axis=1)].sum()
    assert abs(stuck - 2.0 ** -5) < 1e-15


def test_non_positive_field_is_vacuous():
    env = sample_iid(UNIFORM_AXIS, 6, 1, 2)
    f = random_admissible_field(4, 2, 3)
    f.values[:] = -np.abs(f.values)
    rep = verify_abp_chain(env, f)
    assert rep.sup_u <= 0 and rep.theta_volume == 0 and rep.volume_bound_lhs == 0
    assert rep.volume_bound_slack >= 0


def test_hypothesis_violation_raises():
    env = sample_iid(UNIFORM_AXIS, 12, 1, 2)
    f = random_admissible_field(4, 2, 3)
    f.values[-1, 0] = 0.5
    with pytest.raises(ValueError, match="hypothesis"):
        verify_abp_chain(env, f)
    with pytest.raises(ValueError):
        verify_abp_chain(env, random_admissible_field(2, 2, 0))


@pytest.mark.parametrize("seed", range(5))
def test_lemmas_hold_on_random_fields(seed):
    env = sample_iid(UNIFORM_AXIS, 12, seed, 2)
    f = random_admissible_field(6, 2, seed)
    rep = verify_abp_chain(env, f)
    assert rep.theta_volume > 0
    assert rep.volume_bound_slack >= -1e-9
    assert rep.slope_bound_min_slack >= -1e-9
    assert rep.slope_bound_interval_min_slack >= -1e-9
    assert math.isfinite(rep.theorem_ratio)
    text = contact_csv(rep)
    assert text.count("\n") == len(rep.contact_points) + 1


def test_negative_boundary_fields_verify():
    env = sample_iid(UNIFORM_AXIS, 12, 9, 2)
    f = random_admissible_field(6, 2, 9, negative_boundary=True)
    assert np.all(f.values[f.boundary_mask()] <= 0)
    rep = verify_abp_chain(env, f)
    assert rep.volume_bound_slack >= -1e-9 and rep.slope_bound_min_slack >= -1e-9


def test_python_and_compiled_geometry_agree():
    from rwre_lab import backend
    try:
        cy = backend.get("cython")
    except ImportError:
        pytest.skip("compiled kernels not built")
    py = backend.get("python")
    f = random_admissible_field(4, 2, 7)
    a = upper_contact_set(f, kern=py)
    b = upper_contact_set(f, kern=cy)
    assert [c.point for c in a] == [c.point for c in b]
    assert all(abs(x.volume - y.volume) < 1e-12 for x, y in zip(a, b))


def test_lp_survives_degenerate_vertices():
    # several constraint lines through the optimum used to trip the interval test by one ulp
    from rwre_lab import backend
    f = random_admissible_field(3, 2, 0)
    f.values *= 2.0 / max(1.0, f.values.max())
    A, b, _ = constraints(f, f.suffix_max(), f.site_index()[(0, 1)], 8)
    assert np.all(b > 0)
    names = ["python"] + (["cython"] if backend.kernels.BACKEND == "cython" else [])
    for name in names:
        for key in range(50):
            ok, p = feasible_point(A, b, (-8, 8, -8, 8), key, 1e-9, backend.get(name))
            assert ok and np.all(A @ np.array(p) <= b + 1e-9 + 1e-12)
