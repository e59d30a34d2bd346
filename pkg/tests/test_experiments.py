import math
from fractions import Fraction
from math import comb

import numpy as np
import pytest

from oracles import exit_law_by_paths
from rwre_lab.caloric import BoundaryData, oscillation, sector_partition, solve_backward
from rwre_lab.environment import UNIFORM_AXIS, sample_iid, srw_env
from rwre_lab.experiments import (ExperimentConfig, boundary_family, counterexample_experiment,
                                  coupling_experiment, coupling_success, exit_dp_vs_mc,
                                  optional_stopping_experiment, oscillation_experiment, phi_experiment,
                                  srw3_expected_visits, transience_experiment)
from rwre_lab.lattice import Cylinder, parity_filter, parity_of


def test_config_validation():
    ExperimentConfig().validate()
    for bad in ({"eps": 0.3}, {"xi": 0.25}, {"w": 1.0}, {"parity": "both-ish"}, {"d": 0}, {"R": []}):
        with pytest.raises(ValueError):
            ExperimentConfig(**bad).validate()


def test_boundary_family_shapes():
    dom = Cylinder(4, (0, 0), 0).domain()
    kinds, data = boundary_family(dom, 4, 7, 3)
    assert kinds[0] == "constant" and np.all(data[0] == 1)
    assert kinds[1:4] == ["indicator", "bump", "exponential"]
    assert data.shape == (7, dom.boundary_points().shape[0]) and np.all(data >= 0)
    assert np.array_equal(boundary_family(dom, 4, 7, 3)[1], data)


def test_phi_constant_datum_passes_with_ratio_one():
    cfg = ExperimentConfig(R=[3, 4], seeds=[0, 1], n_data=5)
    rep = phi_experiment(cfg)
    const = [r for r in rep.rows if r["datum_id"] == 0]
    assert len(const) == 2 * 2 * 2
    for r in const:
        assert r["filtered"] and abs(r["ratio"] - 1) < 1e-12
    assert rep.summary["all_filtered_finite"]
    assert all(r["ratio"] >= 1 - 1e-12 for r in rep.rows if r["filtered"])


def test_counterexample_rejected_by_filter():
    rep = counterexample_experiment(3)
    assert rep.sink_is_one
    assert not rep.growth_ok and not any(rep.growth_by_parity.values())
    assert rep.ratio >= 2.0 ** 9
    assert rep.to_csv().splitlines()[0] == "R,parity,ratio,growth_ok"
    with pytest.raises(ValueError):
        counterexample_experiment(5)


def test_oscillation_constant_datum_excluded():
    cfg = ExperimentConfig(R=[3], seeds=[2], n_data=4)
    rep = oscillation_experiment(cfg)
    for r in rep.rows:
        if r["datum_id"] == 0:
            assert r["excluded"] and math.isnan(r["ratio"])
        elif not r["excluded"]:
            assert 0 <= r["ratio"] <= 1 + 1e-12
    assert rep.summary["n_excluded"] >= 2
    with pytest.raises(ValueError):
        oscillation_experiment(cfg, zeta=1.0)


def test_parity_data_has_no_oscillation_within_a_class():
    env = sample_iid(UNIFORM_AXIS, 7, 4, 2)
    dom = Cylinder(6, (0, 0), 0).domain()
    g = parity_of(dom.boundary_points()).astype(np.float64)
    u = solve_backward(env, dom, BoundaryData(dom, g))
    inner = Cylinder(3, (0, 0), 0).domain().interior_points()
    for p in ("odd", "even"):
        assert oscillation(u, parity_filter(inner, p)) == 0.0


def test_oscillation_ratio_is_scale_free():
    env = sample_iid(UNIFORM_AXIS, 7, 5, 2)
    dom = Cylinder(6, (0, 0), 0).domain()
    _, data = boundary_family(dom, 6, 4, 5)
    inner = parity_filter(Cylinder(3, (0, 0), 0).domain().interior_points(), "even")
    outer = parity_filter(dom.interior_points(), "even")
    u = solve_backward(env, dom, BoundaryData(dom, data))
    v = solve_backward(env, dom, BoundaryData(dom, 7.3 * data))
    a = oscillation(u, inner)[1:] / oscillation(u, outer)[1:]
    b = oscillation(v, inner)[1:] / oscillation(v, outer)[1:]
    assert np.max(np.abs(a - b)) < 1e-12


def test_coupling_basic_properties():
    env = sample_iid(UNIFORM_AXIS, 9, 1, 2)
    c = Cylinder(8, (0, 0), 0)
    assert coupling_success(env, (1, 1, 0), (1, 1, 0), c) == (0.0, 1.0)
    tv, ok = coupling_success(env, (1, 1, 0), (-1, 2, 1), c)
    assert 0 <= tv <= 1 and abs(tv + ok - 1) < 1e-15
    assert coupling_success(env, (-1, 2, 1), (1, 1, 0), c)[0] == tv
    part = sector_partition(4, 1)
    tv_cells, _ = coupling_success(env, (1, 1, 0), (-1, 2, 1), c, part)
    # coarsening can only shrink the distance
    assert tv_cells <= tv + 1e-12
    with pytest.raises(ValueError, match="parity"):
        coupling_success(env, (0, 0, 0), (1, 0, 0), c)


def confined_paths(n, x, y, a, b):
    """Paths of n +-1 steps from x to y that stay strictly inside (a, b), by the reflection principle."""
    L = b - a
    total = 0
    for k in range(-(n // L) - 2, n // L + 3):
        for m, sign in ((y - x + 2 * k * L, 1), (2 * b - y - x + 2 * k * L, -1)):
            if abs(m) <= n and (n + m) % 2 == 0:
                total += sign * comb(n, (n + m) // 2)
    return total


def srw_exit_law_1d(R, start):
    """Exact exit law of the d = 1 simple walk from the cylinder of radius R (integer R)."""
    x0, s = start
    T = R * R
    law = {}
    for t in range(s + 1, T + 1):
        n = t - s
        for side in (R, -R):
            cnt = confined_paths(n - 1, x0, side - np.sign(side), -R, R)
            if cnt:
                law[(side, t)] = Fraction(cnt, 2 ** n)
    for y in range(-R + 1, R):
        cnt = confined_paths(T - s, x0, y, -R, R)
        if cnt:
            law[(y, T)] = Fraction(cnt, 2 ** (T - s))
    return law


def test_reflection_oracle_matches_path_tree():
    env = srw_env(4, 1)
    dom = Cylinder(3, (0,), 0).domain()
    law = srw_exit_law_1d(3, (0, 0))
    assert sum(law.values()) == 1
    ref = exit_law_by_paths(env, dom, (0, 0))
    assert set(ref) == set(law)
    assert max(abs(ref[k] - float(law[k])) for k in law) < 1e-15


@pytest.mark.parametrize("x,y", [((0, 0), (2, 0)), ((0, 0), (1, 1)), ((-3, 1), (-2, 2))])
def test_coupling_tv_matches_path_counting(x, y):
    R = 6
    env = srw_env(R + 1, 1)
    lx, ly = srw_exit_law_1d(R, x), srw_exit_law_1d(R, y)
    exact = float(sum(abs(lx.get(k, 0) - ly.get(k, 0)) for k in set(lx) | set(ly)) / 2)
    tv, ok = coupling_success(env, x, y, Cylinder(R, (0,), 0))
    assert abs(tv - exact) < 1e-12 and abs(ok - (1 - exact)) < 1e-12


def test_coupling_experiment_rows():
    rep = coupling_experiment(ExperimentConfig(R=[3], seeds=[0], zeta=2.0), n_pairs=6)
    assert len(rep.rows) == 6
    for r in rep.rows:
        assert (sum(map(abs, r["x"])) - sum(map(abs, r["y"]))) % 2 == 0
        assert 0 <= r["tv"] <= 1 and abs(r["success"] - (1 - r["tv"])) < 1e-15


def test_exit_dp_vs_monte_carlo():
    env = sample_iid(UNIFORM_AXIS, 9, 6, 2)
    exact, freq, tv = exit_dp_vs_mc(env, Cylinder(6, (0, 0), 0), (0, 0, 0), sector_partition(4, 2),
                                    40_000, 3)
    assert abs(exact.sum() - 1) < 1e-12 and abs(freq.sum() - 1) < 1e-12
    # each cell frequency within 4 binomial standard errors
    se = np.sqrt(exact * (1 - exact) / 40_000)
    assert np.all(np.abs(freq - exact) <= 4 * se + 1e-12)
    assert tv < 0.02


def test_optional_stopping():
    cfg = ExperimentConfig(R=[4], seeds=[0, 1], samples=20_000)
    rep = optional_stopping_experiment(cfg, n_fields=3)
    assert len(rep.rows) == 6
    assert rep.summary["max_z"] < 4.5


def test_srw3_oracle():
    # expected visits over infinite time is 1 / (1 - return probability) = 1.516386059...
    v = srw3_expected_visits(10 ** 6)
    tail = 2 * (3 / (4 * math.pi)) ** 1.5 * 2 / math.sqrt(5 * 10 ** 5)
    assert abs(v + tail - 1.5163860591519778) < 1e-5
    assert srw3_expected_visits(10 ** 4) < srw3_expected_visits(10 ** 5) < v
    assert abs(srw3_expected_visits(2) - 7 / 6) < 1e-15


def test_transience_small_run():
    rep = transience_experiment("srw", 3, [10 ** 4, 2 * 10 ** 4], 2000, 1)
    for h, m, s in zip(rep.horizons, rep.mean_visits, rep.standard_errors):
        assert abs(m - srw3_expected_visits(h)) < 4 * s
    assert rep.deltas[0] >= 0
    assert rep.to_csv().count("\n") == 3
    with pytest.raises(ValueError):
        transience_experiment("srw", 3, [100], 10, 1)
    with pytest.raises(ValueError):
        transience_experiment("elliptic-mixture", 3, [10 ** 4], 10, 1)


def test_reports_identical_across_workers():
    base = ExperimentConfig(R=[3], seeds=[0, 1, 2], n_data=4)
    one = phi_experiment(ExperimentConfig(**{**base.to_dict(), "workers": 1}))
    many = phi_experiment(ExperimentConfig(**{**base.to_dict(), "workers": 3}))
    assert one.to_csv() == many.to_csv()
    t1 = transience_experiment("uniform-axis", 2, [10 ** 4], 600, 4, workers=1)
    t3 = transience_experiment("uniform-axis", 2, [10 ** 4], 600, 4, workers=3)
    assert t1.to_csv() == t3.to_csv()
