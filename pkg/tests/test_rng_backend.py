import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre_lab import backend, rng
from rwre_lab.environment import UNIFORM_AXIS, cumulative_rows, sample_iid, srw_env
from rwre_lab.lattice import Cylinder
from rwre_lab.walk import StopRule, run, run_batch

u64 = st.integers(min_value=0, max_value=2 ** 64 - 1)


def splitmix_reference(state, n):
    """Textbook SplitMix64 sequence: state += golden, then the finaliser."""
    out = []
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & rng.MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & rng.MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & rng.MASK64
        out.append(z ^ (z >> 31))
    return out


@given(u64)
def test_stream_is_splitmix_sequence(key):
    assert [rng.draw_u64(key, j) for j in range(5)] == splitmix_reference(key, 5)


def test_known_splitmix_value():
    # first output of SplitMix64 seeded with 0
    assert rng.draw_u64(0, 0) == 0xE220A8397B1DCDAF


@given(u64, st.integers(0, 10 ** 6), st.integers(1, 50))
def test_vector_keys_match_scalar(seed, first, n):
    keys = rng.stream_keys(seed, first, n)
    assert keys.tolist() == [rng.stream_key(seed, first + i) for i in range(n)]


@given(u64, st.lists(st.integers(0, 10 ** 9), min_size=1, max_size=20))
def test_vector_uniforms_match_scalar(key, counters):
    c = np.array(counters, dtype=np.int64)
    u = rng.uniforms(np.full(c.size, key, dtype=np.uint64), c)
    assert u.tolist() == [rng.uniform(key, int(j)) for j in counters]
    assert np.all((u >= 0) & (u < 1))


def test_uniforms_look_uniform():
    u = rng.uniforms(np.full(200_000, rng.stream_key(3, 0), dtype=np.uint64), np.arange(200_000))
    hist = np.histogram(u, bins=20, range=(0, 1))[0]
    expected = u.size / 20
    chi2 = float(((hist - expected) ** 2 / expected).sum())
    assert chi2 < 60  # 19 dof, far tail
    assert abs(u.mean() - 0.5) < 4 * (1 / 12) ** 0.5 / u.size ** 0.5


def test_derive_seed_distinguishes_labels():
    vals = {rng.derive_seed(1, a, b) for a in range(20) for b in range(20)}
    assert len(vals) == 400


def test_stream_rng_advances():
    s = rng.StreamRNG(9, 4)
    assert [s.random() for _ in range(3)] == [rng.uniform(rng.stream_key(9, 4), j) for j in range(3)]


def test_backend_selection():
    assert backend.get("python").BACKEND == "python"
    assert backend.kernels.BACKEND in ("python", "cython")


def _compiled():
    try:
        return backend.get("cython")
    except ImportError:
        pytest.skip("compiled kernels not built")


def test_walk_kernels_bit_identical():
    cy, py = _compiled(), backend.get("python")
    env = sample_iid(UNIFORM_AXIS, 10, 5, 2)
    rule = StopRule.exit_cylinder(Cylinder(7, (0, 0), 0))
    a = run_batch(env, (0, 0, 0), rule, 11, 3000, kern=py, workers=1)
    b = run_batch(env, (0, 0, 0), rule, 11, 3000, kern=cy, workers=1)
    assert np.array_equal(a.end, b.end) and np.array_equal(a.steps, b.steps)
    assert np.array_equal(a.status, b.status) and np.array_equal(a.seen, b.seen)


def test_cover_kernels_bit_identical():
    cy, py = _compiled(), backend.get("python")
    env = sample_iid(UNIFORM_AXIS, 30, 2, 2)
    rule = StopRule.first_of(StopRule.cover_all(), StopRule.step_cap(40))
    a = run_batch(env, (3, -2), rule, 1, 2000, kern=py)
    b = run_batch(env, (3, -2), rule, 1, 2000, kern=cy)
    assert np.array_equal(a.steps, b.steps) and np.array_equal(a.status, b.status)


@pytest.mark.parametrize("d,law", [(2, 0), (3, 0), (2, 1), (3, 1)])
def test_visit_kernels_bit_identical(d, law):
    cy, py = _compiled(), backend.get("python")
    keys = rng.stream_keys(4, 0, 20)
    cps = np.array([500, 3000], dtype=np.int64)
    cum = cumulative_rows(np.full((1, 2 * d), 1 / (2 * d)))[0]
    a = py.visit_counts(d, law, 77, keys, cps, 400, cum)
    b = cy.visit_counts(d, law, 77, keys, cps, 400, cum)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_site_axis_identical():
    cy, py = _compiled(), backend.get("python")
    coords = np.array([[0, 0, 0], [5, -3, 2], [-100, 7, 1]], dtype=np.int64)
    assert np.array_equal(np.asarray(py.site_axis(123, coords, 3)), np.asarray(cy.site_axis(123, coords, 3)))


def test_single_path_matches_batch():
    env = srw_env(12, 2)
    rule = StopRule.exit_cylinder(Cylinder(5, (0, 0), 0))
    batch = run_batch(env, (1, 0, 0), rule, 8, 50)
    for i in (0, 17, 49):
        p = run(env, (1, 0, 0), rule, 8, index=i)
        assert p.end == tuple(int(v) for v in batch.end[i])
