import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import ortho_group

from estaware.geometry import (Ellipsoid, InvalidEllipsoidError, contains, radius, sample_uniform,
                               set_distance_lb, set_distance_sampled)
from oracles import power_iteration


def random_pd(rng, n, scale=1.0):
    M = rng.standard_normal((n, n))
    return scale * (M @ M.T + 0.1 * np.eye(n))


def test_radius_diag():
    assert radius(Ellipsoid(np.zeros(2), np.diag([4.0, 1.0]))) == pytest.approx(2.0, abs=1e-15)


@pytest.mark.parametrize("n", [1, 2, 3, 6])
def test_radius_identity(n):
    assert radius(Ellipsoid(np.zeros(n), np.eye(n))) == pytest.approx(1.0, abs=1e-15)


def test_radius_matches_power_iteration(rng):
    for _ in range(5):
        Q = random_pd(rng, 5)
        assert radius(Ellipsoid(np.zeros(5), Q)) == pytest.approx(np.sqrt(power_iteration(Q)), rel=1e-9)


def test_non_pd_rejected():
    with pytest.raises(InvalidEllipsoidError):
        Ellipsoid(np.zeros(2), np.diag([1.0, -1.0]))
    with pytest.raises(InvalidEllipsoidError):
        Ellipsoid(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_contains_center_and_boundary(rng):
    Q = random_pd(rng, 3)
    c = rng.standard_normal(3)
    e = Ellipsoid(c, Q)
    w, V = np.linalg.eigh(Q)
    v = V[:, -1] * radius(e)
    assert contains(e, c)
    assert contains(e, c + v)
    assert not contains(e, c + 1.01 * v)
    with pytest.raises(ValueError):
        contains(e, np.zeros(2))


def test_sample_uniform_mean_and_membership():
    e = Ellipsoid.ball(np.zeros(3), 1.0)
    pts = sample_uniform(e, np.random.default_rng(0), 100_000)
    assert np.abs(pts.mean(axis=0)).max() < 0.02
    assert np.all(np.linalg.norm(pts, axis=1) <= 1.0 + 1e-12)


def test_sample_uniform_deterministic(rng):
    e = Ellipsoid(np.ones(2), random_pd(rng, 2))
    a = sample_uniform(e, np.random.default_rng(7), 50)
    b = sample_uniform(e, np.random.default_rng(7), 50)
    assert np.array_equal(a, b)


def test_sample_uniform_fills_volume():
    # fraction inside the half-radius ball is (1/2)^dim for uniform sampling
    e = Ellipsoid.ball(np.zeros(2), 2.0)
    pts = sample_uniform(e, np.random.default_rng(1), 200_000)
    frac = np.mean(np.linalg.norm(pts, axis=1) <= 1.0)
    assert frac == pytest.approx(0.25, abs=0.005)


def test_set_distance_lb_examples():
    a = Ellipsoid.ball([0.0, 0.0], 1.0)
    b = Ellipsoid.ball([5.0, 0.0], 1.0)
    assert set_distance_lb(a, b) == pytest.approx(3.0)
    assert set_distance_lb(a, a) == 0.0
    with pytest.raises(ValueError):
        set_distance_lb(a, Ellipsoid.ball([0.0, 0.0, 0.0], 1.0))


def test_set_distance_sampled_examples():
    a = Ellipsoid.ball([0.0, 0.0], 1.0)
    b = Ellipsoid.ball([5.0, 0.0], 1.0)
    d = set_distance_sampled(a, b, 1000, np.random.default_rng(0))
    assert 3.0 <= d <= 3.2
    assert set_distance_sampled(a, a, 1000, np.random.default_rng(0)) <= 1e-3


def test_overlap_flagged():
    a = Ellipsoid(np.zeros(2), np.diag([4.0, 0.25]))
    b = Ellipsoid(np.array([1.0, 0.0]), np.diag([0.25, 4.0]))
    assert set_distance_lb(a, b) == 0.0
    assert set_distance_sampled(a, b, 500, np.random.default_rng(0)) < 0.1


def test_lb_below_sampled_random(rng):
    for _ in range(50):
        n = int(rng.integers(1, 4))
        e1 = Ellipsoid(rng.standard_normal(n) * 3, random_pd(rng, n, 0.3))
        e2 = Ellipsoid(rng.standard_normal(n) * 3, random_pd(rng, n, 0.3))
        lb = set_distance_lb(e1, e2)
        assert 0.0 <= lb <= set_distance_sampled(e1, e2, 10_000 if n == 1 else 2000, rng) + 1e-9


seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=50, deadline=None)
@given(seed=seeds, n=st.integers(1, 5))
def test_radius_rotation_invariant(seed, n):
    rng = np.random.default_rng(seed)
    Q = random_pd(rng, n)
    R = ortho_group.rvs(n, random_state=seed) if n > 1 else np.array([[-1.0]])
    assert radius(Ellipsoid(np.zeros(n), R @ Q @ R.T)) == pytest.approx(radius(Ellipsoid(np.zeros(n), Q)),
                                                                         rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(seed=seeds, n=st.integers(1, 4))
def test_samples_always_contained(seed, n):
    rng = np.random.default_rng(seed)
    e = Ellipsoid(rng.standard_normal(n), random_pd(rng, n, 10.0 ** rng.uniform(-3, 3)))
    pts = sample_uniform(e, rng, 200)
    assert all(contains(e, p) for p in pts)


@settings(max_examples=40, deadline=None)
@given(c1=arrays(float, 2, elements=st.floats(-10, 10)), c2=arrays(float, 2, elements=st.floats(-10, 10)),
       r1=st.floats(0.01, 5), r2=st.floats(0.01, 5), seed=seeds)
def test_lb_sampled_ordering_balls(c1, c2, r1, r2, seed):
    e1, e2 = Ellipsoid.ball(c1, r1), Ellipsoid.ball(c2, r2)
    lb = set_distance_lb(e1, e2)
    assert lb >= 0.0
    assert lb <= set_distance_sampled(e1, e2, 300, np.random.default_rng(seed)) + 1e-9
