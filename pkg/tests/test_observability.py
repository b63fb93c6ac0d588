import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from estaware.dynamics import LtiSystem, Trajectory, rollout
from estaware.geometry import Ellipsoid, set_distance_sampled
from estaware.observability import (LowerBound, degree_of_observability_rollout,
                                    degree_of_observability_sampled, observability_lower_bound,
                                    observability_lower_bound_gradient, sigma_max, sigma_min,
                                    tube_distance)
from estaware.uncertainty import ConstantRadiusModel, QuadraticRadiusModel
from instances import random_observability_instance, random_quadratic_instance


def identity_case(nx=2, T=5, c=0.0):
    sys = LtiSystem(np.eye(nx), np.eye(nx), np.eye(nx), 1.0)
    nominal = rollout(sys, np.ones(nx), np.zeros((T, nx)))
    return sys, ConstantRadiusModel(sys.C, c), nominal


def test_sigma_min_wide_is_zero():
    assert sigma_min(np.ones((1, 3))) == 0.0
    assert sigma_min(np.diag([3.0, 2.0])) == pytest.approx(2.0)
    assert sigma_max(np.diag([3.0, 2.0])) == pytest.approx(3.0)


def test_tube_distance_examples():
    Y = [Ellipsoid.ball([0.0, 0.0], 1.0) for _ in range(3)]
    assert tube_distance(Y, Y) == 0.0
    Z = [Ellipsoid.ball([5.0 * (t + 1), 0.0], 1.0) for t in range(3)]
    assert tube_distance(Y, Z) == pytest.approx(24.0)
    with pytest.raises(ValueError):
        tube_distance(Y, Z[:2])


def test_tube_distance_below_sampled(rng):
    for _ in range(10):
        Y1 = [Ellipsoid.ball(rng.standard_normal(2) * 4, rng.uniform(0.1, 1)) for _ in range(4)]
        Y2 = [Ellipsoid.ball(rng.standard_normal(2) * 4, rng.uniform(0.1, 1)) for _ in range(4)]
        sampled = sum(set_distance_sampled(a, b, 500, rng) for a, b in zip(Y1, Y2))
        assert 0.0 <= tube_distance(Y1, Y2) <= sampled + 1e-9


def test_identity_bound():
    T, eps = 7, 0.3
    sys, model, nominal = identity_case(T=T)
    rep = observability_lower_bound(sys, model, nominal, eps)
    assert rep.value == pytest.approx((T + 1) * eps, rel=1e-12)
    assert rep.positive
    assert observability_lower_bound(sys, model, nominal, 0.0).value == 0.0


def test_constant_radius_formula():
    A = np.array([[1.0, 0.1], [0.0, 0.9]])
    C = np.array([[1.0, 0.0]])
    sys = LtiSystem(A, np.array([[0.0], [1.0]]), C, 0.1)
    T, eps, c = 6, 0.5, 0.05
    nominal = rollout(sys, np.array([1.0, -1.0]), np.zeros((T, 1)))
    model = ConstantRadiusModel(C, c)
    lb = LowerBound(sys, model, T, eps)
    r = lb.radius
    assert r == pytest.approx(eps * max(np.linalg.norm(np.linalg.matrix_power(A, t), 2) for t in range(T + 1)))
    expect = 0.0
    for t in range(T + 1):
        At = np.linalg.matrix_power(A, t)
        s = np.linalg.svd(C @ At, compute_uv=False)
        smin = s.min() if C.shape[0] >= 2 else 0.0  # a 1x2 matrix has a nontrivial null space
        expect += eps * (smin - np.linalg.norm(At, 2) * 2 * c / r) - 2 * c
    assert lb.value(nominal.states) == pytest.approx(expect, rel=1e-12)


def test_report_decomposition_and_csv(tmp_path, rng):
    sys, model, nominal, eps = random_observability_instance(rng)
    rep = observability_lower_bound(sys, model, nominal, eps)
    assert rep.value == pytest.approx(np.sum(rep.T1 + rep.T2), abs=1e-9)
    assert rep.clamped_value >= rep.value - 1e-12
    assert rep.positive == (rep.value > 0)
    path = tmp_path / "obs.csv"
    rep.write_csv(path, ["h"])
    rows = path.read_text().splitlines()
    assert rows[0] == "# h"
    assert rows[1] == "t,T1,T2,cumulative"
    assert float(rows[-1].split(",")[3]) == pytest.approx(rep.value, abs=1e-9)


def test_nonpositive_bound_recorded():
    sys, model, nominal = identity_case(c=1.0)
    rep = observability_lower_bound(sys, model, nominal, 0.1)
    assert not rep.positive
    assert rep.warnings


def test_suggest_epsilon_makes_bound_positive(rng):
    sys, _, nominal = identity_case(T=5)
    model = ConstantRadiusModel(sys.C, 0.05)
    lb = LowerBound(sys, model, 5, 1.0, radius=1.0)
    e = lb.suggest_epsilon(nominal.states)
    assert e is not None
    assert LowerBound(sys, model, 5, 1.01 * e, radius=1.0).value(nominal.states) > 0
    assert LowerBound(sys, model, 5, 0.99 * e, radius=1.0).value(nominal.states) < 0


def test_gradient_constant_model_zero(rng):
    sys, model, nominal = identity_case(c=0.4)
    assert np.array_equal(observability_lower_bound_gradient(sys, model, nominal, 0.3),
                          np.zeros_like(nominal.states))


def test_gradient_at_source_only_lipschitz_term():
    sys, _, nominal = identity_case(T=3)
    model = QuadraticRadiusModel(sys.C, 0.2, np.ones(2), 0.1)
    lb = LowerBound(sys, model, 3, 0.5)
    g = lb.gradient(nominal.states)
    assert np.array_equal(model.radius_gradients(nominal.states), np.zeros((4, 2)))
    gl = model.lipschitz_gradients(nominal.states, lb.radius)
    assert np.allclose(g, -(lb.smax_A * lb.eps)[:, None] * gl)


def fd_gradient(lb, X, h=1e-5):
    G = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        E = np.zeros_like(X)
        E[idx] = h
        G[idx] = (lb.value(X + E) - lb.value(X - E)) / (2 * h)
    return G


def test_gradient_finite_differences(rng):
    for _ in range(10):
        sys, model, T, eps = random_quadratic_instance(rng)
        X = rng.standard_normal((T + 1, sys.nx)) * 3
        lb = LowerBound(sys, model, T, eps)
        G = lb.gradient(X)
        fd = fd_gradient(lb, X)
        assert np.linalg.norm(G - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-8)


def test_sampled_identity_close_to_bound():
    T, eps = 5, 0.2
    sys, model, nominal = identity_case(T=T)
    d = degree_of_observability_sampled(sys, model, nominal, eps, 500, np.random.default_rng(0))
    assert d == pytest.approx((T + 1) * eps, rel=0.01)


def test_sampled_monotone_in_samples(rng):
    sys, model, nominal, eps = random_observability_instance(np.random.default_rng(3))
    small = degree_of_observability_sampled(sys, model, nominal, eps, 100, np.random.default_rng(9))
    big = degree_of_observability_sampled(sys, model, nominal, eps, 400, np.random.default_rng(9))
    assert big <= small


def test_sampled_matches_rollout_path(rng):
    sys, model, nominal, eps = random_observability_instance(np.random.default_rng(5))
    d = degree_of_observability_sampled(sys, model, nominal, eps, 1, np.random.default_rng(2),
                                        radii_multipliers=(1.0,))
    dirs = np.random.default_rng(2).standard_normal((1, sys.nx))
    x0 = nominal.states[0] + eps * dirs[0] / np.linalg.norm(dirs[0])
    assert d == pytest.approx(degree_of_observability_rollout(sys, model, nominal, x0), rel=1e-9, abs=1e-12)


def test_sampled_rejects_bad_args(rng):
    sys, model, nominal = identity_case()
    with pytest.raises(ValueError):
        degree_of_observability_sampled(sys, model, nominal, 0.1, 0, rng)
    with pytest.raises(ValueError):
        degree_of_observability_sampled(sys, model, nominal, 0.1, 5, rng, radii_multipliers=(0.5,))


def test_state_shape_checked():
    sys, model, nominal = identity_case(T=3)
    with pytest.raises(ValueError):
        LowerBound(sys, model, 4, 0.1).value(nominal.states)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_bound_below_sampled(seed):
    rng = np.random.default_rng(seed)
    sys, model, nominal, eps = random_observability_instance(rng)
    lb = observability_lower_bound(sys, model, nominal, eps).value
    assert lb <= degree_of_observability_sampled(sys, model, nominal, eps, 200, rng) + 1e-9


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), theta=st.sampled_from([0.25, 0.5, 0.75]))
def test_concave_in_state_sequence(seed, theta):
    rng = np.random.default_rng(seed)
    sys, model, T, eps = random_quadratic_instance(rng)
    lb = LowerBound(sys, model, T, eps)
    X, Y = rng.standard_normal((2, T + 1, sys.nx)) * 5
    mid = lb.value(theta * X + (1 - theta) * Y)
    assert mid >= theta * lb.value(X) + (1 - theta) * lb.value(Y) - 1e-8 * max(1.0, abs(mid))
