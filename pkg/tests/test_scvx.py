import numpy as np
import pytest

from estaware.dynamics import cw_system, mean_motion
from estaware.scvx import (RendezvousProblem, ScvxOptions, linearize_keepout, lq_tracking_reference,
                           solve_scvx)
from estaware.uncertainty import IlluminationRadiusModel

N_LEO = mean_motion(a=6.778e6)
SYS = cw_system(N_LEO, 20.0)
MODEL = IlluminationRadiusModel(SYS.C, np.array([1.0, 1.0, 0.0]), 0.5, 0.05)
Q = np.diag([1e-3] * 3 + [0.0] * 3)
R = 100.0 * np.eye(3)
QF = np.diag([0.1] * 3 + [1000.0] * 3)


def problem(lam=0.0, x0=(0.0, -40.0, 2.0, 0.0, 0.0, 0.0), goal=(0.0, 10.0, 0.0, 0.0, 0.0, 0.0), d=5.0,
            u_max=0.1, N=30):
    return RendezvousProblem(SYS, MODEL, np.array(x0), Q, R, d, lam, 0.05, N, u_max,
                             x_goal=np.array(goal), Qf=QF)


def far_problem(**kw):
    # start and goal far from the keep-out ball, input bound slack
    return problem(x0=(20.0, 40.0, 0.0, 0.0, 0.0, 0.0), goal=(0.0, 30.0, 0.0, 0.0, 0.0, 0.0), u_max=1.0, **kw)


def test_linearize_keepout_example():
    a, b = linearize_keepout([10.0, 0.0, 0.0], 5.0)
    assert np.array_equal(a, [1.0, 0.0, 0.0]) and b == 5.0
    with pytest.raises(ValueError):
        linearize_keepout(np.zeros(3), 5.0)


def test_linearize_keepout_reference_feasibility(rng):
    for _ in range(100):
        p = rng.standard_normal(3) * 6
        a, b = linearize_keepout(p, 5.0)
        assert (a @ p >= b) == (np.linalg.norm(p) >= 5.0)


def test_linearize_keepout_outer_bound(rng):
    ref = rng.standard_normal((100, 3)) * 10
    P = rng.standard_normal((100, 100, 3)) * 10
    for p_ref, pts in zip(ref, P):
        a, b = linearize_keepout(p_ref, 5.0)
        inside = pts @ a >= b
        assert np.all(np.linalg.norm(pts[inside], axis=1) >= 5.0 - 1e-12)


def test_no_keepout_matches_lq_tracking():
    p = far_problem()
    ref = lq_tracking_reference(p)
    assert np.linalg.norm(ref.states[:, :3], axis=1).min() > 2 * p.d
    assert np.abs(ref.inputs).max() < p.u_max
    res = solve_scvx(p)
    c_ref = p.tracking_cost(ref.states, ref.inputs)
    c = p.tracking_cost(res.trajectory.states, res.trajectory.inputs)
    assert res.report.converged
    assert c == pytest.approx(c_ref, rel=1e-4)
    assert sum(it.accepted for it in res.report.iterations) <= 2


def test_no_keepout_from_drift_guess():
    p = far_problem()
    ref = lq_tracking_reference(p)
    res = solve_scvx(p, ScvxOptions(initial_guess="drift"))
    assert res.report.converged
    assert p.tracking_cost(res.trajectory.states, res.trajectory.inputs) == pytest.approx(
        p.tracking_cost(ref.states, ref.inputs), rel=1e-4)
    # with a trust region that does not bind, the convex case takes at most two accepted steps
    wide = solve_scvx(p, ScvxOptions(initial_guess="drift", trust_radius0=1e3))
    assert sum(it.accepted for it in wide.report.iterations) <= 2
    assert np.allclose(wide.trajectory.states, ref.states, atol=1e-5)


@pytest.fixture(scope="module")
def lambda_runs():
    return {lam: solve_scvx(problem(lam)) for lam in (0.0, 1.0, 10.0)}


def test_keepout_respected(lambda_runs):
    ref = lq_tracking_reference(problem())
    assert np.linalg.norm(ref.states[:, :3], axis=1).min() < 5.0  # the unconstrained path cuts through
    for lam, res in lambda_runs.items():
        X, U = res.trajectory.states, res.trajectory.inputs
        assert res.report.converged, lam
        assert np.linalg.norm(X[:, :3], axis=1).min() >= 5.0 - 1e-6
        assert np.abs(U).max() <= 0.1 + 1e-9
        assert res.trajectory.dynamics_residual(SYS) <= 1e-9
        assert res.report.iterations[-1].max_slack < 1e-6


def test_terminal_illumination_ordering(lambda_runs):
    s = [MODEL.chordal(lambda_runs[lam].trajectory.states[-1]) for lam in (0.0, 1.0, 10.0)]
    assert s[0] >= s[1] >= s[2]
    assert s[2] < s[0]


def test_observability_improves_with_weight(lambda_runs):
    d = [lambda_runs[lam].obs_report.value for lam in (0.0, 1.0, 10.0)]
    assert d[0] <= d[1] <= d[2]


def test_accepted_costs_non_increasing(lambda_runs):
    for res in lambda_runs.values():
        c = res.report.accepted_costs
        assert all(b <= a + 1e-9 * max(1.0, abs(a)) for a, b in zip(c, c[1:]))
        assert all(it.rho >= 0.05 for it in res.report.iterations if it.accepted and np.isfinite(it.rho))


def test_report_csv(tmp_path, lambda_runs):
    path = tmp_path / "scvx.csv"
    lambda_runs[1.0].report.write_csv(path, ["x"])
    lines = path.read_text().splitlines()
    assert lines[1] == "iter,cost,linearized_cost,rho,trust_radius,max_slack,accepted"
    assert len(lines) == 2 + len(lambda_runs[1.0].report.iterations)


def test_cheap_slack_reports_keepout_infeasible():
    p = problem(goal=(0.0, 1.0, 0.0, 0.0, 0.0, 0.0))
    res = solve_scvx(p, ScvxOptions(slack_weight=1e-8))
    assert res.report.status == "keepout_infeasible"
    assert res.report.iterations[-1].max_slack > 1e-6


def test_problem_validation():
    with pytest.raises(ValueError, match="keep-out"):
        problem(x0=(0.0, 1.0, 0.0, 0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        problem(lam=-1.0)
    with pytest.raises(ValueError):
        RendezvousProblem(SYS, MODEL, np.array([0.0, -40, 0, 0, 0, 0]), Q, np.zeros((3, 3)), 5.0, 0.0, 0.05,
                          30, 0.1)


@pytest.mark.parametrize("kw", [dict(rho0=0.3, rho1=0.2), dict(trust_shrink=1.5), dict(initial_guess="x"),
                                dict(slack_weight=0.0)])
def test_options_validation(kw):
    with pytest.raises(ValueError):
        ScvxOptions(**kw)
