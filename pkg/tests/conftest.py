import numpy as np
import pytest

from estaware.config import bundled_scenarios, load_config
from estaware.dynamics import double_integrator_2d, finite_horizon_lqr, lqr_rollout
from estaware.uncertainty import QuadraticRadiusModel


@pytest.fixture(scope="session")
def di_setup():
    """Bundled double-integrator scenario: system, model, nominal LQR trajectory."""
    cfg = load_config(bundled_scenarios()["double_integrator"])
    sys = cfg.system.build()
    model = cfg.uncertainty.build(sys)
    pc = cfg.planner
    nx = sys.nx
    Q = pc.Q * np.eye(nx)
    R = pc.R * np.eye(sys.nu)
    Qf = pc.Qf * np.eye(nx)
    lqr = finite_horizon_lqr(sys, Q, R, Qf, pc.horizon)
    nominal = lqr_rollout(sys, lqr, np.asarray(pc.x0, dtype=float))
    return dict(cfg=cfg, sys=sys, model=model, nominal=nominal, lqr=lqr, eps=pc.eps)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_di(T=10, x0=(-4.0, 3.0, 0.0, 0.0), dt=0.25):
    sys = double_integrator_2d(dt)
    lqr = finite_horizon_lqr(sys, np.eye(4), np.eye(2), 10 * np.eye(4), T)
    nominal = lqr_rollout(sys, lqr, np.asarray(x0))
    model = QuadraticRadiusModel(sys.C, 0.1, np.array([-1.0, -1.0]), 0.1)
    return sys, model, nominal


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(RESULTS):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
