"""Rendezvous plans for several observability weights and their closed-loop error.

Usage: python3 scripts/rendezvous_sweep.py [--config FILE] [--lambdas 0 1 10] [--runs 2000]
"""

import argparse

import numpy as np

from estaware.config import bundled_scenarios, load_config, matrix, vector
from estaware.dynamics import finite_horizon_lqr
from estaware.estimation import default_offset, design_observer, simulate_closed_loop
from estaware.scvx import RendezvousProblem, solve_scvx


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(bundled_scenarios()["rendezvous"]))
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 1.0, 10.0])
    ap.add_argument("--runs", type=int, default=2000)
    args = ap.parse_args()

    cfg = load_config(args.config)
    sys_ = cfg.system.build()
    model = cfg.uncertainty.build(sys_)
    pc, ev = cfg.planner, cfg.evaluation
    Q, R = matrix(pc.Q, sys_.nx, "Q"), matrix(pc.R, sys_.nu, "R")
    Qf = matrix(pc.Qf, sys_.nx, "Qf") if pc.Qf is not None else Q
    x0 = vector(pc.x0, sys_.nx, "x0")
    goal = vector(pc.x_goal, sys_.nx, "x_goal") if pc.x_goal is not None else None
    lqr = finite_horizon_lqr(sys_, Q, R, Qf, pc.horizon)
    obs = design_observer(sys_, ev.observer.mode, ev.observer.poles)
    off = default_offset(sys_.nx, pc.eps)
    print(f"{'lambda':>8} {'status':>18} {'cost':>12} {'min range':>10} {'s(p_N)':>8} {'variance':>10}")
    for lam in args.lambdas:
        p = RendezvousProblem(sys_, model, x0, Q, R, pc.d, lam, pc.eps, pc.horizon, pc.u_max,
                              x_goal=goal, Qf=Qf)
        res = solve_scvx(p, pc.scvx)
        X = res.trajectory.states
        st = simulate_closed_loop(sys_, model, res.trajectory, obs, lqr.gains, args.runs, ev.seed, off)
        print(f"{lam:8.3g} {res.report.status:>18} {res.cost:12.6g} "
              f"{np.linalg.norm(X[:, :3], axis=1).min():10.4f} {model.chordal(X[-1]):8.4f} "
              f"{st.converged_variance:10.4g}")


if __name__ == "__main__":
    main()
