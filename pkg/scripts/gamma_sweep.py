"""Observability lower bound of the deviation planner over a range of gamma.

Usage: python3 scripts/gamma_sweep.py [--config FILE] [--gammas 0 0.5 1 2 4]
"""

import argparse

from estaware.config import bundled_scenarios, load_config, matrix, vector
from estaware.deviation import DeviationProblem, sweep_gamma
from estaware.dynamics import finite_horizon_lqr, lqr_rollout


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(bundled_scenarios()["double_integrator"]))
    ap.add_argument("--gammas", type=float, nargs="+", default=[0.0, 0.5, 1.0, 2.0, 4.0])
    args = ap.parse_args()

    cfg = load_config(args.config)
    sys_ = cfg.system.build()
    model = cfg.uncertainty.build(sys_)
    pc = cfg.planner
    Q, R = matrix(pc.Q, sys_.nx, "Q"), matrix(pc.R, sys_.nu, "R")
    Qf = matrix(pc.Qf, sys_.nx, "Qf") if pc.Qf is not None else Q
    lqr = finite_horizon_lqr(sys_, Q, R, Qf, pc.horizon)
    nominal = lqr_rollout(sys_, lqr, vector(pc.x0, sys_.nx, "x0"))
    base = DeviationProblem(sys_, model, nominal, 1.0, pc.eps)
    print(f"{'gamma':>8} {'bound':>14} {'status':>12} {'iters':>6}")
    for g, r in zip(args.gammas, sweep_gamma(base, args.gammas, pc.deviation)):
        print(f"{g:8.3g} {r.report.value:14.6f} {r.status:>12} {r.iterations:6d}")


if __name__ == "__main__":
    main()
