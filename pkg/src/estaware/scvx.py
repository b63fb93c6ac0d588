"""Rendezvous guidance with an observability reward and a keep-out ball.

The cost is quadratic tracking of a goal state plus input energy, minus
``lambda_obs`` times the observability lower bound. Dynamics are linear, so
states are eliminated (``x = Phi x0 + Gamma u``) and the only nonconvexity is
the keep-out constraint ``||p_k|| >= d``. Each iteration linearizes the
constraint and the concave bound around the current iterate, solves the
resulting QP with slacks inside a per-step trust region, and updates the
region with the usual actual-over-predicted ratio test.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .deviation import input_to_state_map
from .dynamics import LtiSystem, Trajectory, finite_horizon_lqr, lqr_rollout, rollout
from .observability import LowerBound, ObservabilityReport
from .solver_kernel import BallConstraint, Qp, QpOptions, solve_qp
from .uncertainty import UncertaintyModel

log = logging.getLogger(__name__)


def linearize_keepout(p_ref, d: float) -> tuple[np.ndarray, float]:
    """Supporting halfspace ``a'p >= b`` of the keep-out complement at ``p_ref``.

    ``a = p_ref / ||p_ref||``, ``b = d``. By Cauchy-Schwarz any ``p`` in the
    halfspace has ``||p|| >= a'p >= d``.
    """
    p_ref = np.asarray(p_ref, dtype=float)
    nrm = np.linalg.norm(p_ref)
    if nrm <= 1e-9:
        raise ValueError("keep-out linearization needs a nonzero reference position")
    return p_ref / nrm, float(d)


@dataclass
class RendezvousProblem:
    sys: LtiSystem
    model: UncertaintyModel
    x0: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    d: float
    lambda_obs: float
    eps: float
    N: int
    u_max: float
    x_goal: np.ndarray | None = None
    Qf: np.ndarray | None = None
    lipschitz_radius: float | None = None

    def __post_init__(self):
        nx = self.sys.nx
        self.x0 = np.asarray(self.x0, dtype=float)
        self.x_goal = np.zeros(nx) if self.x_goal is None else np.asarray(self.x_goal, dtype=float)
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.Qf = self.Q.copy() if self.Qf is None else np.atleast_2d(np.asarray(self.Qf, dtype=float))
        if self.x0.shape != (nx,) or self.x_goal.shape != (nx,):
            raise ValueError("x0 and x_goal must be state vectors")
        if self.N < 1:
            raise ValueError("horizon must be >= 1")
        if self.lambda_obs < 0:
            raise ValueError("lambda_obs must be nonnegative")
        if not self.u_max > 0 or self.d < 0 or not self.eps > 0:
            raise ValueError("need u_max > 0, d >= 0 and eps > 0")
        for M, nm in ((self.Q, "Q"), (self.Qf, "Qf")):
            if np.linalg.eigvalsh(0.5 * (M + M.T)).min() < -1e-12:
                raise ValueError(f"{nm} must be positive semidefinite")
        if np.linalg.eigvalsh(0.5 * (self.R + self.R.T)).min() <= 0:
            raise ValueError("R must be positive definite")
        if np.linalg.norm(self.position(self.x0)) < self.d:
            raise ValueError("initial position lies inside the keep-out zone")

    def position(self, X):
        return np.asarray(X)[..., :3]

    def tracking_cost(self, X, U) -> float:
        E = X - self.x_goal
        run = np.einsum("ti,ij,tj->", E[:-1], self.Q, E[:-1])
        run += np.einsum("ti,ij,tj->", U, self.R, U)
        return float(run + E[-1] @ self.Qf @ E[-1])


@dataclass
class ScvxOptions:
    trust_radius0: float = 10.0
    trust_shrink: float = 0.5
    trust_grow: float = 2.0
    rho0: float = 0.05
    rho1: float = 0.25
    rho2: float = 0.7
    slack_weight: float = 1e4
    max_iters: int = 200
    convergence_tol: float = 1e-6
    min_trust_radius: float = 1e-8
    max_trust_radius: float = 1e3
    initial_guess: str = "lqr"  # "lqr" | "drift"
    qp: QpOptions = field(default_factory=lambda: QpOptions(tol=1e-10))

    def __post_init__(self):
        if not 0 < self.rho0 < self.rho1 < self.rho2 < 1:
            raise ValueError("need 0 < rho0 < rho1 < rho2 < 1")
        if not 0 < self.trust_shrink < 1 < self.trust_grow:
            raise ValueError("need 0 < trust_shrink < 1 < trust_grow")
        if not self.trust_radius0 > 0 or not self.slack_weight > 0:
            raise ValueError("trust radius and slack weight must be positive")
        if self.initial_guess not in ("lqr", "drift"):
            raise ValueError(f"unknown initial guess {self.initial_guess!r}")


@dataclass
class ScvxIteration:
    cost: float  # true penalized cost of the candidate
    linearized_cost: float
    rho: float
    trust_radius: float  # radius used for this subproblem
    max_slack: float
    accepted: bool


@dataclass
class ScvxReport:
    iterations: list[ScvxIteration] = field(default_factory=list)
    status: str = "max_iter"  # "converged" | "keepout_infeasible" | "max_iter" | "qp_failed"

    @property
    def accepted_costs(self) -> list[float]:
        return [it.cost for it in self.iterations if it.accepted]

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def write_csv(self, path, header_lines: Sequence[str] = ()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "cost", "linearized_cost", "rho", "trust_radius", "max_slack", "accepted"])
            for i, it in enumerate(self.iterations):
                w.writerow([i] + [format(float(v), ".17g") for v in
                                  (it.cost, it.linearized_cost, it.rho, it.trust_radius, it.max_slack)]
                           + [int(it.accepted)])


@dataclass
class ScvxResult:
    trajectory: Trajectory
    report: ScvxReport
    obs_report: ObservabilityReport
    cost: float


def _initial_guess(p: RendezvousProblem, kind: str) -> np.ndarray:
    N, nu = p.N, p.sys.nu
    if kind == "drift":
        return np.zeros((N, nu))
    lqr = finite_horizon_lqr(p.sys, p.Q, p.R, p.Qf, N)
    # the LQ policy tracks x_goal exactly only if it is an equilibrium; either
    # way the clipped rollout is just a starting point
    U = np.empty((N, nu))
    x = p.x0.copy()
    for t in range(N):
        U[t] = np.clip(-lqr.gains[t] @ (x - p.x_goal), -p.u_max, p.u_max)
        x = p.sys.step(x, U[t])
    return U


def solve_scvx(p: RendezvousProblem, opts: ScvxOptions | None = None) -> ScvxResult:
    opts = opts or ScvxOptions()
    sys, N, nx, nu = p.sys, p.N, p.sys.nx, p.sys.nu
    lb = LowerBound(sys, p.model, N, p.eps, p.lipschitz_radius)
    G = input_to_state_map(sys, N)  # states 1..N from inputs, zero initial state
    P = sys.powers(N)
    free = np.concatenate([P[k] @ p.x0 for k in range(1, N + 1)])
    nU, nS = N * nu, N
    w = opts.slack_weight

    Qb = np.zeros((N * nx, N * nx))
    for k in range(N):
        Qb[k * nx:(k + 1) * nx, k * nx:(k + 1) * nx] = p.Qf if k == N - 1 else p.Q
    Rb = np.kron(np.eye(N), p.R)
    H = np.zeros((nU + nS, nU + nS))
    H[:nU, :nU] = 2.0 * (G.T @ Qb @ G + Rb)
    # inputs are whitened, u = W v with W = chol(H_uu)^-T, which makes the
    # subproblem Hessian the identity on v and keeps ADMM well conditioned
    W = np.linalg.inv(np.linalg.cholesky(H[:nU, :nU]).T)
    T = np.eye(nU + nS)
    T[:nU, :nU] = W
    goal = np.tile(p.x_goal, N)
    g_track = 2.0 * G.T @ Qb @ (free - goal)
    # cost parts that do not depend on u
    E0 = p.x0 - p.x_goal
    const0 = float(E0 @ p.Q @ E0) + float((free - goal) @ Qb @ (free - goal))

    def states(u):
        X = np.empty((N + 1, nx))
        X[0] = p.x0
        X[1:] = (free + G @ u).reshape(N, nx)
        return X

    def true_cost(u):
        X = states(u)
        U = u.reshape(N, nu)
        viol = np.maximum(p.d - np.linalg.norm(p.position(X[1:]), axis=1), 0.0)
        J = p.tracking_cost(X, U) + w * float(viol.sum())
        if p.lambda_obs:
            J -= p.lambda_obs * lb.value(X)
        return J

    A_in = np.zeros((nU + nS + N, nU + nS))
    A_in[:nU + nS, :nU + nS] = np.eye(nU + nS)
    lo = np.concatenate([np.full(nU, -p.u_max), np.zeros(nS), np.zeros(N)])
    hi = np.concatenate([np.full(nU, p.u_max), np.full(nS, np.inf), np.full(N, np.inf)])
    pos_rows = [G[k * nx:k * nx + 3] for k in range(N)]

    u = _initial_guess(p, opts.initial_guess).ravel()
    J = true_cost(u)
    delta = opts.trust_radius0
    rep = ScvxReport()
    y_warm = None

    for _ in range(opts.max_iters):
        X = states(u)
        gD = lb.gradient(X)[1:].ravel() if p.lambda_obs else np.zeros(N * nx)
        Dval = lb.value(X) if p.lambda_obs else 0.0
        g = np.concatenate([g_track - p.lambda_obs * (G.T @ gD), np.full(nS, w)])
        # keep-out halfspaces a_k' p_k + s_k >= d, with p_k affine in u
        Aq = A_in.copy()
        for k in range(N):
            pk = X[k + 1, :3]
            if np.linalg.norm(pk) <= 1e-9:
                pk = p.position(p.x0)
            a, b = linearize_keepout(pk, p.d)
            Aq[nU + nS + k, :nU] = a @ pos_rows[k]
            Aq[nU + nS + k, nU + k] = 1.0
            lo[nU + nS + k] = b - a @ free[k * nx:k * nx + 3]
        balls = [BallConstraint(np.hstack([G[k * nx:(k + 1) * nx], np.zeros((nx, nS))]),
                                X[k + 1] - free[k * nx:(k + 1) * nx], delta) for k in range(N)]
        qp = Qp(T.T @ H @ T, T.T @ g, A_in=Aq @ T, lb=lo, ub=hi,
                balls=[BallConstraint(b.A @ T, b.center, b.radius) for b in balls])
        v0 = np.concatenate([np.linalg.solve(W, u), np.zeros(nS)])
        res = solve_qp(qp, opts.qp, x0=v0, y0=y_warm)
        if not res.solved:
            log.warning("SCvx subproblem returned %s", res.status)
            rep.status = "qp_failed"
            break
        y_warm = res.y
        sol = T @ res.x
        un, s = sol[:nU], np.maximum(sol[nU:], 0.0)
        # linearized model of the true cost at the candidate; the constant
        # parts (x0 term, D at the iterate) make it comparable with J
        lin = res.objective + const0 + p.lambda_obs * (gD @ (X[1:].ravel() - free) - Dval)
        Jn = true_cost(un)
        pred = J - lin
        act = J - Jn
        max_slack = float(s.max(initial=0.0))
        if pred <= opts.convergence_tol * max(1.0, abs(J)):
            rep.iterations.append(ScvxIteration(Jn, lin, 1.0, delta, max_slack, act >= 0))
            if act >= 0:
                u, J = un, Jn
            rep.status = "converged" if max_slack < 1e-6 else "keepout_infeasible"
            break
        rho = act / pred
        accepted = rho >= opts.rho0
        rep.iterations.append(ScvxIteration(Jn, lin, rho, delta, max_slack, accepted))
        if accepted:
            change = abs(J - Jn)
            u, J = un, Jn
            if rho < opts.rho1:
                delta *= opts.trust_shrink
            elif rho > opts.rho2:
                delta = min(delta * opts.trust_grow, opts.max_trust_radius)
            if change < opts.convergence_tol * max(1.0, abs(J)):
                rep.status = "converged" if max_slack < 1e-6 else "keepout_infeasible"
                break
        else:
            delta *= opts.trust_shrink
            if delta < opts.min_trust_radius:
                rep.status = "converged" if max_slack < 1e-6 else "keepout_infeasible"
                break

    traj = rollout(sys, p.x0, u.reshape(N, nu))
    obs = lb.report(traj.states)
    return ScvxResult(traj, rep, obs, float(J))


def lq_tracking_reference(p: RendezvousProblem) -> Trajectory:
    """Unconstrained LQ tracking solution (exact when ``x_goal`` is an equilibrium)."""
    lqr = finite_horizon_lqr(p.sys, p.Q, p.R, p.Qf, p.N)
    return lqr_rollout(p.sys, lqr, p.x0, p.x_goal)
