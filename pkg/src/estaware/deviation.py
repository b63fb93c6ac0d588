"""Observability-maximising deviation from a nominal trajectory.

Given a nominal pair ``(xbar, ubar)``, find input deviations ``xi`` whose
state deviations ``eta`` (``eta_0 = 0``, ``eta_{k+1} = A eta_k + B xi_k``)
stay within ``gamma`` of the nominal at every step and vanish at the final
step, while maximising the observability lower bound of ``xbar + eta``.

The objective depends on states only, so the search runs over ``eta`` in the
reachable subspace ``{Gamma xi : eta_N(xi) = 0}``. It is projected gradient
ascent: each trial point is projected onto subspace-intersect-balls with
Dykstra's method and accepted only if it improves the objective.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space, orth

from .dynamics import LtiSystem, Trajectory, rollout
from .observability import LowerBound, ObservabilityReport
from .solver_kernel import AffineProjector, dykstra, project_ball
from .uncertainty import UncertaintyModel

log = logging.getLogger(__name__)


@dataclass
class DeviationProblem:
    sys: LtiSystem
    model: UncertaintyModel
    nominal: Trajectory
    gamma: float
    eps: float
    lipschitz_radius: float | None = None

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        res = self.nominal.dynamics_residual(self.sys)
        if res > 1e-9 * max(1.0, np.abs(self.nominal.states).max()):
            raise ValueError(f"nominal trajectory is not dynamically consistent (residual {res:.3e})")

    @property
    def N(self) -> int:
        return self.nominal.horizon


@dataclass
class DeviationOptions:
    max_iters: int = 1000
    tol: float = 1e-7
    min_step: float = 1e-10
    min_smoothing: float = 1e-9
    dykstra_iters: int = 5000
    dykstra_tol: float = 1e-12


@dataclass
class DeviationResult:
    trajectory: Trajectory
    report: ObservabilityReport
    nominal_report: ObservabilityReport
    status: str  # "converged" | "max_iter" | "trivial"
    iterations: int
    history: list[float] = field(default_factory=list)


def input_to_state_map(sys: LtiSystem, N: int) -> np.ndarray:
    """``Gamma`` with ``vec(eta_1..eta_N) = Gamma vec(xi_0..xi_{N-1})`` for ``eta_0 = 0``."""
    nx, nu = sys.nx, sys.nu
    P = sys.powers(N)
    G = np.zeros((N * nx, N * nu))
    for k in range(1, N + 1):
        for j in range(k):
            G[(k - 1) * nx:k * nx, j * nu:(j + 1) * nu] = P[k - 1 - j] @ sys.B
    return G


class FeasibleSet:
    """Reachable deviations with zero terminal deviation and per-step balls."""

    def __init__(self, sys: LtiSystem, N: int, gamma: float):
        self.nx, self.N, self.gamma = sys.nx, N, float(gamma)
        self.Gamma = input_to_state_map(sys, N)
        Z = null_space(self.Gamma[-sys.nx:])
        basis = orth(self.Gamma @ Z) if Z.size else np.zeros((N * sys.nx, 0))
        self.dim = basis.shape[1]
        # the subspace as {v : W' v = 0} with W spanning its complement
        W = null_space(basis.T) if self.dim else np.eye(N * sys.nx)
        self._affine = AffineProjector(W.T, np.zeros(W.shape[1])) if W.size else None
        self._basis = basis

    def project_subspace(self, v):
        return self._affine(v) if self._affine is not None else v.copy()

    def project_balls(self, v):
        E = v.reshape(self.N, self.nx).copy()
        for k in range(self.N):
            E[k] = project_ball(E[k], self.gamma)
        return E.ravel()

    def project(self, v, iters, tol):
        res = dykstra(v, [self.project_balls, self.project_subspace], iters=iters, tol=tol)
        return self.clean(res.x), res

    def clean(self, v):
        """Exactly feasible point near ``v``: subspace projection then radial shrink.

        The subspace is linear and the ball product is star-shaped about the
        origin, so scaling towards zero preserves both.
        """
        v = self.project_subspace(v)
        E = v.reshape(self.N, self.nx)
        peak = np.linalg.norm(E, axis=1).max(initial=0.0)
        if peak > self.gamma:
            v = v * (self.gamma / peak)
        return v


def solve_deviation(p: DeviationProblem, opts: DeviationOptions | None = None,
                    warm_start: Trajectory | None = None) -> DeviationResult:
    """Projected (sub)gradient ascent on the lower bound.

    ``warm_start`` is an earlier solution for the same nominal, e.g. from a
    smaller ``gamma``; it is used only if it is feasible for this problem.
    """
    opts = opts or DeviationOptions()
    sys, N = p.sys, p.N
    lb = LowerBound(sys, p.model, N, p.eps, p.lipschitz_radius)
    Xbar = p.nominal.states
    nom_report = lb.report(Xbar)

    def states(eta):
        X = Xbar.copy()
        X[1:] += eta.reshape(N, sys.nx)
        return X

    def finish(eta, status, it, hist):
        xi, *_ = np.linalg.lstsq(feas.Gamma, eta, rcond=None) if eta.any() else (np.zeros(N * sys.nu),)
        traj = rollout(sys, Xbar[0], p.nominal.inputs + xi.reshape(N, sys.nu))
        rep = lb.report(traj.states)
        if rep.value < nom_report.value:
            # rounding in the input recovery must never cost objective
            traj, rep = p.nominal.copy(), nom_report
        return DeviationResult(traj, rep, nom_report, status, it, hist)

    if p.gamma == 0:
        return DeviationResult(p.nominal.copy(), nom_report, nom_report, "trivial", 0, [nom_report.value])

    feas = FeasibleSet(sys, N, p.gamma)
    eta = np.zeros(N * sys.nx)
    if feas.dim == 0:
        return finish(eta, "trivial", 0, [nom_report.value])

    f = nom_report.value
    if warm_start is not None:
        res = feasibility_residuals(p, warm_start)
        if res["ball"] <= 1e-12 and res["terminal"] <= 1e-12 and res["dynamics"] <= 1e-9 \
                and res["initial"] == 0:
            cand = (warm_start.states - Xbar)[1:].ravel()
            fc = lb.value(states(cand))
            if fc > f:
                eta, f = cand, fc
    hist = [f]
    status = "max_iter"
    scale = p.gamma * np.sqrt(N)
    step = 1.0
    # search directions come from a smoothed gradient where the model has
    # kinks; acceptance is always judged on the true objective
    mu = p.gamma
    it = 0
    for it in range(1, opts.max_iters + 1):
        g = lb.gradient(states(eta), smoothing=mu)[1:].ravel()
        d = feas.project_subspace(g)
        nd = np.linalg.norm(d)
        accepted = False
        if nd > 1e-14 * max(1.0, np.linalg.norm(g)):
            d *= scale / nd
            t = min(1.0, 2.0 * step)
            while t >= opts.min_step:
                cand, _ = feas.project(eta + t * d, opts.dykstra_iters, opts.dykstra_tol)
                fc = lb.value(states(cand))
                if fc > f:
                    accepted = True
                    break
                t *= 0.5
        if accepted:
            change = fc - f
            eta, f, step = cand, fc, t
            hist.append(f)
        if not accepted or change <= opts.tol * max(1.0, abs(f)):
            # stalled: sharpen the search direction before declaring convergence
            if mu > opts.min_smoothing * p.gamma:
                mu *= 0.1
                step = 1.0
                continue
            status = "converged"
            break
    return finish(eta, status, it, hist)


def sweep_gamma(p: DeviationProblem, gammas, opts: DeviationOptions | None = None
                ) -> list[DeviationResult]:
    """Solve for each gamma in ascending order, warm-starting from the previous one.

    A solution for a smaller gamma is feasible for a larger one, so objectives
    along the sweep are non-decreasing.
    """
    out, prev = {}, None
    for g in sorted(set(float(g) for g in gammas)):
        q = DeviationProblem(p.sys, p.model, p.nominal, g, p.eps, p.lipschitz_radius)
        prev = solve_deviation(q, opts, warm_start=prev.trajectory if prev else None)
        out[g] = prev
    return [out[float(g)] for g in gammas]


def feasibility_residuals(p: DeviationProblem, traj: Trajectory) -> dict:
    dev = traj.states - p.nominal.states
    return {
        "ball": float(max(0.0, np.linalg.norm(dev, axis=1).max() - p.gamma)),
        "terminal": float(np.linalg.norm(dev[-1])),
        "initial": float(np.linalg.norm(dev[0])),
        "dynamics": traj.dynamics_residual(p.sys),
    }
