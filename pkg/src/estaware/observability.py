"""Degree of observability for set-valued outputs.

The closed-form lower bound along a nominal trajectory is

    D_lb = sum_t  sigma_min(C A^t) eps
                - sigma_max(A^t) eps L(x_t) - 2 radius(x_t)

where ``sigma_min(M) = min_{||v||=1} ||M v||`` (zero when ``M`` has fewer
rows than columns) and ``L`` is the local variation bound of the radius on a
ball of radius ``r``. The per-step terms are not clamped, so the bound stays
concave in the state sequence whenever the radius map is convex.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import LtiSystem, Trajectory, rollout
from .geometry import Ellipsoid, radius as ellipsoid_radius, unit_sphere_samples
from .uncertainty import UncertaintyModel

log = logging.getLogger(__name__)

DEFAULT_MULTIPLIERS = (1.0, 1.5, 2.0)


def sigma_min(M: np.ndarray) -> float:
    """Smallest gain ``min_{||v||=1} ||M v||`` of ``M``."""
    M = np.atleast_2d(M)
    if M.shape[0] < M.shape[1]:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[-1])


def sigma_max(M: np.ndarray) -> float:
    return float(np.linalg.norm(np.atleast_2d(M), 2))


@dataclass
class ObservabilityReport:
    value: float
    T1: np.ndarray
    T2: np.ndarray
    epsilon: float
    radius: float
    warnings: list[str] = field(default_factory=list)

    @property
    def positive(self) -> bool:
        return self.value > 0

    @property
    def per_step(self) -> np.ndarray:
        return self.T1 + self.T2

    @property
    def step_positive(self) -> np.ndarray:
        return self.per_step > 0

    @property
    def clamped_value(self) -> float:
        """Sum of per-step terms clamped at zero (diagnostic only)."""
        return float(np.maximum(self.per_step, 0.0).sum())

    def write_csv(self, path, header_lines: Sequence[str] = ()) -> None:
        cum = np.cumsum(self.per_step)
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "T1", "T2", "cumulative"])
            for t in range(len(self.T1)):
                w.writerow(
                    [t] + [format(float(v), ".17g") for v in (self.T1[t], self.T2[t], cum[t])]
                )


class LowerBound:
    """Cached evaluator of the lower bound for one system, horizon and ``eps``.

    The singular values of ``C A^t`` and ``A^t`` do not depend on the state
    and are computed once. ``radius`` is the ball radius of the local
    variation bound; by default it is the largest state deviation an
    ``eps``-perturbation of the initial state reaches over the horizon,
    ``eps * max_t sigma_max(A^t)``.
    """

    def __init__(self, sys: LtiSystem, model: UncertaintyModel, T: int, eps: float,
                 radius: float | None = None):
        if eps < 0:
            raise ValueError("eps must be nonnegative")
        self.sys, self.model, self.T, self.eps = sys, model, int(T), float(eps)
        P = sys.powers(self.T)
        self.smin_CA = np.array([sigma_min(sys.C @ P[t]) for t in range(self.T + 1)])
        self.smax_A = np.array([sigma_max(P[t]) for t in range(self.T + 1)])
        if radius is None:
            radius = self.eps * self.smax_A.max()
            if radius <= 0:
                radius = 1.0
        if not radius > 0:
            raise ValueError("Lipschitz ball radius must be positive")
        self.radius = float(radius)

    def _check(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape != (self.T + 1, self.sys.nx):
            raise ValueError(f"state sequence has shape {X.shape}, expected {(self.T + 1, self.sys.nx)}")
        return X

    def terms(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = self._check(X)
        T1 = self.smin_CA * self.eps
        L = self.model.local_lipschitz_many(X, self.radius)
        T2 = -self.smax_A * self.eps * L - 2.0 * self.model.radii(X)
        return T1, T2

    def value(self, X) -> float:
        T1, T2 = self.terms(X)
        return float(T1.sum() + T2.sum())

    def gradient(self, X, smoothing: float = 0.0) -> np.ndarray:
        """Gradient with respect to each state, shape (T+1, nx).

        ``smoothing`` is forwarded to the model's local-variation gradient
        (search directions near kinks); leave it at 0 for the true gradient.
        """
        X = self._check(X)
        gL = self.model.lipschitz_gradients(X, self.radius, smoothing)
        gR = self.model.radius_gradients(X)
        return -(self.smax_A * self.eps)[:, None] * gL - 2.0 * gR

    def report(self, X) -> ObservabilityReport:
        T1, T2 = self.terms(X)
        rep = ObservabilityReport(float(T1.sum() + T2.sum()), T1, T2, self.eps, self.radius)
        if rep.value <= 0:
            msg = f"lower bound {rep.value:.6g} is not positive; increase eps"
            rep.warnings.append(msg)
            log.info(msg)
        return rep

    def suggest_epsilon(self, X) -> float | None:
        """Smallest ``eps`` making the bound positive at this ball radius.

        With the radius held fixed the bound is affine in ``eps``; returns
        None when the slope is not positive (no ``eps`` works).
        """
        X = self._check(X)
        L = self.model.local_lipschitz_many(X, self.radius)
        slope = float(np.sum(self.smin_CA - self.smax_A * L))
        offset = float(2.0 * self.model.radii(X).sum())
        if slope <= 0:
            return None
        return offset / slope


def observability_lower_bound(sys: LtiSystem, model: UncertaintyModel, nominal: Trajectory,
                              eps: float, radius: float | None = None) -> ObservabilityReport:
    lb = LowerBound(sys, model, nominal.horizon, eps, radius)
    return lb.report(nominal.states)


def observability_lower_bound_gradient(sys: LtiSystem, model: UncertaintyModel,
                                       nominal: Trajectory, eps: float,
                                       radius: float | None = None) -> np.ndarray:
    return LowerBound(sys, model, nominal.horizon, eps, radius).gradient(nominal.states)


# ---------------------------------------------------------------- tubes


def _tube_lb(c1, r1, c2, r2) -> float | np.ndarray:
    """Sum over the last-but-one axis of clamped center-gap minus radii."""
    gap = np.linalg.norm(c1 - c2, axis=-1) - r1 - r2
    return np.maximum(gap, 0.0).sum(axis=-1)


def tube_distance(Y1: Sequence[Ellipsoid], Y2: Sequence[Ellipsoid]) -> float:
    """Sum of per-step set-distance lower bounds between two output tubes."""
    if len(Y1) != len(Y2):
        raise ValueError(f"tube lengths differ: {len(Y1)} vs {len(Y2)}")
    if not len(Y1):
        return 0.0
    c1 = np.array([e.center for e in Y1])
    c2 = np.array([e.center for e in Y2])
    r1 = np.array([ellipsoid_radius(e) for e in Y1])
    r2 = np.array([ellipsoid_radius(e) for e in Y2])
    return float(_tube_lb(c1, r1, c2, r2))


def output_tube(model: UncertaintyModel, traj: Trajectory) -> list[Ellipsoid]:
    return [model.shape_at(x) for x in traj.states]


def degree_of_observability_sampled(sys: LtiSystem, model: UncertaintyModel,
                                    nominal: Trajectory, eps: float, n_samples: int,
                                    rng: np.random.Generator,
                                    radii_multipliers: Sequence[float] = DEFAULT_MULTIPLIERS,
                                    chunk: int = 256) -> float:
    """Brute-force estimate of the worst-case tube separation.

    Initial-state perturbations are drawn on spheres of radius ``eps * m``
    for every multiplier ``m`` and rolled out with the nominal inputs. The
    minimum tube distance over all draws is returned; it upper-bounds the
    true infimum. Directions are drawn in a single batch so the first ``n``
    draws of a larger request coincide with a smaller one under the same seed.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if any(m < 1 for m in radii_multipliers):
        raise ValueError("multipliers must be >= 1")
    dirs = unit_sphere_samples(rng, n_samples, sys.nx)
    Xbar = nominal.states
    T = nominal.horizon
    P = sys.powers(T)  # perturbations propagate as A^t dx0 under equal inputs
    cbar = Xbar @ sys.C.T
    rbar = model.radii(Xbar)
    best = np.inf
    for m in radii_multipliers:
        for s in range(0, n_samples, chunk):
            D0 = eps * m * dirs[s:s + chunk]
            dX = np.einsum("tij,nj->nti", P, D0)
            X = Xbar[None] + dX
            c = X @ sys.C.T
            r = model.radii(X.reshape(-1, sys.nx)).reshape(len(D0), T + 1)
            d = _tube_lb(c, r, cbar[None], rbar[None])
            best = min(best, float(d.min()))
    return best


def degree_of_observability_rollout(sys, model, nominal, x0):
    """Tube distance between the nominal and one perturbed rollout (reference path)."""
    pert = rollout(sys, x0, nominal.inputs)
    return tube_distance(output_tube(model, nominal), output_tube(model, pert))
