"""State-dependent output uncertainty models.

Each model maps a state ``x`` to a ball (or fixed-shape ellipsoid) in output
space centered at ``C x`` whose radius ``radius_at(x)`` is the scalar size
measure used by the observability bound.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.stats import norm, qmc

from .geometry import Ellipsoid, unit_ball_samples

N_BALL_DIRECTIONS = 256


class DomainError(ValueError):
    """Raised when a model is evaluated where it is undefined or not differentiable."""


class EnvelopeFitError(RuntimeError):
    pass


def ball_directions(dim: int, n: int = N_BALL_DIRECTIONS) -> np.ndarray:
    """Deterministic quasi-uniform unit directions in ``R^dim`` (Halton + probit)."""
    return _ball_directions(dim, n).copy()


_DIR_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _ball_directions(dim: int, n: int) -> np.ndarray:
    key = (dim, n)
    if key not in _DIR_CACHE:
        if dim == 1:
            d = np.array([[1.0], [-1.0]])
        else:
            h = qmc.Halton(d=dim, scramble=False).random(n + 1)[1:]
            g = norm.ppf(np.clip(h, 1e-12, 1 - 1e-12))
            d = g / np.linalg.norm(g, axis=1, keepdims=True)
            # antipodal pairs keep the set balanced
            d = np.vstack([d[: n // 2], -d[: n - n // 2]])
        _DIR_CACHE[key] = d
    return _DIR_CACHE[key]


class UncertaintyModel(ABC):
    """Interface: scalar radius, its gradient, and the output ellipsoid."""

    C: np.ndarray

    @abstractmethod
    def radius_at(self, x) -> float: ...

    @abstractmethod
    def radius_gradient(self, x) -> np.ndarray: ...

    def radii(self, X) -> np.ndarray:
        """Vectorised ``radius_at`` over rows of ``X``."""
        return np.array([self.radius_at(x) for x in np.atleast_2d(X)])

    def radius_gradients(self, X) -> np.ndarray:
        return np.array([self.radius_gradient(x) for x in np.atleast_2d(X)])

    def shape_at(self, x) -> Ellipsoid:
        x = np.asarray(x, dtype=float)
        r = self.radius_at(x)
        return Ellipsoid.ball(self.C @ x, r)

    def sample_outputs(self, X, rng: np.random.Generator) -> np.ndarray:
        """One uniform draw from each output set ``Y_x`` for the rows of ``X``."""
        X = np.atleast_2d(X)
        u = unit_ball_samples(rng, len(X), self.C.shape[0])
        return X @ self.C.T + u * self.radii(X)[:, None]

    # -- local variation bound --------------------------------------------

    def local_max(self, x, r: float) -> float:
        """``max_{B_r(x)} radius`` by sampling the ball boundary."""
        x = np.asarray(x, dtype=float)
        pts = x + r * _ball_directions(x.size, N_BALL_DIRECTIONS)
        return float(max(self.radii(pts).max(), self.radius_at(x)))

    def local_lipschitz(self, x, r: float) -> float:
        """``L(x) = 2 M(x, r) / r`` with ``M`` the ball maximum of the radius."""
        if not r > 0:
            raise ValueError("ball radius must be positive")
        return 2.0 * self.local_max(x, r) / r

    def lipschitz_gradient(self, x, r: float) -> np.ndarray:
        """A (sub)gradient of ``local_lipschitz`` in ``x``.

        For the sampled maximum this is the radius gradient at the maximising
        boundary point (Danskin).
        """
        x = np.asarray(x, dtype=float)
        pts = x + r * _ball_directions(x.size, N_BALL_DIRECTIONS)
        vals = self.radii(pts)
        k = int(np.argmax(vals))
        if self.radius_at(x) >= vals[k]:
            return 2.0 * self.radius_gradient(x) / r
        return 2.0 * self.radius_gradient(pts[k]) / r

    def local_lipschitz_many(self, X, r: float) -> np.ndarray:
        return np.array([self.local_lipschitz(x, r) for x in np.atleast_2d(X)])

    def lipschitz_gradients(self, X, r: float, smoothing: float = 0.0) -> np.ndarray:
        """Row-wise ``lipschitz_gradient``.

        ``smoothing > 0`` asks for the gradient of a smoothed surrogate where
        the model has kinks; models without a closed form ignore it.
        """
        return np.array([self.lipschitz_gradient(x, r) for x in np.atleast_2d(X)])


@dataclass(frozen=True)
class ConstantRadiusModel(UncertaintyModel):
    C: np.ndarray
    c: float

    def __post_init__(self):
        object.__setattr__(self, "C", np.atleast_2d(np.asarray(self.C, dtype=float)))
        if self.c < 0:
            raise ValueError("radius must be nonnegative")

    def radius_at(self, x) -> float:
        return float(self.c)

    def radii(self, X) -> np.ndarray:
        return np.full(len(np.atleast_2d(X)), float(self.c))

    def radius_gradient(self, x) -> np.ndarray:
        return np.zeros(self.C.shape[1])

    def local_max(self, x, r: float) -> float:
        return float(self.c)

    def lipschitz_gradient(self, x, r: float) -> np.ndarray:
        return np.zeros(self.C.shape[1])

    def lipschitz_gradients(self, X, r: float, smoothing: float = 0.0) -> np.ndarray:
        return np.zeros((len(np.atleast_2d(X)), self.C.shape[1]))


@dataclass(frozen=True)
class QuadraticRadiusModel(UncertaintyModel):
    """``radius(x) = K ||C x - y_s||^2 + r0`` around a light source ``y_s``."""

    C: np.ndarray
    K: float
    source: np.ndarray
    r0: float

    def __post_init__(self):
        object.__setattr__(self, "C", np.atleast_2d(np.asarray(self.C, dtype=float)))
        object.__setattr__(self, "source", np.asarray(self.source, dtype=float))
        if self.K < 0:
            raise ValueError("K must be nonnegative")
        if not self.r0 > 0:
            raise ValueError("r0 must be positive")
        if self.source.shape != (self.C.shape[0],):
            raise ValueError("source must live in output space")
        object.__setattr__(self, "_sigma_C", float(np.linalg.norm(self.C, 2)))

    def radius_at(self, x) -> float:
        d = self.C @ np.asarray(x, dtype=float) - self.source
        return float(self.K * (d @ d) + self.r0)

    def radii(self, X) -> np.ndarray:
        D = np.atleast_2d(X) @ self.C.T - self.source
        return self.K * np.einsum("ij,ij->i", D, D) + self.r0

    def radius_gradient(self, x) -> np.ndarray:
        d = self.C @ np.asarray(x, dtype=float) - self.source
        return 2.0 * self.K * (self.C.T @ d)

    def radius_gradients(self, X) -> np.ndarray:
        D = np.atleast_2d(X) @ self.C.T - self.source
        return 2.0 * self.K * D @ self.C

    def local_max(self, x, r: float) -> float:
        a = np.linalg.norm(self.C @ np.asarray(x, dtype=float) - self.source)
        return float(self.K * (a + self._sigma_C * r) ** 2 + self.r0)

    def local_lipschitz_many(self, X, r: float) -> np.ndarray:
        a = np.linalg.norm(np.atleast_2d(X) @ self.C.T - self.source, axis=1)
        return 2.0 * (self.K * (a + self._sigma_C * r) ** 2 + self.r0) / r

    def lipschitz_gradient(self, x, r: float) -> np.ndarray:
        return self.lipschitz_gradients(np.atleast_2d(x), r)[0]

    def lipschitz_gradients(self, X, r: float, smoothing: float = 0.0) -> np.ndarray:
        D = np.atleast_2d(X) @ self.C.T - self.source
        a = np.linalg.norm(D, axis=1)
        # the norm has a kink at the source; 0 is a valid subgradient there.
        # smoothing replaces ||d|| by sqrt(||d||^2 + mu^2) in the unit vector
        den = np.sqrt(a**2 + smoothing**2)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(den[:, None] > 0, D / den[:, None], 0.0)
        coef = 2.0 * self.K * (a + self._sigma_C * r)
        return (2.0 / r) * (coef[:, None] * unit) @ self.C


@dataclass(frozen=True)
class IlluminationRadiusModel(UncertaintyModel):
    """Radius growing with the mismatch between view direction and sun direction.

    ``radius = a2 * s(p)^2 + a0`` where ``p = C x`` and
    ``s(p) = || p/||p|| - sun ||`` is the chordal distance between unit
    vectors, ``s = 2 sin(angle / 2)``.
    """

    C: np.ndarray
    sun_direction: np.ndarray
    a2: float
    a0: float
    min_range: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "C", np.atleast_2d(np.asarray(self.C, dtype=float)))
        sd = np.asarray(self.sun_direction, dtype=float)
        nrm = np.linalg.norm(sd)
        if nrm == 0:
            raise ValueError("sun direction must be nonzero")
        object.__setattr__(self, "sun_direction", sd / nrm)
        if self.a2 < 0 or not self.a0 > 0:
            raise ValueError("need a2 >= 0 and a0 > 0")

    def _positions(self, X):
        P = np.atleast_2d(X) @ self.C.T
        rng_ = np.linalg.norm(P, axis=1)
        if np.any(rng_ <= self.min_range):
            raise DomainError("illumination model undefined at the origin")
        return P, rng_

    def chordal(self, x) -> float:
        P, R = self._positions(x)
        return float(np.linalg.norm(P[0] / R[0] - self.sun_direction))

    def radius_at(self, x) -> float:
        return float(self.radii(np.atleast_2d(x))[0])

    def radii(self, X) -> np.ndarray:
        P, R = self._positions(X)
        cosang = (P @ self.sun_direction) / R
        return self.a2 * (2.0 - 2.0 * cosang) + self.a0

    def radius_gradient(self, x) -> np.ndarray:
        return self.radius_gradients(np.atleast_2d(x))[0]

    def radius_gradients(self, X) -> np.ndarray:
        P, R = self._positions(X)
        phat = P / R[:, None]
        cosang = phat @ self.sun_direction
        tang = self.sun_direction - cosang[:, None] * phat
        grad_p = -2.0 * self.a2 * tang / R[:, None]
        return grad_p @ self.C

    def local_lipschitz_many(self, X, r: float) -> np.ndarray:
        X = np.atleast_2d(X)
        dirs = _ball_directions(X.shape[1], N_BALL_DIRECTIONS)
        pts = X[:, None, :] + r * dirs[None, :, :]
        vals = self.radii(pts.reshape(-1, X.shape[1])).reshape(len(X), -1)
        M = np.maximum(vals.max(axis=1), self.radii(X))
        return 2.0 * M / r

    def lipschitz_gradients(self, X, r: float, smoothing: float = 0.0) -> np.ndarray:
        X = np.atleast_2d(X)
        dirs = _ball_directions(X.shape[1], N_BALL_DIRECTIONS)
        pts = X[:, None, :] + r * dirs[None, :, :]
        vals = self.radii(pts.reshape(-1, X.shape[1])).reshape(len(X), -1)
        k = np.argmax(vals, axis=1)
        best = pts[np.arange(len(X)), k]
        center_wins = self.radii(X) >= vals[np.arange(len(X)), k]
        best[center_wins] = X[center_wins]
        return 2.0 * self.radius_gradients(best) / r


# ---------------------------------------------------------------- envelopes


@dataclass(frozen=True)
class QuadraticEnvelope:
    """``g(z) = alpha z^2 + beta z + gamma`` with ``alpha >= 0``."""

    alpha: float
    beta: float
    gamma: float

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return self.alpha * z**2 + self.beta * z + self.gamma

    def min_slack(self, z, y) -> float:
        return float(np.min(self(z) - np.asarray(y, dtype=float)))


def fit_quadratic_envelope(z, y, linear: bool = True) -> QuadraticEnvelope:
    """Tightest convex quadratic upper bound on the samples ``(z_i, y_i)``.

    Solves ``min sum_i g(z_i) - y_i`` s.t. ``g(z_i) >= y_i``, ``alpha >= 0``
    as a linear program. With ``linear=False`` the linear coefficient is
    fixed at zero.
    """
    z = np.asarray(z, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if z.size != y.size:
        raise ValueError("z and y must have equal length")
    if z.size < 3:
        raise ValueError("need at least 3 samples")
    if np.ptp(z) == 0:
        raise ValueError("features must not all be equal")

    # centre and scale the feature so the LP is well conditioned; without a
    # linear term only scaling is allowed (centering would reintroduce beta)
    if linear:
        zc, zs = 0.5 * (z.max() + z.min()), 0.5 * np.ptp(z)
        w = (z - zc) / zs
        V = np.column_stack([w**2, w, np.ones_like(w)])
    else:
        zc, zs = 0.0, np.abs(z).max()
        w = z / zs
        V = np.column_stack([w**2, np.ones_like(w)])
    c = V.sum(axis=0)
    bounds = [(0, None)] + [(None, None)] * (V.shape[1] - 1)
    res = linprog(c, A_ub=-V, b_ub=-y, bounds=bounds, method="highs")
    if res.status != 0:
        cond = np.linalg.cond(V)
        raise EnvelopeFitError(f"envelope LP failed ({res.message}); cond(V)={cond:.3e}")
    coef = _polish_active(V, y, res.x)
    if linear:
        a_s, b_s, g_s = coef
    else:
        (a_s, g_s), b_s = coef, 0.0
    alpha = a_s / zs**2
    beta = b_s / zs - 2 * a_s * zc / zs**2
    gamma = a_s * zc**2 / zs**2 - b_s * zc / zs + g_s
    env = QuadraticEnvelope(float(max(alpha, 0.0)), float(beta), float(gamma))
    # shift up by any residual violation so the envelope property is exact
    viol = -env.min_slack(z, y)
    while viol > 0:
        g_new = max(env.gamma + viol, np.nextafter(env.gamma, np.inf))
        env = QuadraticEnvelope(env.alpha, env.beta, g_new)
        viol = -env.min_slack(z, y)
    return env


def _polish_active(V, y, x):
    """Re-solve the active constraints exactly to clean up LP tolerances."""
    k = V.shape[1]
    slack = V @ x - y
    scale = max(1.0, np.abs(y).max())
    act = np.flatnonzero(slack <= 1e-7 * scale)
    rows = [V[i] for i in act]
    rhs = [y[i] for i in act]
    if x[0] <= 1e-9 * max(1.0, np.abs(x).max()):
        e0 = np.zeros(k)
        e0[0] = 1.0
        rows.append(e0)
        rhs.append(0.0)
    if len(rows) < k:
        return x
    M = np.array(rows)
    if np.linalg.matrix_rank(M) < k:
        return x
    sol, *_ = np.linalg.lstsq(M, np.array(rhs), rcond=None)
    if sol[0] < 0 or np.min(V @ sol - y) < -1e-9 * scale:
        return x
    return sol
