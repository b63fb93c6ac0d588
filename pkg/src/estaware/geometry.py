"""Ellipsoids in output space and distances between them.

An ellipsoid is ``{p : (p - c)^T Q^{-1} (p - c) <= 1}`` with ``Q`` symmetric
positive definite. Its size measure (the "radius") is the largest distance
from the center to a member point, ``sqrt(lambda_max(Q))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

SYMMETRY_RTOL = 1e-12
CONTAINS_TOL = 1e-12


class InvalidEllipsoidError(ValueError):
    """Raised when a shape matrix is not symmetric positive definite."""


@dataclass(frozen=True)
class Ellipsoid:
    center: np.ndarray
    shape: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False, compare=False)
    _eigvals: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        Q = np.atleast_2d(np.asarray(self.shape, dtype=float))
        if c.ndim != 1 or Q.shape != (c.size, c.size):
            raise ValueError(
                f"shape matrix {Q.shape} does not match center dimension {c.size}"
            )
        scale = max(np.abs(Q).max(), np.finfo(float).tiny)
        if np.abs(Q - Q.T).max() > SYMMETRY_RTOL * scale:
            raise InvalidEllipsoidError("shape matrix is not symmetric")
        Q = 0.5 * (Q + Q.T)
        w = np.linalg.eigvalsh(Q)
        if not np.all(w > 0.0):
            raise InvalidEllipsoidError(
                f"shape matrix is not positive definite (min eigenvalue {w.min():.3e})"
            )
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "shape", Q)
        object.__setattr__(self, "_eigvals", w)
        object.__setattr__(self, "_chol", np.linalg.cholesky(Q))

    @classmethod
    def ball(cls, center, radius: float) -> "Ellipsoid":
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return cls(c, (radius**2) * np.eye(c.size))

    @property
    def dim(self) -> int:
        return self.center.size

    def radius(self) -> float:
        return radius(self)

    def contains(self, p) -> bool:
        return contains(self, p)

    def sample_uniform(self, rng: np.random.Generator, size: int | None = None):
        return sample_uniform(self, rng, size)


def radius(e: Ellipsoid) -> float:
    """Largest center-to-member distance, ``sqrt(lambda_max(Q))``."""
    return float(np.sqrt(e._eigvals[-1]))


def contains(e: Ellipsoid, p) -> bool:
    p = np.asarray(p, dtype=float)
    if p.shape != e.center.shape:
        raise ValueError(f"point of shape {p.shape} vs ellipsoid dimension {e.dim}")
    d = p - e.center
    # Q^{-1} via the Cholesky factor: ||L^{-1} d||^2
    w = np.linalg.solve(e._chol, d)
    return bool(w @ w <= 1.0 + CONTAINS_TOL)


def unit_ball_samples(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """``n`` points uniform in the unit ball of ``R^dim``, shape (n, dim)."""
    g = rng.standard_normal((n, dim))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    r = rng.random((n, 1)) ** (1.0 / dim)
    return g / norms * r


def unit_sphere_samples(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    g = rng.standard_normal((n, dim))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return g / norms


def sample_uniform(e: Ellipsoid, rng: np.random.Generator, size: int | None = None):
    """Uniform sample(s) over the ellipsoid.

    Returns a single point when ``size`` is None, otherwise an array of shape
    ``(size, dim)``. The map ``u -> c + L u`` with ``Q = L L^T`` is linear, so
    uniformity in the unit ball carries over.
    """
    n = 1 if size is None else int(size)
    u = unit_ball_samples(rng, n, e.dim)
    pts = e.center + u @ e._chol.T
    # guard against rounding pushing a point a hair outside
    w = np.linalg.solve(e._chol, (pts - e.center).T)
    q = np.einsum("ij,ij->j", w, w)
    over = q > 1.0
    if np.any(over):
        pts[over] = e.center + (pts[over] - e.center) / np.sqrt(q[over])[:, None]
    return pts[0] if size is None else pts


def _check_same_dim(e1: Ellipsoid, e2: Ellipsoid):
    if e1.dim != e2.dim:
        raise ValueError(f"dimension mismatch: {e1.dim} vs {e2.dim}")


def set_distance_lb(e1: Ellipsoid, e2: Ellipsoid) -> float:
    """``max(0, ||c1 - c2|| - radius(e1) - radius(e2))``.

    A lower bound on the infimum distance between the two sets; zero whenever
    the sets may intersect.
    """
    _check_same_dim(e1, e2)
    gap = np.linalg.norm(e1.center - e2.center) - radius(e1) - radius(e2)
    return float(max(0.0, gap))


def _member_samples(e: Ellipsoid, n: int, rng: np.random.Generator) -> np.ndarray:
    n_bnd = max(1, (3 * n) // 4)
    n_int = max(0, n - n_bnd - 1)
    bnd = e.center + unit_sphere_samples(rng, n_bnd, e.dim) @ e._chol.T
    parts = [e.center[None, :], bnd]
    if n_int:
        parts.append(sample_uniform(e, rng, n_int))
    return np.vstack(parts)[:n] if n > 1 else e.center[None, :]


def set_distance_sampled(
    e1: Ellipsoid, e2: Ellipsoid, n: int, rng: np.random.Generator
) -> float:
    """Minimum pairwise distance between ``n`` member samples of each set.

    Samples are the center, boundary points and interior points. Every sample
    is a member, so the result upper-bounds the true set distance.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    _check_same_dim(e1, e2)
    p1 = _member_samples(e1, n, rng)
    p2 = _member_samples(e2, n, rng)
    dist, _ = cKDTree(p2).query(p1, k=1)
    return float(dist.min())
