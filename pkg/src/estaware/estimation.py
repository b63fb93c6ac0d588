"""Luenberger observers and closed-loop Monte Carlo along a reference.

Each run starts the true state at ``reference.states[0] + x0_offset`` and
the estimate at the reference start. Measurements are uniform draws from the
output set at the true state; the controller tracks the reference from the
estimate, ``u = ubar_t - K_t (xhat - xbar_t)``, and the observer updates
``xhat+ = A xhat + B u + L (y - C xhat)``. Statistics are of the estimation
error ``x - xhat``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_discrete_are

from .dynamics import LtiSystem, Trajectory
from .uncertainty import UncertaintyModel


class UnobservableError(np.linalg.LinAlgError):
    def __init__(self, rank: int, nx: int):
        super().__init__(f"(A, C) is not observable: observability matrix has rank {rank} < {nx}")
        self.rank, self.nx = rank, nx


class UnstableError(ValueError):
    pass


@dataclass(frozen=True)
class Observer:
    L: np.ndarray
    A: np.ndarray
    C: np.ndarray

    @property
    def error_matrix(self) -> np.ndarray:
        return self.A - self.L @ self.C

    @property
    def spectral_radius(self) -> float:
        return float(np.abs(np.linalg.eigvals(self.error_matrix)).max())

    @property
    def stable(self) -> bool:
        return self.spectral_radius < 1.0


def _check_observable(sys: LtiSystem):
    O = sys.observability_matrix()
    rank = int(np.linalg.matrix_rank(O))
    if rank < sys.nx:
        raise UnobservableError(rank, sys.nx)


def _real_block_diag(poles) -> np.ndarray:
    """Real matrix with the given spectrum; complex poles must come in conjugate pairs."""
    poles = np.asarray(poles, dtype=complex)
    blocks, used = [], np.zeros(len(poles), dtype=bool)
    for i, p in enumerate(poles):
        if used[i]:
            continue
        used[i] = True
        if abs(p.imag) < 1e-12:
            blocks.append(np.array([[p.real]]))
            continue
        j = next((k for k in range(len(poles)) if not used[k] and abs(poles[k] - p.conjugate()) < 1e-9), None)
        if j is None:
            raise ValueError("complex poles must come in conjugate pairs")
        used[j] = True
        blocks.append(np.array([[p.real, p.imag], [-p.imag, p.real]]))
    n = sum(len(b) for b in blocks)
    D = np.zeros((n, n))
    k = 0
    for b in blocks:
        D[k:k + len(b), k:k + len(b)] = b
        k += len(b)
    return D


def _ackermann_observer(A, c, poles) -> np.ndarray:
    """Gain ``l`` (column) placing the spectrum of ``A - l c`` for one output row ``c``."""
    n = A.shape[0]
    O = np.vstack([c @ np.linalg.matrix_power(A, k) for k in range(n)])
    coeffs = np.real(np.poly(poles))
    pA = sum(a * np.linalg.matrix_power(A, n - k) for k, a in enumerate(coeffs))
    e_n = np.zeros(n)
    e_n[-1] = 1.0
    return pA @ np.linalg.solve(O, e_n)


def place_observer_poles(sys: LtiSystem, poles, seed: int = 0, attempts: int = 20) -> np.ndarray:
    """Observer gain with ``eig(A - L C) = poles``.

    A square invertible ``C`` gets the direct solution ``L = (A - D) C^-1``.
    Otherwise a random preliminary gain makes the error matrix cyclic, a
    random output combination reduces to one output, and Ackermann's
    formula places the poles on that single-output pair.
    """
    A, C = sys.A, sys.C
    nx, ny = sys.nx, sys.ny
    poles = np.asarray(poles, dtype=complex)
    if len(poles) != nx:
        raise ValueError(f"need {nx} poles, got {len(poles)}")
    D = _real_block_diag(poles)
    if ny == nx and np.linalg.matrix_rank(C) == nx:
        return (A - D) @ np.linalg.inv(C)
    rng = np.random.default_rng(seed)
    target = np.sort_complex(poles)
    best = None
    for _ in range(attempts):
        L0 = 0.5 * rng.standard_normal((nx, ny)) if ny > 1 else np.zeros((nx, ny))
        w = rng.standard_normal(ny)
        Ab = A - L0 @ C
        c = w @ C
        O = np.vstack([c @ np.linalg.matrix_power(Ab, k) for k in range(nx)])
        if np.linalg.cond(O) > 1e10:
            continue
        L = L0 + np.outer(_ackermann_observer(Ab, c, poles), w)
        err = np.abs(np.sort_complex(np.linalg.eigvals(A - L @ C)) - target).max()
        if best is None or err < best[0]:
            best = (err, L)
        if err < 1e-6:
            break
    if best is None:
        raise np.linalg.LinAlgError("pole placement failed: no usable output combination")
    # repeated poles are ill-conditioned as eigenvalues, so check the
    # characteristic polynomial instead
    cp = np.real(np.poly(A - best[1] @ C))
    if np.abs(cp - np.real(np.poly(poles))).max() > 1e-6 * max(1.0, np.abs(np.poly(poles)).max()):
        raise np.linalg.LinAlgError("pole placement did not reach the requested spectrum")
    return best[1]


def design_observer(sys: LtiSystem, mode: str = "riccati", poles: Sequence[complex] | None = None,
                    seed: int = 0) -> Observer:
    """Stable observer by steady-state Riccati (unit weights) or pole placement."""
    _check_observable(sys)
    if mode == "riccati":
        I_x, I_y = np.eye(sys.nx), np.eye(sys.ny)
        P = solve_discrete_are(sys.A.T, sys.C.T, I_x, I_y)
        L = sys.A @ P @ sys.C.T @ np.linalg.inv(sys.C @ P @ sys.C.T + I_y)
    elif mode == "poles":
        if poles is None:
            raise ValueError("pole placement needs poles")
        if np.any(np.abs(np.asarray(poles)) >= 1):
            raise UnstableError("requested observer poles must lie inside the unit circle")
        L = place_observer_poles(sys, poles, seed)
    else:
        raise ValueError(f"unknown observer mode {mode!r}")
    obs = Observer(np.asarray(L, dtype=float), sys.A, sys.C)
    if not obs.stable:
        raise UnstableError(f"observer spectral radius {obs.spectral_radius:.6g} >= 1")
    return obs


@dataclass
class EstimationStats:
    mean: np.ndarray  # (T+1, nx) error mean
    var: np.ndarray  # (T+1, nx) error variance per state
    mean_error_norm: np.ndarray  # (T+1,)
    var_error_norm: np.ndarray  # (T+1,)
    runs: int

    @property
    def horizon(self) -> int:
        return len(self.mean) - 1

    @property
    def total_variance(self) -> np.ndarray:
        return self.var.sum(axis=1)

    @property
    def converged_variance(self) -> float:
        """Mean total error variance over the second half of the horizon."""
        tv = self.total_variance
        return float(tv[len(tv) // 2:].mean())

    def write_csv(self, path, header_lines: Sequence[str] = ()) -> None:
        nx = self.mean.shape[1]
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "mean_error_norm", "var_error_norm"] + [f"var_x{i}" for i in range(nx)])
            for t in range(len(self.mean)):
                w.writerow([t] + [format(float(v), ".17g") for v in
                                  (self.mean_error_norm[t], self.var_error_norm[t], *self.var[t])])


def default_offset(nx: int, eps: float) -> np.ndarray:
    return np.full(nx, eps / np.sqrt(nx))


def _gains(tracker_gain, T: int, nu: int, nx: int) -> np.ndarray:
    K = np.asarray(tracker_gain, dtype=float)
    if K.ndim == 2:
        K = np.broadcast_to(K, (T, nu, nx))
    if K.shape != (T, nu, nx):
        raise ValueError(f"tracker gain has shape {K.shape}, expected {(T, nu, nx)} or {(nu, nx)}")
    return K


def _simulate_chunk(sys, model, ref: Trajectory, L, K, x0_offset, n: int, rng):
    T = ref.horizon
    xbar, ubar = ref.states, ref.inputs
    X = np.broadcast_to(xbar[0] + x0_offset, (n, sys.nx)).copy()
    Xh = np.broadcast_to(xbar[0], (n, sys.nx)).copy()
    sums = np.empty((T + 1, 4, sys.nx))
    for t in range(T + 1):
        E = X - Xh
        en = np.linalg.norm(E, axis=1)
        sums[t, 0] = E.sum(axis=0)
        sums[t, 1] = (E * E).sum(axis=0)
        sums[t, 2] = en.sum()
        sums[t, 3] = (en * en).sum()
        if t == T:
            break
        Y = model.sample_outputs(X, rng)
        U = ubar[t] - (Xh - xbar[t]) @ K[t].T
        Xh = Xh @ sys.A.T + U @ sys.B.T + (Y - Xh @ sys.C.T) @ L.T
        X = X @ sys.A.T + U @ sys.B.T
    return sums


def simulate_closed_loop(sys: LtiSystem, model: UncertaintyModel, reference: Trajectory,
                         observer: Observer, tracker_gain, runs: int, seed: int = 0,
                         x0_offset=None, chunk: int = 2000) -> EstimationStats:
    """Monte Carlo error statistics; bit-reproducible for a given ``seed``.

    Runs are processed in chunks; chunk ``i`` draws from its own stream
    seeded by ``(seed, i)``, and per-chunk sums are combined with correctly
    rounded summation so the result does not depend on combination order.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if not observer.stable:
        raise UnstableError(f"observer spectral radius {observer.spectral_radius:.6g} >= 1")
    T, nx = reference.horizon, sys.nx
    K = _gains(tracker_gain, T, sys.nu, nx)
    x0_offset = np.zeros(nx) if x0_offset is None else np.asarray(x0_offset, dtype=float)
    parts = []
    for i, start in enumerate(range(0, runs, chunk)):
        n = min(chunk, runs - start)
        rng = np.random.default_rng([int(seed), i])
        parts.append(_simulate_chunk(sys, model, reference, observer.L, K, x0_offset, n, rng))
    stacked = np.stack(parts)
    total = np.empty(stacked.shape[1:])
    for idx in np.ndindex(total.shape):
        total[idx] = math.fsum(stacked[(slice(None),) + idx])
    mean = total[:, 0] / runs
    ddof = 1 if runs > 1 else 0
    var = np.maximum(total[:, 1] - runs * mean**2, 0.0) / (runs - ddof)
    mn = total[:, 2, 0] / runs
    vn = np.maximum(total[:, 3, 0] - runs * mn**2, 0.0) / (runs - ddof)
    return EstimationStats(mean, var, mn, vn, runs)
