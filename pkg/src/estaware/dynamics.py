"""Discrete-time LTI systems, rollouts, the case-study models and LQR.

State ordering for the built-in models is positions first, then velocities:
``[p_x, p_y, v_x, v_y]`` for the planar double integrator and
``[x, y, z, xdot, ydot, zdot]`` (Hill frame) for Clohessy-Wiltshire.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

EARTH_MU = 3.986004418e14  # m^3/s^2


@dataclass(frozen=True)
class LtiSystem:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    dt: float

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        nx = A.shape[0]
        if A.shape != (nx, nx):
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != nx:
            raise ValueError(f"B has {B.shape[0]} rows, expected {nx}")
        if C.shape[1] != nx:
            raise ValueError(f"C has {C.shape[1]} columns, expected {nx}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.B.shape[1]

    @property
    def ny(self) -> int:
        return self.C.shape[0]

    def step(self, x, u):
        return self.A @ x + self.B @ u

    def powers(self, T: int) -> np.ndarray:
        """Stack ``A^0 .. A^T`` into an array of shape (T+1, nx, nx)."""
        out = np.empty((T + 1, self.nx, self.nx))
        out[0] = np.eye(self.nx)
        for t in range(1, T + 1):
            out[t] = self.A @ out[t - 1]
        return out

    def observability_matrix(self, T: int | None = None) -> np.ndarray:
        T = self.nx - 1 if T is None else T
        P = self.powers(T)
        return np.vstack([self.C @ P[t] for t in range(T + 1)])


@dataclass
class Trajectory:
    """States ``x_0..x_T`` (shape (T+1, nx)) and inputs ``u_0..u_{T-1}``.

    ``consistent`` is set only by code that produced the states by
    propagating the dynamics; planners may build tentative trajectories first.
    """

    states: np.ndarray
    inputs: np.ndarray
    consistent: bool = field(default=False)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        inputs = np.asarray(self.inputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs.reshape(-1, 1) if inputs.size else inputs.reshape(0, 0)
        self.inputs = inputs
        if len(self.states) != len(self.inputs) + 1:
            raise ValueError(
                f"{len(self.states)} states but {len(self.inputs)} inputs; "
                "need len(states) == len(inputs) + 1"
            )

    @property
    def horizon(self) -> int:
        return len(self.inputs)

    def dynamics_residual(self, sys: LtiSystem) -> float:
        if self.horizon == 0:
            return 0.0
        pred = self.states[:-1] @ sys.A.T + self.inputs @ sys.B.T
        return float(np.abs(self.states[1:] - pred).max())

    def copy(self) -> "Trajectory":
        return Trajectory(self.states.copy(), self.inputs.copy(), self.consistent)


def rollout(sys: LtiSystem, x0, u) -> Trajectory:
    x0 = np.asarray(x0, dtype=float)
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u.reshape(-1, sys.nu)
    if x0.shape != (sys.nx,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({sys.nx},)")
    if u.shape[1:] != (sys.nu,):
        raise ValueError(f"inputs have shape {u.shape}, expected (T, {sys.nu})")
    X = np.empty((len(u) + 1, sys.nx))
    X[0] = x0
    for t in range(len(u)):
        X[t + 1] = sys.A @ X[t] + sys.B @ u[t]
    return Trajectory(X, u.copy(), consistent=True)


def double_integrator_2d(dt: float) -> LtiSystem:
    """Planar double integrator, zero-order hold, position measurements."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    I2 = np.eye(2)
    A = np.block([[I2, dt * I2], [np.zeros((2, 2)), I2]])
    B = np.vstack([0.5 * dt**2 * I2, dt * I2])
    C = np.hstack([I2, np.zeros((2, 2))])
    return LtiSystem(A, B, C, dt)


def mean_motion(mu: float = EARTH_MU, a: float = 6.778e6) -> float:
    """Circular-orbit mean motion ``sqrt(mu / a^3)`` in rad/s."""
    if mu <= 0 or a <= 0:
        raise ValueError("mu and a must be positive")
    return float(np.sqrt(mu / a**3))


def cw_continuous(n: float) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time CW pair ``(A_c, B_c)`` for acceleration inputs."""
    A = np.zeros((6, 6))
    A[0:3, 3:6] = np.eye(3)
    A[3, 0] = 3 * n**2
    A[3, 4] = 2 * n
    A[4, 3] = -2 * n
    A[5, 2] = -(n**2)
    B = np.vstack([np.zeros((3, 3)), np.eye(3)])
    return A, B


def cw_stm(n: float, t: float) -> np.ndarray:
    """Closed-form CW state transition matrix over elapsed time ``t``."""
    nt = n * t
    s, c = np.sin(nt), np.cos(nt)
    return np.array(
        [
            [4 - 3 * c, 0, 0, s / n, 2 * (1 - c) / n, 0],
            [6 * (s - nt), 1, 0, -2 * (1 - c) / n, (4 * s - 3 * nt) / n, 0],
            [0, 0, c, 0, 0, s / n],
            [3 * n * s, 0, 0, c, 2 * s, 0],
            [-6 * n * (1 - c), 0, 0, -2 * s, 4 * c - 3, 0],
            [0, 0, -n * s, 0, 0, c],
        ]
    )


def cw_input_matrix(n: float, t: float) -> np.ndarray:
    """Zero-order-hold input matrix: the STM velocity columns integrated over [0, t]."""
    nt = n * t
    s, c = np.sin(nt), np.cos(nt)
    n2 = n * n
    return np.array(
        [
            [(1 - c) / n2, 2 * (t - s / n) / n, 0],
            [-2 * (t - s / n) / n, 4 * (1 - c) / n2 - 1.5 * t**2, 0],
            [0, 0, (1 - c) / n2],
            [s / n, 2 * (1 - c) / n, 0],
            [-2 * (1 - c) / n, 4 * s / n - 3 * t, 0],
            [0, 0, s / n],
        ]
    )


def cw_system(n: float, dt: float) -> LtiSystem:
    if not n > 0 or not dt > 0:
        raise ValueError("mean motion and dt must be positive")
    C = np.hstack([np.eye(3), np.zeros((3, 3))])
    return LtiSystem(cw_stm(n, dt), cw_input_matrix(n, dt), C, dt)


@dataclass
class LqrSolution:
    gains: np.ndarray  # (T, nu, nx)
    cost_to_go: np.ndarray  # (T+1, nx, nx)


def finite_horizon_lqr(sys: LtiSystem, Q, R, Qf, T: int) -> LqrSolution:
    """Backward Riccati recursion for ``sum_t x'Qx + u'Ru + x_T' Qf x_T``.

    The optimal policy is ``u_t = -K_t x_t``.
    """
    if T < 1:
        raise ValueError("horizon must be >= 1")
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    Qf = np.atleast_2d(np.asarray(Qf, dtype=float))
    if np.linalg.eigvalsh(0.5 * (R + R.T)).min() <= 0:
        raise np.linalg.LinAlgError("R must be positive definite")
    A, B = sys.A, sys.B
    P = np.empty((T + 1, sys.nx, sys.nx))
    K = np.empty((T, sys.nu, sys.nx))
    P[T] = 0.5 * (Qf + Qf.T)
    for t in range(T - 1, -1, -1):
        Pn = P[t + 1]
        S = R + B.T @ Pn @ B
        K[t] = np.linalg.solve(S, B.T @ Pn @ A)
        Pt = Q + A.T @ Pn @ (A - B @ K[t])
        P[t] = 0.5 * (Pt + Pt.T)
    return LqrSolution(K, P)


def lqr_rollout(sys: LtiSystem, lqr: LqrSolution, x0, x_ref=None) -> Trajectory:
    """Closed-loop rollout of ``u_t = -K_t (x_t - x_ref)``."""
    x_ref = np.zeros(sys.nx) if x_ref is None else np.asarray(x_ref, dtype=float)
    T = len(lqr.gains)
    X = np.empty((T + 1, sys.nx))
    U = np.empty((T, sys.nu))
    X[0] = x0
    for t in range(T):
        U[t] = -lqr.gains[t] @ (X[t] - x_ref)
        X[t + 1] = sys.A @ X[t] + sys.B @ U[t]
    return Trajectory(X, U, consistent=True)


def quadratic_cost(traj: Trajectory, Q, R, Qf, x_ref=None) -> float:
    Q, R, Qf = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (Q, R, Qf))
    x_ref = 0.0 if x_ref is None else np.asarray(x_ref, dtype=float)
    E = traj.states - x_ref
    run = np.einsum("ti,ij,tj->", E[:-1], Q, E[:-1])
    run += np.einsum("ti,ij,tj->", traj.inputs, R, traj.inputs)
    return float(run + E[-1] @ Qf @ E[-1])


# ---------------------------------------------------------------- CSV


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_trajectory_csv(
    path, traj: Trajectory, header_lines: Sequence[str] = ()
) -> None:
    nx = traj.states.shape[1]
    nu = traj.inputs.shape[1] if traj.horizon else 0
    cols = ["t"] + [f"x{i}" for i in range(nx)] + [f"u{j}" for j in range(nu)]
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for t, x in enumerate(traj.states):
            row = [str(t)] + [_fmt(v) for v in x]
            if t < traj.horizon:
                row += [_fmt(v) for v in traj.inputs[t]]
            else:
                row += [""] * nu
            w.writerow(row)


def read_trajectory_csv(path) -> Trajectory:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    head, body = rows[0], rows[1:]
    xi = [i for i, h in enumerate(head) if h.startswith("x")]
    ui = [i for i, h in enumerate(head) if h.startswith("u")]
    X = np.array([[float(r[i]) for i in xi] for r in body])
    U = np.array([[float(r[i]) for i in ui] for r in body[:-1]]).reshape(len(body) - 1, len(ui))
    return Trajectory(X, U)
