"""Independent reference computations used by the tests.

Each oracle avoids the code path it checks: power iteration instead of an
eigen-solver, brute-force active-set enumeration instead of ADMM, textbook
closed-form CW motion instead of the discretized state transition matrix.
"""

import itertools

import numpy as np


def power_iteration(Q, iters=20000, tol=1e-15, seed=0):
    v = np.random.default_rng(seed).standard_normal(len(Q))
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = Q @ v
        lam_new = float(v @ w)
        v = w / np.linalg.norm(w)
        if abs(lam_new - lam) < tol * max(1.0, abs(lam_new)):
            break
        lam = lam_new
    return float(v @ Q @ v)


def box_qp_active_set(H, g, lb, ub):
    """Enumerate free/lower/upper assignments of ``min 1/2 x'Hx + g'x, lb <= x <= ub``."""
    n = len(g)
    best = None
    for pattern in itertools.product((0, 1, 2), repeat=n):
        x = np.zeros(n)
        fixed = np.array([p != 0 for p in pattern])
        for i, p in enumerate(pattern):
            if p == 1:
                x[i] = lb[i]
            elif p == 2:
                x[i] = ub[i]
        free = ~fixed
        if free.any():
            rhs = -(g[free] + H[np.ix_(free, fixed)] @ x[fixed])
            x[free] = np.linalg.solve(H[np.ix_(free, free)], rhs)
        if np.any(x < lb - 1e-12) or np.any(x > ub + 1e-12):
            continue
        grad = H @ x + g
        ok = all(
            (p == 1 and grad[i] >= -1e-10) or (p == 2 and grad[i] <= 1e-10) or p == 0
            for i, p in enumerate(pattern)
        )
        if ok:
            f = 0.5 * x @ H @ x + g @ x
            if best is None or f < best[0]:
                best = (f, x)
    return best[1]


def cw_closed_form(n, t, x0):
    """Textbook CW free motion, x radial, y along-track, z cross-track."""
    x, y, z, vx, vy, vz = x0
    s, c = np.sin(n * t), np.cos(n * t)
    return np.array([
        (4 - 3 * c) * x + s / n * vx + 2 / n * (1 - c) * vy,
        6 * (s - n * t) * x + y - 2 / n * (1 - c) * vx + (4 * s - 3 * n * t) / n * vy,
        z * c + vz / n * s,
        3 * n * s * x + c * vx + 2 * s * vy,
        -6 * n * (1 - c) * x - 2 * s * vx + (4 * c - 3) * vy,
        -z * n * s + vz * c,
    ])


def quadratic_bound_batch(sys, K, source, r0, eps, radius, X):
    """Lower bound for the quadratic radius model on a batch ``X`` of shape (n, T+1, nx).

    Written out from the defining formula with singular values from a full
    SVD, independent of the package's cached evaluator.
    """
    T = X.shape[1] - 1
    smin, smax = np.zeros(T + 1), np.zeros(T + 1)
    At = np.eye(sys.nx)
    for t in range(T + 1):
        s = np.linalg.svd(sys.C @ At, compute_uv=False)
        smin[t] = s.min() if sys.C.shape[0] >= sys.nx else 0.0
        smax[t] = np.linalg.svd(At, compute_uv=False).max()
        At = sys.A @ At
    sC = np.linalg.svd(sys.C, compute_uv=False).max()
    dist = np.linalg.norm(X @ sys.C.T - source, axis=-1)
    L = 2.0 * (K * (dist + sC * radius) ** 2 + r0) / radius
    lam = K * dist**2 + r0
    return (smin * eps - smax * eps * L - 2.0 * lam).sum(axis=-1)


def three_segment_grid_search(sys, nominal, value_batch, gamma, levels=5, scales=20):
    """Best objective over deviations built from three constant input segments.

    The input deviation is piecewise constant on three segments of the first
    ``N - ceil(nx/nu)`` steps, with both breakpoints gridded; the remaining
    steps are solved to bring the deviation back to zero. Each pattern is
    scaled along the ray from zero up to the per-step ball boundary.
    ``value_batch`` maps state sequences of shape (n, T+1, nx) to objectives.
    """
    N, nx, nu = nominal.horizon, sys.nx, sys.nu
    tail = int(np.ceil(nx / nu))
    head = N - tail
    P = sys.powers(N)
    G_tail = np.hstack([P[N - 1 - j] @ sys.B for j in range(head, N)])
    grid = np.linspace(-1.0, 1.0, levels)
    patterns = np.array([v for v in itertools.product(grid, repeat=3 * nu) if any(v)])
    s = np.linspace(0.0, 1.0, scales + 1)[1:]
    best = float(value_batch(nominal.states[None])[0])

    def response(xi):
        eta = np.zeros(nx)
        for j in range(head):
            eta = sys.A @ eta + sys.B @ xi[j]
        drift = np.linalg.matrix_power(sys.A, tail) @ eta
        xi[head:] = np.linalg.lstsq(G_tail, -drift, rcond=None)[0].reshape(tail, nu)
        E = np.zeros((N + 1, nx))
        for j in range(N):
            E[j + 1] = sys.A @ E[j] + sys.B @ xi[j]
        return E

    for c1 in range(1, head - 1):
        for c2 in range(c1 + 1, head):
            cuts = (0, c1, c2, head)
            # the deviation is linear in the pattern: one response per basis input
            basis = []
            for k in range(3):
                for j in range(nu):
                    xi = np.zeros((N, nu))
                    xi[cuts[k]:cuts[k + 1], j] = 1.0
                    basis.append(response(xi))
            E = np.einsum("pk,kti->pti", patterns, np.array(basis))
            ok = np.linalg.norm(E[:, -1], axis=1) <= 1e-9
            E = E[ok]
            peak = np.linalg.norm(E, axis=2).max(axis=1)
            E = E / peak[:, None, None] * gamma
            X = nominal.states[None, None] + s[None, :, None, None] * E[:, None]
            vals = value_batch(X.reshape(-1, N + 1, nx))
            best = max(best, float(vals.max()))
    return best
