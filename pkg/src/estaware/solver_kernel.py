"""Small dense convex-optimization primitives.

Projections onto balls, boxes, halfspaces and affine sets; Dykstra's
alternating projections; and an operator-splitting (ADMM) solver for

    minimize    1/2 x'Hx + g'x
    subject to  A_eq x = b_eq
                lb <= A_in x <= ub
                ||A_k x - c_k|| <= r_k      (optional norm-ball blocks)

with Ruiz equilibration, adaptive penalty and an active-set polishing step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve

# ---------------------------------------------------------------- projections


def project_ball(v, radius: float, center=None) -> np.ndarray:
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    v = np.asarray(v, dtype=float)
    c = 0.0 if center is None else np.asarray(center, dtype=float)
    d = v - c
    n = np.linalg.norm(d)
    if n <= radius:
        return v.copy()
    return c + d * (radius / n)


def project_box(v, lb, ub) -> np.ndarray:
    return np.clip(np.asarray(v, dtype=float), lb, ub)


def project_halfspace(v, a, b: float) -> np.ndarray:
    """Projection onto ``{w : a'w >= b}``."""
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    gap = b - a @ v
    if gap <= 0:
        return v.copy()
    return v + a * (gap / (a @ a))


class RankError(np.linalg.LinAlgError):
    pass


class AffineProjector:
    """Projection onto ``{w : A w = b}`` using a QR factorisation of ``A'``."""

    def __init__(self, A, b, rtol: float = 1e-12):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        self.A = A
        self.b = np.asarray(b, dtype=float).ravel()
        Q, R = np.linalg.qr(A.T, mode="reduced")
        d = np.abs(np.diag(R))
        rank = int(np.sum(d > rtol * max(d.max(initial=0.0), 1.0) * max(A.shape)))
        if rank < A.shape[0]:
            raise RankError(f"constraint matrix is rank deficient: rank {rank} < {A.shape[0]} rows")
        self.Q, self.R = Q, R

    def __call__(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        r = self.A @ v - self.b
        lam = np.linalg.solve(self.R.T, r)
        return v - self.Q @ lam


def project_affine(v, A, b) -> np.ndarray:
    return AffineProjector(A, b)(v)


@dataclass
class DykstraResult:
    x: np.ndarray
    converged: bool
    iterations: int


def dykstra(v, projections: Sequence[Callable[[np.ndarray], np.ndarray]],
            iters: int = 1000, tol: float = 1e-10) -> DykstraResult:
    """Projection of ``v`` onto the intersection of closed convex sets.

    Each entry of ``projections`` maps a point to its projection onto one set.
    Stops when both the iterate and the correction terms move less than
    ``tol`` in one sweep.
    """
    x = np.array(v, dtype=float)
    incs = [np.zeros_like(x) for _ in projections]
    for k in range(1, iters + 1):
        x_prev = x
        change = 0.0
        for i, P in enumerate(projections):
            y = P(x + incs[i])
            new_inc = x + incs[i] - y
            change += float(np.sum((new_inc - incs[i]) ** 2))
            incs[i] = new_inc
            x = y
        if np.linalg.norm(x - x_prev) < tol and np.sqrt(change) < tol:
            return DykstraResult(x, True, k)
    return DykstraResult(x, False, iters)


# ---------------------------------------------------------------- QP


@dataclass(frozen=True)
class BallConstraint:
    """``||A x - center|| <= radius``."""

    A: np.ndarray
    center: np.ndarray
    radius: float


@dataclass
class Qp:
    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    balls: Sequence[BallConstraint] = ()

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.g = np.asarray(self.g, dtype=float).ravel()
        n = self.g.size
        if self.H.shape != (n, n):
            raise ValueError(f"H has shape {self.H.shape}, expected {(n, n)}")
        if np.abs(self.H - self.H.T).max(initial=0.0) > 1e-10 * max(1.0, np.abs(self.H).max()):
            raise ValueError("H must be symmetric")
        self.H = 0.5 * (self.H + self.H.T)
        if n and np.linalg.eigvalsh(self.H).min() < -1e-10 * max(1.0, np.abs(self.H).max()):
            raise ValueError("H must be positive semidefinite")
        if self.A_eq is not None:
            self.A_eq = np.atleast_2d(np.asarray(self.A_eq, dtype=float)).reshape(-1, n)
            self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        if self.A_in is not None:
            self.A_in = np.atleast_2d(np.asarray(self.A_in, dtype=float)).reshape(-1, n)
            m = self.A_in.shape[0]
            self.lb = np.full(m, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).ravel()
            self.ub = np.full(m, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).ravel()
            if np.any(self.lb > self.ub):
                raise ValueError("lb must not exceed ub")

    @property
    def n(self) -> int:
        return self.g.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.g @ x)

    def stacked(self):
        """Rows ``A`` with box bounds ``(l, u)`` followed by ball blocks."""
        rows, lo, hi = [], [], []
        if self.A_eq is not None and len(self.A_eq):
            rows.append(self.A_eq)
            lo.append(self.b_eq)
            hi.append(self.b_eq)
        if self.A_in is not None and len(self.A_in):
            rows.append(self.A_in)
            lo.append(self.lb)
            hi.append(self.ub)
        m_box = sum(len(r) for r in rows)
        blocks = []
        start = m_box
        for bc in self.balls:
            Ab = np.atleast_2d(np.asarray(bc.A, dtype=float))
            rows.append(Ab)
            blocks.append((start, start + len(Ab), np.asarray(bc.center, dtype=float), float(bc.radius)))
            start += len(Ab)
        A = np.vstack(rows) if rows else np.zeros((0, self.n))
        l = np.concatenate(lo) if lo else np.zeros(0)
        u = np.concatenate(hi) if hi else np.zeros(0)
        return A, l, u, m_box, blocks


@dataclass
class QpOptions:
    tol: float = 1e-7
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    eps_inf: float = 1e-7
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    max_iter: int = 50000
    check_every: int = 10
    adapt_every: int = 50
    scaling_iters: int = 15
    polish: bool = True
    polish_every: int = 200


@dataclass
class QpResult:
    x: np.ndarray
    y: np.ndarray
    status: str  # "solved" | "infeasible" | "max_iter"
    iterations: int
    residuals: dict = field(default_factory=dict)
    objective: float = np.nan
    polished: bool = False

    @property
    def solved(self) -> bool:
        return self.status == "solved"


class _Sets:
    """Box rows ``[0, m_box)`` followed by ball blocks, all in one vector."""

    def __init__(self, l, u, m_box, blocks):
        self.l, self.u, self.m_box, self.blocks = l, u, m_box, blocks

    def project(self, v):
        out = v.copy()
        mb = self.m_box
        out[:mb] = np.clip(v[:mb], self.l, self.u)
        for s, e, c, r in self.blocks:
            out[s:e] = project_ball(v[s:e], r, c)
        return out

    def support(self, d):
        """Support function ``sup_{z in set} d'z`` (may be +inf)."""
        mb = self.m_box
        dp, dm = np.maximum(d[:mb], 0), np.minimum(d[:mb], 0)
        with np.errstate(invalid="ignore"):
            up = np.where(dp > 0, self.u * dp, 0.0)
            lo = np.where(dm < 0, self.l * dm, 0.0)
        val = float(np.sum(up) + np.sum(lo))
        for s, e, c, r in self.blocks:
            val += float(c @ d[s:e] + r * np.linalg.norm(d[s:e]))
        return val

    def scaled(self, E):
        mb = self.m_box
        blocks = [(s, e, E[s] * c, E[s] * r) for s, e, c, r in self.blocks]
        return _Sets(self.l * E[:mb], self.u * E[:mb], mb, blocks)

    def dual_residuals(self, a, y):
        """(dual feasibility, complementarity) of multiplier ``y`` at row values ``a``."""
        mb = self.m_box
        yb, ab = y[:mb], a[:mb]
        yp, ym = np.maximum(yb, 0), np.maximum(-yb, 0)
        dfeas = np.concatenate([
            np.where(np.isinf(self.u), yp, 0.0), np.where(np.isinf(self.l), ym, 0.0), [0.0]
        ]).max()
        with np.errstate(invalid="ignore"):
            cu = np.where(np.isfinite(self.u), yp * np.abs(self.u - ab), 0.0)
            cl = np.where(np.isfinite(self.l), ym * np.abs(ab - self.l), 0.0)
        comp = np.concatenate([cu, cl, [0.0]]).max()
        for s, e, c, r in self.blocks:
            d = a[s:e] - c
            nd = np.linalg.norm(d)
            yk = y[s:e]
            if nd > 0:
                nrm = d / nd
                along = max(0.0, yk @ nrm)
                dfeas = max(dfeas, float(np.linalg.norm(yk - along * nrm)))
            else:
                dfeas = max(dfeas, float(np.linalg.norm(yk)))
            comp = max(comp, float(np.linalg.norm(yk) * abs(r - nd)))
        return float(dfeas), float(comp)


def _ruiz(H, A, m_box, blocks, iters):
    n, m = H.shape[0], A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    Hs, As = H.copy(), A.copy()
    for _ in range(iters):
        col = np.maximum(np.abs(Hs).max(axis=0, initial=0.0), np.abs(As).max(axis=0, initial=0.0))
        dd = 1.0 / np.sqrt(np.where(col > 1e-12, col, 1.0))
        row = np.abs(As).max(axis=1, initial=0.0) if m else np.zeros(0)
        ee = 1.0 / np.sqrt(np.where(row > 1e-12, row, 1.0))
        for s, e, _, _ in blocks:
            ee[s:e] = ee[s:e].min()
        dd = np.clip(dd, 1e-4, 1e4)
        ee = np.clip(ee, 1e-4, 1e4)
        Hs = dd[:, None] * Hs * dd[None, :]
        As = ee[:, None] * As * dd[None, :]
        D *= dd
        E *= ee
    return D, E


def _residuals(qp: Qp, A, sets: _Sets, x, y):
    Ax = A @ x
    Hx = qp.H @ x
    ATy = A.T @ y
    sscale = max(1.0, np.abs(Hx).max(initial=0.0), np.abs(qp.g).max(initial=0.0), np.abs(ATy).max(initial=0.0))
    stat = np.abs(Hx + qp.g + ATy).max(initial=0.0) / sscale
    pscale = max(1.0, np.abs(Ax).max(initial=0.0))
    prim = np.abs(Ax - sets.project(Ax)).max(initial=0.0) / pscale
    dfeas, comp = sets.dual_residuals(Ax, y)
    dscale = max(1.0, np.abs(y).max(initial=0.0))
    return {
        "stationarity": float(stat),
        "primal": float(prim),
        "dual": float(dfeas / dscale),
        "complementarity": float(comp / (dscale * pscale)),
    }


def solve_qp(qp: Qp, opts: QpOptions | None = None, x0=None, y0=None) -> QpResult:
    opts = opts or QpOptions()
    A, l, u, m_box, blocks = qp.stacked()
    n, m = qp.n, A.shape[0]
    sets = _Sets(l, u, m_box, blocks)

    D, E = _ruiz(qp.H, A, m_box, blocks, opts.scaling_iters)
    Hs = D[:, None] * qp.H * D[None, :]
    gs = D * qp.g
    cscale = max(np.abs(Hs).max(axis=0, initial=0.0).mean() if n else 1.0, np.abs(gs).max(initial=0.0))
    cscale = 1.0 / np.clip(cscale if cscale > 1e-12 else 1.0, 1e-4, 1e4)
    Hs *= cscale
    gs *= cscale
    As = E[:, None] * A * D[None, :]
    ssets = sets.scaled(E)

    eq_rows = np.zeros(m, dtype=bool)
    eq_rows[:m_box] = np.isclose(l, u, rtol=0, atol=1e-12 * np.maximum(1.0, np.abs(l)))
    free_rows = np.zeros(m, dtype=bool)
    free_rows[:m_box] = np.isinf(l) & np.isinf(u)

    def rho_vec(rho):
        R = np.full(m, rho)
        R[eq_rows] = 1e3 * rho
        R[free_rows] = 1e-6
        return R

    rho = opts.rho
    R = rho_vec(rho)

    def factor(R):
        M = Hs + opts.sigma * np.eye(n) + As.T @ (R[:, None] * As)
        return cho_factor(M)

    F = factor(R)
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float) / D
    z = ssets.project(As @ x)
    y = np.zeros(m) if y0 is None else np.asarray(y0, dtype=float) / E * cscale
    status = "max_iter"
    best = None
    it = 0
    eps_abs, eps_rel = opts.eps_abs, opts.eps_rel

    def unscale(xs, ys):
        return D * xs, E * ys / cscale

    def attempt_finish(xs, zs, ys):
        xu, yu = unscale(xs, ys)
        res = _residuals(qp, A, sets, xu, yu)
        cand = (max(res.values()), xu, yu, res, False)
        if opts.polish and m:
            pol = _polish(Hs, gs, As, ssets, eq_rows, xs, zs, ys)
            if pol is not None:
                xp, yp = unscale(*pol)
                rp = _residuals(qp, A, sets, xp, yp)
                if max(rp.values()) < cand[0]:
                    cand = (max(rp.values()), xp, yp, rp, True)
        return cand

    while it < opts.max_iter:
        it += 1
        rhs = opts.sigma * x - gs + As.T @ (R * z - y)
        xt = cho_solve(F, rhs)
        zt = As @ xt
        x_new = opts.alpha * xt + (1 - opts.alpha) * x
        zh = opts.alpha * zt + (1 - opts.alpha) * z
        z_new = ssets.project(zh + y / R)
        y_new = y + R * (zh - z_new)
        dy = y_new - y
        x, z, y = x_new, z_new, y_new

        if it % opts.check_every:
            continue
        Ax = As @ x
        r_p = np.abs((Ax - z) / E).max(initial=0.0)
        res_d = Hs @ x + gs + As.T @ y
        r_d = np.abs(res_d / D).max(initial=0.0) / cscale
        p_scale = max(np.abs(Ax / E).max(initial=0.0), np.abs(z / E).max(initial=0.0))
        d_scale = max(np.abs(Hs @ x / D).max(initial=0.0), np.abs(As.T @ y / D).max(initial=0.0),
                      np.abs(gs / D).max(initial=0.0)) / cscale
        admm_ok = r_p <= eps_abs + eps_rel * p_scale and r_d <= eps_abs + eps_rel * d_scale
        # the active set is often right long before ADMM is accurate, so
        # polishing is also tried periodically
        if opts.polish and m and not admm_ok and it % opts.polish_every == 0:
            cand = attempt_finish(x, z, y)
            if best is None or cand[0] < best[0]:
                best = cand
            if cand[0] <= opts.tol:
                status = "solved"
                break
        if admm_ok:
            cand = attempt_finish(x, z, y)
            if best is None or cand[0] < best[0]:
                best = cand
            if cand[0] <= opts.tol:
                status = "solved"
                break
            eps_abs, eps_rel = eps_abs * 0.1, eps_rel * 0.1
            if eps_abs < 1e-14:
                break
        # primal infeasibility certificate
        ndy = np.abs(dy).max(initial=0.0)
        if m and ndy > 1e-14:
            dyu = E * dy
            if (np.abs(A.T @ dyu).max(initial=0.0) / D.min() <= opts.eps_inf * np.abs(dyu).max()
                    and sets.support(dyu) < -opts.eps_inf * np.abs(dyu).max()):
                xu, yu = unscale(x, y)
                return QpResult(xu, yu, "infeasible", it, _residuals(qp, A, sets, xu, yu), qp.objective(xu))
        if it % opts.adapt_every == 0 and m:
            num = r_p / max(p_scale, 1e-12)
            den = r_d / max(d_scale, 1e-12)
            if num > 0 and den > 0:
                new_rho = float(np.clip(rho * np.sqrt(num / den), 1e-6, 1e6))
                if new_rho > 5 * rho or new_rho < rho / 5:
                    rho = new_rho
                    R = rho_vec(rho)
                    F = factor(R)

    if best is None:
        best = attempt_finish(x, z, y)
    _, xu, yu, res, polished = best
    if status != "solved" and best[0] <= opts.tol:
        status = "solved"
    return QpResult(xu, yu, status, it, res, qp.objective(xu), polished)


def _polish(Hs, gs, As, sets: _Sets, eq_rows, x, z, y):
    """Solve the equality-constrained QP on the guessed active set."""
    mb = sets.m_box
    lo = np.zeros(len(z), dtype=bool)
    hi = np.zeros(len(z), dtype=bool)
    lo[:mb] = (z[:mb] - sets.l < -y[:mb]) | eq_rows[:mb]
    hi[:mb] = (sets.u - z[:mb] < y[:mb]) & ~eq_rows[:mb]
    rows, rhs, idx = [], [], []
    for i in np.flatnonzero(lo | hi):
        rows.append(As[i])
        rhs.append(sets.l[i] if lo[i] else sets.u[i])
        idx.append(("row", i))
    for k, (s, e, c, r) in enumerate(sets.blocks):
        d = z[s:e] - c
        nd = np.linalg.norm(d)
        if nd >= r * (1 - 1e-6) and np.linalg.norm(y[s:e]) > 1e-12 and nd > 0:
            nrm = d / nd
            rows.append(nrm @ As[s:e])
            rhs.append(nrm @ c + r)
            idx.append(("ball", k, nrm))
    n = len(x)
    k = len(rows)
    delta = 1e-10
    if k:
        Aa = np.array(rows)
        K = np.block([[Hs + delta * np.eye(n), Aa.T], [Aa, -delta * np.eye(k)]])
        b = np.concatenate([-gs, np.array(rhs)])
    else:
        K = Hs + delta * np.eye(n)
        b = -gs
    try:
        lu = lu_factor(K)
    except Exception:
        return None
    Kt = K.copy()
    Kt[:n, :n] -= delta * np.eye(n)
    if k:
        Kt[n:, n:] += delta * np.eye(k)
    sol = lu_solve(lu, b)
    for _ in range(5):
        sol = sol + lu_solve(lu, b - Kt @ sol)
    if not np.all(np.isfinite(sol)):
        return None
    xp = sol[:n]
    lam = sol[n:]
    balls = [(j, tag[1]) for j, tag in enumerate(idx) if tag[0] == "ball"]
    if balls:
        xp, lam = _refine_balls(Hs, gs, As, sets, idx, balls, xp, lam, delta)
    yp = np.zeros(len(z))
    for j, tag in enumerate(idx):
        if tag[0] == "row":
            yp[tag[1]] = lam[j]
        else:
            s, e, c, _ = sets.blocks[tag[1]]
            d = As[s:e] @ xp - c
            yp[s:e] = lam[j] * d / max(np.linalg.norm(d), 1e-300)
    return xp, yp


def _refine_balls(Hs, gs, As, sets: _Sets, idx, balls, x, lam, delta, iters: int = 8):
    """Newton steps on the KKT system with active balls held as ``||A x - c|| = r``.

    The tangent-plane solve leaves the point slightly outside curved
    constraints; a few SQP steps with the ball curvature remove that.
    ``lam`` holds plane multipliers (per unit normal) and is returned in the
    same convention.
    """
    n, k = len(x), len(idx)

    best = (np.inf, x, lam)
    for it in range(iters + 1):
        W = Hs.copy()
        J = np.zeros((k, n))
        r_st = Hs @ x + gs
        r_c = np.zeros(k)
        for j, tag in enumerate(idx):
            if tag[0] == "row":
                i = tag[1]
                J[j] = As[i]
                r_st += lam[j] * As[i]
                r_c[j] = 0.0  # linear rows stay exactly satisfied after the first solve
            else:
                s, e, c, r = sets.blocks[tag[1]]
                Ab = As[s:e]
                d = Ab @ x - c
                nd = np.linalg.norm(d)
                if nd <= 0:
                    return best[1], best[2]
                nrm = d / nd
                J[j] = nrm @ Ab
                r_st += lam[j] * J[j]
                r_c[j] = nd - r
                # Hessian of ||A x - c|| is A'(I - nn')A / ||d||
                P = (np.eye(len(d)) - np.outer(nrm, nrm)) / nd
                W += lam[j] * (Ab.T @ P @ Ab)
        err = max(np.abs(r_st).max(initial=0.0), np.abs(r_c).max(initial=0.0))
        if err < best[0]:
            best = (err, x.copy(), lam.copy())
        if it == iters or err < 1e-15 * max(1.0, np.abs(gs).max(initial=0.0)):
            break
        K = np.block([[W + delta * np.eye(n), J.T], [J, -delta * np.eye(k)]])
        try:
            step = np.linalg.solve(K, -np.concatenate([r_st, r_c]))
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        x = x + step[:n]
        lam = lam + step[n:]
    return best[1], best[2]
