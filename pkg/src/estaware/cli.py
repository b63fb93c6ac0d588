"""Command-line entry point.

Exit codes: 0 success, 2 configuration error (nothing written), 3 solver
did not converge (outputs are still written for inspection).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ScenarioConfig, load_config, matrix, vector
from .deviation import DeviationProblem, sweep_gamma
from .dynamics import (Trajectory, finite_horizon_lqr, lqr_rollout, read_trajectory_csv,
                       write_trajectory_csv)
from .estimation import default_offset, design_observer, simulate_closed_loop
from .observability import LowerBound
from .scvx import RendezvousProblem, solve_scvx
from .validation import (Dataset, SyntheticErrorSampler, ValidationGrid, build_envelope)

log = logging.getLogger("estaware")

EXIT_OK, EXIT_CONFIG, EXIT_NOCONV = 0, 2, 3


class Context:
    """Resolved scenario: config after overrides plus built objects."""

    def __init__(self, cfg: ScenarioConfig, out: Path):
        self.cfg, self.out = cfg, out
        self.hash = cfg.digest()
        try:
            self.sys = cfg.system.build()
            self.model = cfg.uncertainty.build(self.sys)
            pc = cfg.planner
            nx, nu = self.sys.nx, self.sys.nu
            self.Q = matrix(pc.Q, nx, "planner.Q")
            self.R = matrix(pc.R, nu, "planner.R")
            self.Qf = self.Q if pc.Qf is None else matrix(pc.Qf, nx, "planner.Qf")
            self.x0 = vector(pc.x0, nx, "planner.x0")
            self.x_goal = np.zeros(nx) if pc.x_goal is None else vector(pc.x_goal, nx, "planner.x_goal")
            if cfg.evaluation.x0_offset is not None:
                self.offset = vector(cfg.evaluation.x0_offset, nx, "evaluation.x0_offset")
            else:
                self.offset = default_offset(nx, pc.eps)
        except ConfigError:
            raise
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise ConfigError(str(exc)) from exc

    def header(self, command: str) -> list[str]:
        return [f"config_hash={self.hash} seed={self.cfg.evaluation.seed} command={command}"]

    def lqr(self):
        return finite_horizon_lqr(self.sys, self.Q, self.R, self.Qf, self.cfg.planner.horizon)


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _write_rows(path: Path, header: list[str], cols, rows) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in r])


# ---------------------------------------------------------------- commands


def cmd_plan_deviation(ctx: Context) -> int:
    pc = ctx.cfg.planner
    if pc.kind != "deviation":
        raise ConfigError("plan-deviation needs planner.kind = 'deviation'")
    hdr = ctx.header("plan-deviation")
    nominal = lqr_rollout(ctx.sys, ctx.lqr(), ctx.x0, ctx.x_goal)
    base = DeviationProblem(ctx.sys, ctx.model, nominal, pc.gamma, pc.eps)
    gammas = sorted(set([float(pc.gamma)] + [float(g) for g in pc.gamma_sweep]))
    results = dict(zip(gammas, sweep_gamma(base, gammas, pc.deviation)))
    res = results[float(pc.gamma)]
    write_trajectory_csv(ctx.out / "nominal.csv", nominal, hdr)
    write_trajectory_csv(ctx.out / "aware.csv", res.trajectory, hdr)
    res.report.write_csv(ctx.out / "obs_report.csv", hdr)
    res.nominal_report.write_csv(ctx.out / "nominal_obs_report.csv", hdr)
    _write_rows(ctx.out / "sweep.csv", hdr, ["gamma", "objective", "status", "iterations"],
                [[g, r.report.value, r.status, str(r.iterations)] for g, r in results.items()])
    ok = all(r.status in ("converged", "trivial") for r in results.values())
    print(f"nominal lower bound {res.nominal_report.value:.6g}; "
          f"gamma={pc.gamma:g} lower bound {res.report.value:.6g} ({res.status})")
    return EXIT_OK if ok else EXIT_NOCONV


def _rendezvous(ctx: Context, lam: float) -> RendezvousProblem:
    pc = ctx.cfg.planner
    return RendezvousProblem(ctx.sys, ctx.model, ctx.x0, ctx.Q, ctx.R, pc.d, lam, pc.eps,
                             pc.horizon, pc.u_max, x_goal=ctx.x_goal, Qf=ctx.Qf)


def cmd_plan_scvx(ctx: Context) -> int:
    pc = ctx.cfg.planner
    if pc.kind != "scvx":
        raise ConfigError("plan-scvx needs planner.kind = 'scvx'")
    hdr = ctx.header("plan-scvx")
    try:
        nom_p, aware_p = _rendezvous(ctx, 0.0), _rendezvous(ctx, pc.lambda_obs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    nom = solve_scvx(nom_p, pc.scvx)
    aware = nom if pc.lambda_obs == 0 else solve_scvx(aware_p, pc.scvx)
    write_trajectory_csv(ctx.out / "nominal.csv", nom.trajectory, hdr)
    write_trajectory_csv(ctx.out / "aware.csv", aware.trajectory, hdr)
    aware.report.write_csv(ctx.out / "scvx_report.csv", hdr)
    nom.report.write_csv(ctx.out / "nominal_scvx_report.csv", hdr)
    aware.obs_report.write_csv(ctx.out / "obs_report.csv", hdr)
    nom.obs_report.write_csv(ctx.out / "nominal_obs_report.csv", hdr)
    ok = nom.report.converged and aware.report.converged
    print(f"lambda_obs={pc.lambda_obs:g}: cost {aware.cost:.6g} ({aware.report.status}); "
          f"nominal cost {nom.cost:.6g} ({nom.report.status})")
    return EXIT_OK if ok else EXIT_NOCONV


def _planner_cmd(ctx: Context):
    return cmd_plan_deviation if ctx.cfg.planner.kind == "deviation" else cmd_plan_scvx


def _load_plans(ctx: Context) -> tuple[Trajectory, Trajectory, int]:
    code = EXIT_OK
    if not ((ctx.out / "nominal.csv").exists() and (ctx.out / "aware.csv").exists()):
        code = _planner_cmd(ctx)(ctx)
    return read_trajectory_csv(ctx.out / "nominal.csv"), read_trajectory_csv(ctx.out / "aware.csv"), code


def cmd_simulate(ctx: Context) -> int:
    ev = ctx.cfg.evaluation
    nominal, aware, code = _load_plans(ctx)
    hdr = ctx.header("simulate")
    try:
        obs = design_observer(ctx.sys, ev.observer.mode, ev.observer.poles)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ConfigError(f"observer design failed: {exc}") from exc
    K = ctx.lqr().gains
    rows = []
    for name, ref in (("nominal", nominal), ("aware", aware)):
        st = simulate_closed_loop(ctx.sys, ctx.model, ref, obs, K, ev.runs, ev.seed, ctx.offset, ev.chunk)
        st.write_csv(ctx.out / f"stats_{name}.csv", hdr)
        rows.append([name, st.converged_variance, str(st.runs)])
    _write_rows(ctx.out / "simulate_summary.csv", hdr, ["trajectory", "converged_variance", "runs"], rows)
    ratio = rows[1][1] / rows[0][1] if rows[0][1] > 0 else float("nan")
    print(f"converged variance nominal {rows[0][1]:.6g}, aware {rows[1][1]:.6g}, ratio {ratio:.4f}")
    return code


def cmd_validate_envelope(ctx: Context, dataset_path: str | None = None) -> int:
    vc = ctx.cfg.validation
    hdr = ctx.header("validate-envelope")
    try:
        grid = ValidationGrid(tuple(vc.ranges), tuple(vc.sun_angles), vc.rotations_per_angle, vc.radial_factor)
        sampler = SyntheticErrorSampler(vc.c0, vc.c1, vc.c2, vc.noise)
    except ValueError as exc:
        raise ConfigError(f"validation: {exc}") from exc
    data = None
    if dataset_path is not None:
        try:
            data = Dataset.read_csv(dataset_path)
        except (OSError, ValueError, IndexError) as exc:
            raise ConfigError(f"cannot read dataset {dataset_path}: {exc}") from exc
    res = build_envelope(grid, sampler, ctx.cfg.evaluation.seed, dataset=data)
    res.dataset.write_csv(ctx.out / "dataset.csv", hdr)
    _write_rows(ctx.out / "maxima.csv", hdr, ["range_m", "sun_angle_deg", "max_error_norm"],
                [[r, a, res.maxima[i, j]] for i, r in enumerate(grid.ranges)
                 for j, a in enumerate(grid.sun_angles)])
    rows = [[f"range_{r:g}", e.alpha, e.beta, e.gamma] for r, e in zip(grid.ranges, res.per_range)]
    rows.append(["combined_angle", res.combined.alpha, res.combined.beta, res.combined.gamma])
    rows.append(["over_range", res.over_range.alpha, res.over_range.beta, res.over_range.gamma])
    if res.illumination is not None:
        rows.append(["illumination_s", res.illumination[0], 0.0, res.illumination[1]])
    _write_rows(ctx.out / "envelope.csv", hdr, ["envelope", "alpha", "beta", "gamma"], rows)
    print(f"{len(res.dataset)} samples; envelope dominates maxima: {res.dominates()}")
    return EXIT_OK


def _read_table(path: Path) -> list[dict]:
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def cmd_report(ctx: Context) -> int:
    out = ctx.out
    code = EXIT_OK
    if not (out / "simulate_summary.csv").exists():
        code = cmd_simulate(ctx)
    nominal, aware = read_trajectory_csv(out / "nominal.csv"), read_trajectory_csv(out / "aware.csv")
    lb = LowerBound(ctx.sys, ctx.model, nominal.horizon, ctx.cfg.planner.eps)
    sim = {r["trajectory"]: r for r in _read_table(out / "simulate_summary.csv")}
    rows = []
    for name, tr in (("nominal", nominal), ("aware", aware)):
        X = tr.states
        dev = np.linalg.norm(X - nominal.states, axis=1).max()
        cost = float(np.einsum("ti,ij,tj->", X[:-1] - ctx.x_goal, ctx.Q, X[:-1] - ctx.x_goal)
                     + np.einsum("ti,ij,tj->", tr.inputs, ctx.R, tr.inputs)
                     + (X[-1] - ctx.x_goal) @ ctx.Qf @ (X[-1] - ctx.x_goal))
        rows.append([name, lb.value(X), float(sim[name]["converged_variance"]), cost, dev,
                     float(np.linalg.norm(X[:, :3] if X.shape[1] == 6 else X[:, :2], axis=1).min())])
    _write_rows(out / "report.csv", ctx.header("report"),
                ["trajectory", "lower_bound", "converged_variance", "tracking_cost", "max_deviation",
                 "min_range"], rows)
    w = max(len(r[0]) for r in rows)
    print(f"{'trajectory':<{w}}  {'lower_bound':>14}  {'conv_var':>12}  {'cost':>12}  {'max_dev':>9}")
    for r in rows:
        print(f"{r[0]:<{w}}  {r[1]:>14.6g}  {r[2]:>12.6g}  {r[3]:>12.6g}  {r[4]:>9.4g}")
    return code


COMMANDS = {
    "plan-deviation": cmd_plan_deviation,
    "plan-scvx": cmd_plan_scvx,
    "simulate": cmd_simulate,
    "validate-envelope": cmd_validate_envelope,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="estaware", description="Estimation-aware trajectory planning")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="scenario JSON file")
        sp.add_argument("--seed", type=int, help="override evaluation.seed")
        sp.add_argument("--out", help="output directory (default: config 'output')")
        sp.add_argument("--runs", type=int, help="override evaluation.runs")
        sp.add_argument("--lambda-obs", type=float, dest="lambda_obs", help="override planner.lambda_obs")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "validate-envelope":
            sp.add_argument("--dataset", help="fit an existing dataset CSV instead of sampling")
    return ap


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    ev, pc = cfg.evaluation, cfg.planner
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        ev = dataclasses.replace(ev, seed=args.seed)
    if args.runs is not None:
        ev = dataclasses.replace(ev, runs=args.runs)
    if args.lambda_obs is not None:
        pc = dataclasses.replace(pc, lambda_obs=args.lambda_obs)
    return dataclasses.replace(cfg, evaluation=ev, planner=pc)


def _prevalidate(ctx: Context, command: str) -> None:
    """Reject problem data the planners would refuse, before anything is written."""
    pc = ctx.cfg.planner
    if command == "plan-deviation" and pc.kind != "deviation":
        raise ConfigError("plan-deviation needs planner.kind = 'deviation'")
    if command == "plan-scvx" and pc.kind != "scvx":
        raise ConfigError("plan-scvx needs planner.kind = 'scvx'")
    if command == "validate-envelope":
        vc = ctx.cfg.validation
        try:
            ValidationGrid(tuple(vc.ranges), tuple(vc.sun_angles), vc.rotations_per_angle, vc.radial_factor)
            SyntheticErrorSampler(vc.c0, vc.c1, vc.c2, vc.noise)
        except ValueError as exc:
            raise ConfigError(f"validation: {exc}") from exc
        return
    try:
        if pc.kind == "deviation":
            nominal = lqr_rollout(ctx.sys, ctx.lqr(), ctx.x0, ctx.x_goal)
            DeviationProblem(ctx.sys, ctx.model, nominal, pc.gamma, pc.eps)
            ctx.model.radii(nominal.states)
        else:
            _rendezvous(ctx, pc.lambda_obs)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        out = Path(args.out if args.out is not None else cfg.output)
        ctx = Context(cfg, out)
        _prevalidate(ctx, args.command)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "validate-envelope":
            return cmd_validate_envelope(ctx, args.dataset)
        return COMMANDS[args.command](ctx)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
