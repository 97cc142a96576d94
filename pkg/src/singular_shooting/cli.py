"""Command-line front end.

Subcommands
-----------
solve     Gauss-Newton from the benchmark solution plus a seeded perturbation
          (or from ``--nu0``); writes a report and a trajectory CSV.
check     Solve, then evaluate the pointwise conditions and the positivity
          estimate.
residual  Evaluate the shooting residual at ``--nu0``.
bench     Run the acceptance suite and print a pass/fail table.

Exit codes: 0 success, 1 check failure, 2 configuration error, 3 solver
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import acceptance, ssc
from .benchmarks import catalog, instantiate
from .exceptions import NotFoundError, ShootingBaseError, SolverError
from .integrator import Grid
from .report import nu_from_report, solve_section, write_report
from .shooting import gauss_newton, shooting_residual

log = logging.getLogger("singular_shooting")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    problem: str
    grid: int = 2000
    qp_grid: int = 100
    tol: float = 1e-10
    max_iter: int = 20
    jacobian: str = "variational"
    perturb: float = 0.0
    seed: int = 0
    nu0: Optional[str] = None
    report: Optional[str] = None
    traj: Optional[str] = None

    def validate(self):
        if self.grid < 2:
            raise ConfigError(f"--grid must be >= 2, got {self.grid}")
        if self.qp_grid < 2:
            raise ConfigError(f"--qp-grid must be >= 2, got {self.qp_grid}")
        if not (self.tol > 0 and np.isfinite(self.tol)):
            raise ConfigError(f"--tol must be > 0, got {self.tol}")
        if self.max_iter < 0:
            raise ConfigError(f"--max-iter must be >= 0, got {self.max_iter}")
        if not (self.perturb >= 0 and np.isfinite(self.perturb)):
            raise ConfigError(f"--perturb must be >= 0, got {self.perturb}")
        try:
            instantiate(self.problem)
        except NotFoundError as exc:
            raise ConfigError(str(exc)) from None
        return self


def _start(cfg: RunConfig, bench):
    P = bench.problem
    if cfg.nu0 is not None:
        try:
            if cfg.nu0.endswith(".json"):
                nu = nu_from_report(cfg.nu0)
            else:
                nu = np.array([float(s) for s in cfg.nu0.split(",")])
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read --nu0: {exc}") from None
        if nu.size != P.dims.n_unknowns:
            raise ConfigError(f"--nu0 has {nu.size} entries, {bench.name} needs {P.dims.n_unknowns}")
        return nu
    return acceptance.perturbed_start(bench.nu_hat.to_array(P), cfg.perturb, cfg.seed)


def _solve(cfg: RunConfig):
    """Returns (bench, SolveReport or None, report dict, error message)."""
    bench = instantiate(cfg.problem)
    P = bench.problem
    nu0 = _start(cfg, bench)
    t0 = time.perf_counter()
    err = None
    try:
        rep = gauss_newton(P, nu0, Grid(cfg.grid, P.T), tol=cfg.tol, max_iter=cfg.max_iter, mode=cfg.jacobian)
    except SolverError as exc:
        rep, err = exc.report, str(exc)
    except ShootingBaseError as exc:
        rep, err = None, str(exc)
    timing = dict(solve_s=time.perf_counter() - t0)
    if rep is None:
        d = dict(problem=cfg.problem, N=cfg.grid, mode=cfg.jacobian, converged=False, message=err,
                 timing=timing)
    else:
        d = solve_section(cfg.problem, cfg.grid, cfg.jacobian, rep, P, timing)
        if err:
            d["message"] = err
    return bench, rep, d, err


def _write(cfg, d, rep):
    if cfg.report:
        write_report(d, cfg.report)
    if cfg.traj and rep is not None and rep.final_trajectory is not None:
        rep.final_trajectory.to_csv(cfg.traj)


def cmd_solve(cfg: RunConfig) -> int:
    bench, rep, d, err = _solve(cfg)
    _write(cfg, d, rep)
    if err is not None or rep is None:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"{cfg.problem}: converged={rep.converged} iterations={rep.n_iter} "
          f"|S|={rep.residual_norm:.3e} cost={d['cost']:.17g} order={rep.observed_order:.3f}")
    return EXIT_OK if rep.converged else EXIT_SOLVER


def cmd_check(cfg: RunConfig) -> int:
    bench, rep, d, err = _solve(cfg)
    if err is not None or rep is None or not rep.converged:
        _write(cfg, d, rep)
        print(f"solver failure: {err or 'no convergence'}", file=sys.stderr)
        return EXIT_SOLVER
    P = bench.problem
    tr = rep.final_trajectory
    t0 = time.perf_counter()
    try:
        pw = ssc.pointwise_conditions(P, tr)
        pos = ssc.uniform_positivity(P, tr, cfg.qp_grid)
    except ShootingBaseError as exc:
        d["ssc"] = dict(error=str(exc))
        _write(cfg, d, rep)
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    d["ssc"] = dict(pointwise=pw.to_dict(), positivity=pos.to_dict(), passed=pw.passed and pos.passed)
    d["timing"]["check_s"] = time.perf_counter() - t0
    _write(cfg, d, rep)
    for k, v in pw.passes.items():
        print(f"  {k:9s} {'pass' if v else 'FAIL'}")
    print(f"  margins   " + ", ".join(f"{k}={v:.6g}" for k, v in pw.margins.items() if v is not None))
    print(f"  rho_hat   {pos.rho_hat:.6g} (N={pos.N_qp}), {pos.rho_hat_refined:.6g} (N={2 * pos.N_qp}), "
          f"delta {pos.delta:.3g}  [{pos.label}]")
    return EXIT_OK if d["ssc"]["passed"] else EXIT_CHECK


def cmd_residual(cfg: RunConfig) -> int:
    if cfg.nu0 is None:
        raise ConfigError("residual needs --nu0")
    bench = instantiate(cfg.problem)
    nu = _start(cfg, bench)
    try:
        r = shooting_residual(bench.problem, nu, Grid(cfg.grid, bench.problem.T))
    except ShootingBaseError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    d = dict(problem=cfg.problem, N=cfg.grid, nu=nu, residual=r, residual_norm=float(np.max(np.abs(r))))
    if cfg.report:
        write_report(d, cfg.report)
    print("%.17g" % d["residual_norm"])
    return EXIT_OK


def cmd_bench(report: Optional[str] = None, only=None) -> int:
    rows = acceptance.run_all(only or acceptance.CRITERIA, echo=lambda r: print(r.line(), flush=True))
    width = max(len(r.title) for r in rows)
    print()
    print(f"{'#':>2}  {'criterion':{width}}  result")
    for r in rows:
        print(f"{r.number:>2}  {r.title:{width}}  {'PASS' if r.passed else 'FAIL'}")
    n_pass = sum(r.passed for r in rows)
    print(f"{n_pass}/{len(rows)} passed")
    if report:
        # wall-clock figures are left out so that reruns give identical files
        write_report(dict(criteria=[r.to_dict(with_timing=False) for r in rows],
                          passed=n_pass == len(rows)), report)
    return EXIT_OK if n_pass == len(rows) else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="singular-shooting", description="Shooting for singular extremals.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, qp=False):
        p.add_argument("--problem", required=True, help=f"one of {', '.join(catalog())}")
        p.add_argument("--grid", type=int, default=2000)
        if qp:
            p.add_argument("--qp-grid", type=int, default=100)
        p.add_argument("--tol", type=float, default=1e-10)
        p.add_argument("--max-iter", type=int, default=20)
        p.add_argument("--jacobian", choices=("fd", "variational"), default="variational")
        p.add_argument("--perturb", type=float, default=0.0)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--nu0", help="comma-separated values or a report .json with nu_hat")
        p.add_argument("--report", metavar="PATH")
        p.add_argument("--traj", metavar="PATH")

    common(sub.add_parser("solve", help="solve the shooting equation"))
    common(sub.add_parser("check", help="solve and check second-order conditions"), qp=True)
    common(sub.add_parser("residual", help="evaluate the shooting residual at --nu0"))
    b = sub.add_parser("bench", help="run the acceptance suite")
    b.add_argument("--report", metavar="PATH")
    b.add_argument("--only", type=int, nargs="+", choices=acceptance.CRITERIA)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if args.command == "bench":
        return cmd_bench(args.report, args.only)
    try:
        cfg = RunConfig(
            problem=args.problem, grid=args.grid, qp_grid=getattr(args, "qp_grid", 100), tol=args.tol,
            max_iter=args.max_iter, jacobian=args.jacobian, perturb=args.perturb, seed=args.seed,
            nu0=args.nu0, report=args.report, traj=args.traj,
        ).validate()
        return {"solve": cmd_solve, "check": cmd_check, "residual": cmd_residual}[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
