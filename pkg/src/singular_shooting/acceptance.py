"""Acceptance checks, shared by ``singular-shooting bench`` and the test suite.

Every check returns a :class:`CriterionResult` carrying a pass flag, a short
one-line summary and the measured values.  Wall-clock figures are kept in a
separate field so that the remaining content is deterministic.

Where a runtime bound applies to repeated solves, the JIT compilation of the
kernels is done by an explicit warm-up solve whose duration is reported
alongside (``warmup_s``) but not counted against the bound.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import goh, ssc
from .benchmarks import catalog, instantiate, make_goh_probe
from .exceptions import ShootingBaseError
from .integrator import Grid, integrate_extremal
from .report import cost_of
from .shooting import gauss_newton, shooting_jacobian

__all__ = ["CriterionResult", "Suite", "run_all", "CRITERIA"]

HALF_TANH1 = 0.5 * float(np.tanh(1.0))


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    summary: str
    values: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] C{self.number} {self.title}: {self.summary}"

    def to_dict(self, with_timing=True) -> dict:
        """Without timing, the summary line (which quotes run times) is left out too."""
        d = dict(number=self.number, title=self.title, passed=self.passed, values=self.values)
        if with_timing:
            d["summary"] = self.summary
            d["timing"] = self.timing
        return d


def perturbed_start(nu_hat, scale, seed):
    """``nu_hat + scale * U(-1, 1)`` with a seeded generator."""
    rng = np.random.default_rng(seed)
    return nu_hat + scale * rng.uniform(-1.0, 1.0, nu_hat.size)


class Suite:
    """Runs the checks; solved extremals are cached between checks."""

    def __init__(self, N: int = 2000):
        self.N = N
        self._solved = {}

    # -- shared pieces -----------------------------------------------------

    def solved(self, name):
        """Gauss-Newton solution from ``nu_hat`` at the default grid (cached)."""
        if name not in self._solved:
            b = instantiate(name)
            t0 = time.perf_counter()
            rep = gauss_newton(b.problem, b.nu_hat.to_array(b.problem), Grid(self.N, b.problem.T), tol=1e-10)
            self._solved[name] = (rep, time.perf_counter() - t0)
        return self._solved[name]

    # -- criteria ----------------------------------------------------------

    def c1(self):
        """Closed-form costs from perturbed starts."""
        targets = {"NLQ1": HALF_TANH1, "PA1": HALF_TANH1, "SLQ1": 0.0}
        vals, timing, ok = {}, {}, True
        for name, ref in targets.items():
            rep0, warm = self.solved(name)
            b = instantiate(name)
            P = b.problem
            nu0 = perturbed_start(b.nu_hat.to_array(P), 0.1, 0)
            t0 = time.perf_counter()
            try:
                rep = gauss_newton(P, nu0, Grid(self.N, P.T), tol=1e-10)
                cost = cost_of(P, rep.final_trajectory)
                conv = rep.converged
            except ShootingBaseError:
                cost, conv = float("nan"), False
            dt = time.perf_counter() - t0
            err = abs(cost - ref)
            good = conv and err <= 1e-8 and dt < 5.0
            ok &= good
            vals[name] = dict(cost=cost, reference=ref, abs_error=err, converged=conv)
            timing[name] = dict(solve_s=dt, warmup_s=warm)
        summ = ", ".join(f"{k} |cost-ref|={v['abs_error']:.2e}" for k, v in vals.items())
        summ += "; solve times " + ", ".join(f"{k} {t['solve_s']:.2f}s" for k, t in timing.items())
        return CriterionResult(1, "closed-form cost", ok, summ, vals, timing)

    def c2(self, n_starts=20):
        """Quadratic convergence from seeded perturbed starts."""
        vals, timing = {}, {}
        total, ok = 0.0, True
        for name in catalog():
            _, warm = self.solved(name)
            b = instantiate(name)
            P = b.problem
            nu_hat = b.nu_hat.to_array(P)
            its, orders, res, conv = [], [], [], []
            t0 = time.perf_counter()
            for seed in range(n_starts):
                try:
                    rep = gauss_newton(P, perturbed_start(nu_hat, 0.1, seed), Grid(self.N, P.T), tol=1e-10,
                                       max_iter=20, keep_trajectory=False)
                    its.append(rep.n_iter)
                    orders.append(rep.observed_order)
                    res.append(rep.residual_norm)
                    conv.append(rep.converged)
                except ShootingBaseError:
                    its.append(-1)
                    orders.append(float("nan"))
                    res.append(float("nan"))
                    conv.append(False)
            dt = time.perf_counter() - t0
            total += dt
            good_runs = sum(1 for c, r, i in zip(conv, res, its) if c and r <= 1e-10 and 0 <= i <= 10)
            n_order = int(np.sum(np.asarray(orders) >= 1.8))
            ok &= good_runs == n_starts and n_order >= 18
            vals[name] = dict(iterations=its, observed_order=orders, converged=good_runs, order_ge_1p8=n_order)
            timing[name] = dict(solves_s=dt, warmup_s=warm)
        ok &= total < 60.0
        timing["total_s"] = total
        summ = ", ".join(f"{k} conv {v['converged']}/{n_starts} order>=1.8 {v['order_ge_1p8']}/{n_starts}"
                         for k, v in vals.items())
        return CriterionResult(2, "quadratic convergence", ok, summ + f"; {total:.1f}s", vals, timing)

    def c3(self, n_dirs=100, N=4000, include_probe=True):
        """Goh identity on random consistent directions."""
        vals, ok = {}, True
        t0 = time.perf_counter()
        cases = [(name, instantiate(name)) for name in catalog()]
        if include_probe:
            cases.append(("goh-probe", make_goh_probe()))
        for i, (name, b) in enumerate(cases):
            P = b.problem
            traj = integrate_extremal(P, b.nu_hat.to_array(P), Grid(N, P.T))
            G = goh.goh_matrices(P, traj)
            worst = 0.0
            dirs = goh.random_directions(P, traj, n_dirs, seed=100 + i)
            by_ode = goh.transform_by_ode_batch(dirs, traj, G)
            for d, td_ode in zip(dirs, by_ode):
                om = goh.omega(P, None, traj, d, G)
                for td in (goh.goh_transform(d, traj, G), td_ode):
                    op = goh.omega_P(P, None, traj, td, d.vbar, G)
                    worst = max(worst, abs(om - op) / max(1.0, abs(om)))
            vals[name] = dict(max_rel_dev=worst)
            ok &= worst <= 1e-6
        dt = time.perf_counter() - t0
        ok &= dt < 30.0
        summ = ", ".join(f"{k} {v['max_rel_dev']:.1e}" for k, v in vals.items()) + f"; {dt:.1f}s"
        return CriterionResult(3, "Goh identity", ok, summ, vals, dict(total_s=dt))

    def c4(self):
        """Order of the second-order expansion remainder on NLQ1."""
        b = instantiate("NLQ1")
        P = b.problem
        out = goh.expansion_remainders(P, b.nu_hat.to_array(P), Grid(self.N, P.T), [1e-1, 1e-2, 1e-3], seed=0)
        ok = bool(np.isfinite(out["slope"]) and out["slope"] >= 2.7)
        summ = f"slope {out['slope']:.3f} (remainders {', '.join(f'{r:.2e}' for r in out['remainder'])})"
        return CriterionResult(4, "expansion order", ok, summ,
                               dict(s=out["s"], remainder=out["remainder"], slope=out["slope"], omega=out["omega"]))

    def c5(self):
        """Pointwise Legendre-type conditions on SLQ1 and PA1."""
        vals, ok = {}, True
        for name in ("SLQ1", "PA1"):
            rep, _ = self.solved(name)
            P = instantiate(name).problem
            pw = ssc.pointwise_conditions(P, rep.final_trajectory)
            margins = {k: pw.margins[k] for k in ("H_uu", "glc", "block") if pw.margins[k] is not None}
            in_band = all(0.9 <= v <= 1.1 for v in margins.values())
            good = pw.passed and in_band and pw.margins["V_norm"] <= 1e-12
            ok &= good
            vals[name] = dict(margins=pw.margins, passes=pw.passes)
        summ = "; ".join(
            f"{k} " + ", ".join(f"{m}={x:.6f}" for m, x in v["margins"].items() if x is not None)
            for k, v in vals.items()
        )
        return CriterionResult(5, "pointwise conditions", ok, summ, vals)

    def c6(self, N_qp=100):
        """Uniform-positivity estimate on PA1 and PA1-neg."""
        vals = {}
        for name in ("PA1", "PA1-neg"):
            rep, _ = self.solved(name)
            pos = ssc.uniform_positivity(instantiate(name).problem, rep.final_trajectory, N_qp)
            vals[name] = pos.to_dict()
        a, b = vals["PA1"], vals["PA1-neg"]
        ok = (a["passed"] and a["delta"] <= 0.1 * abs(a["rho_hat"])) and (b["rho_hat"] < -b["tol"])
        summ = (f"PA1 rho_hat={a['rho_hat']:.6g} (2N: {a['rho_hat_refined']:.6g}), "
                f"PA1-neg rho_hat={b['rho_hat']:.6g}")
        return CriterionResult(6, "uniform positivity", ok, summ, vals)

    def c7(self):
        """Stationarity along converged extremals."""
        vals, ok = {}, True
        for name in catalog():
            rep, _ = self.solved(name)
            tr = rep.final_trajectory
            hv = float(np.max(np.abs(tr.H_v), initial=0.0))
            dhv = float(np.max(np.abs(tr.dotHv), initial=0.0))
            dh = float(np.max(np.abs(tr.H - tr.H[0])))
            good = rep.converged and hv <= 1e-6 and dhv <= 1e-6 and dh <= 1e-8
            ok &= good
            vals[name] = dict(max_Hv=hv, max_dotHv=dhv, max_H_drift=dh, converged=rep.converged)
        summ = ", ".join(f"{k} |Hv|={v['max_Hv']:.1e} |dHv|={v['max_dotHv']:.1e} dH={v['max_H_drift']:.1e}"
                         for k, v in vals.items())
        return CriterionResult(7, "stationarity consistency", ok, summ, vals)

    def c8(self):
        """(LS) -> (LQS) map on NLQ1 and SLQ1."""
        vals, ok = {}, True
        for name in ("NLQ1", "SLQ1"):
            rep, _ = self.solved(name)
            P = instantiate(name).problem
            grid = Grid(self.N, P.T)
            nu = rep.nu_hat.to_array(P)
            traj = rep.final_trajectory
            _, sol = shooting_jacobian(P, nu, grid, return_solutions=True)
            res = goh.map_ls_to_lqs(P, traj, sol)
            vals[name] = dict(max_residual=res.max, per_seed=res.per_seed)
            ok &= res.max <= 1e-6
        summ = ", ".join(f"{k} {v['max_residual']:.2e}" for k, v in vals.items())
        return CriterionResult(8, "(LS)->(LQS) map", ok, summ, vals)

    def c9(self, Ns=(250, 500, 1000)):
        """RK4 convergence ratios against the analytic extremals."""
        vals, ok = {}, True
        for name in catalog():
            b = instantiate(name)
            P = b.problem
            errs = []
            for N in Ns:
                tr = integrate_extremal(P, b.nu_hat.to_array(P), Grid(N, P.T))
                ex = [b.analytic_state(t) for t in tr.t]
                X = np.array([e["x"] for e in ex])
                Pc = np.array([e["p"] for e in ex])
                errs.append(float(max(np.max(np.abs(tr.x - X)), np.max(np.abs(tr.p - Pc)))))
            ratios = [a / b_ for a, b_ in zip(errs[:-1], errs[1:])]
            ok &= all(12.0 <= r <= 20.0 for r in ratios)
            vals[name] = dict(N=list(Ns), errors=errs, ratios=ratios)
        summ = ", ".join(f"{k} " + "/".join(f"{r:.2f}" for r in v["ratios"]) for k, v in vals.items())
        return CriterionResult(9, "integrator order", ok, summ, vals)


CRITERIA = (1, 2, 3, 4, 5, 6, 7, 8, 9)


def run_all(numbers=CRITERIA, suite: Suite | None = None, echo=None):
    """Run the listed criteria; ``echo`` receives each result as it completes."""
    suite = Suite() if suite is None else suite
    out = []
    for k in numbers:
        t0 = time.perf_counter()
        try:
            res = getattr(suite, f"c{k}")()
        except ShootingBaseError as exc:
            res = CriterionResult(k, f"criterion {k}", False, f"error: {exc}")
        res.timing.setdefault("wall_s", time.perf_counter() - t0)
        out.append(res)
        if echo is not None:
            echo(res)
    return out
