"""Machine-readable run reports.

Reports are JSON documents whose floats are written with 17 significant
digits, so re-reading reproduces every double exactly.  Non-finite floats are
written as ``null``.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .problem import ProblemDef
from .shooting import SolveReport

__all__ = ["dumps", "write_report", "read_report", "solve_section", "nu_from_report"]


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    s = "%.17g" % x
    # keep a float marker so integers-valued doubles read back as floats
    if not any(c in s for c in ".eEn"):
        s += ".0"
    return s


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """Serialize ``obj`` (dicts, lists, numbers, strings, arrays) to JSON text."""
    return _encode(obj, indent, 0) + "\n"


def write_report(obj, path) -> None:
    Path(path).write_text(dumps(obj))


def read_report(path) -> dict:
    return json.loads(Path(path).read_text())


def cost_of(problem: ProblemDef, traj) -> float:
    """Mayer cost ``phi0(x0, xT)`` along a trajectory."""
    return float(problem.endpoints.phi0.value(traj.x[0], traj.x[-1]))


def solve_section(problem_name: str, N: int, mode: str, rep: SolveReport, problem: ProblemDef,
                  timing: dict | None = None) -> dict:
    """The fields of a solve report."""
    d = dict(
        problem=problem_name,
        N=int(N),
        mode=mode,
        iterates=[dict(nu=np.asarray(nu), residual_norm=float(r)) for nu, r in rep.iterates],
        converged=bool(rep.converged),
        observed_order=float(rep.observed_order),
        nu_hat=rep.nu_hat.to_array(problem),
        residual_norm=float(rep.residual_norm),
        cost=cost_of(problem, rep.final_trajectory) if rep.final_trajectory is not None else None,
        message=rep.message,
    )
    if timing is not None:
        d["timing"] = timing
    return d


def nu_from_report(path) -> np.ndarray:
    """The ``nu_hat`` field of a report file."""
    d = read_report(path)
    if "nu_hat" not in d:
        raise KeyError("report has no nu_hat field")
    return np.asarray(d["nu_hat"], float)
