"""One-call solve of a chance problem by a named method."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .baselines import cvar_solve, saa_oracle
from .model import ChanceProblem, in_sample_probability
from .pdca import SolveTrace, SolverConfig, pdca_solve
from .reform import reformulate_chance

METHODS = ("dca", "pdca", "cvar", "oracle")
PROB_TOL = 1e-6  # same slack as the iterate feasibility check


@dataclass
class SolveResult:
    x: np.ndarray
    fval: float
    prob: float
    status: str
    iters: int
    time_s: float
    trace: Optional[SolveTrace] = None

    def to_dict(self) -> dict:
        return {"x": [float(v) for v in self.x], "fval": self.fval, "prob": self.prob,
                "status": self.status, "iters": self.iters, "time_s": self.time_s}


def solve_chance(problem: ChanceProblem, method: str = "pdca",
                 config: Optional[SolverConfig] = None, oracle_cap: int = 5000) -> SolveResult:
    """Solve with ``dca``, ``pdca`` (both CVaR-initialised), ``cvar`` or ``oracle``.

    ``dca`` is pDCA with ``beta0 = 0``.  Errors from the underlying solvers
    propagate unchanged.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    cfg = config or SolverConfig()
    t0 = time.perf_counter()
    trace = None
    if method == "oracle":
        res = saa_oracle(problem, cap=oracle_cap, config=cfg.qp)
        x, status, iters = res.x_star, "optimal", res.solves
    else:
        x0, status = cvar_solve(problem, cfg.qp)
        x, iters = x0, 0
        if method != "cvar":
            if method == "dca":
                cfg = SolverConfig(**{**cfg.__dict__, "beta0": 0.0, "allow_zero_prox": True})
            x, trace = pdca_solve(reformulate_chance(problem), x0, cfg)
            status, iters = trace.status, len(trace)
    elapsed = time.perf_counter() - t0
    return SolveResult(np.asarray(x, float), problem.objective(x),
                       in_sample_probability(problem.scenarios, x, PROB_TOL), status, iters,
                       elapsed, trace)
