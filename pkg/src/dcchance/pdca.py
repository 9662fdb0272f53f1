"""Proximal DC algorithm for DC-constrained programs.

Each iteration linearises ``h`` and every ``H_i`` at ``x_k`` and solves

    min  g(x) - s_h.x + beta_k/2 ||x - x_k||^2
    s.t. G_i(x) - H_i(x_k) - s_Hi.(x - x_k) <= 0,   x in X,

with the top-k sums in ``G_i`` expressed through their LP duals (see
:mod:`dcchance.reform`).  Since the linearisation over-estimates ``-H_i``,
feasibility of ``x_k`` carries over to ``x_{k+1}``, and the objective decreases by
at least ``(rho + beta_k)/2 ||x_{k+1} - x_k||^2``.  Both facts are checked at
runtime and violations raise instead of being repaired.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .model import FEAS_TOL, as_vector
from .qpsolver import QpConfig
from .reform import (
    DcProgram, QuantileConstraint, assemble_subproblem, check_feasibility, linearize,
    solve_subproblem,
)

CONVERGED = "converged"
MAX_ITER = "max_iter"
TIME_LIMIT = "time_limit"


class PdcaError(RuntimeError):
    """Base class; ``k`` is the iteration at which the failure occurred."""

    def __init__(self, k, message):
        super().__init__(f"iteration {k}: {message}")
        self.k = k


class InfeasibleStartError(PdcaError):
    pass


class SubproblemError(PdcaError):
    def __init__(self, k, status):
        super().__init__(k, f"subproblem solver returned {status!r}")
        self.status = status


class FeasibilityDriftError(PdcaError):
    pass


class SufficientDecreaseError(PdcaError):
    pass


@dataclass
class SolverConfig:
    beta0: float = 1.0
    beta_decay: float = 0.25
    beta_floor: Optional[float] = None  # None: 1e-8 when rho == 0, else 0
    tol_rel: float = 1e-6
    max_iter: int = 1000
    time_limit_s: float = 1800.0
    allow_zero_prox: bool = False  # permit beta = rho = 0 (the plain DCA / FW regime)
    decrease_slack: float = 1e-9
    drift_tol: float = 1e-6
    # the decrease check allows 1e-9 slack, so subproblems are solved tighter than
    # the QP defaults
    qp: QpConfig = field(default_factory=lambda: QpConfig(feas_tol=1e-10, gap_tol=1e-11))

    def __post_init__(self):
        if self.beta0 < 0:
            raise ValueError("beta0 must be nonnegative")
        if not 0 < self.beta_decay <= 1:
            raise ValueError("beta_decay must lie in (0, 1]")
        if self.beta_floor is not None and self.beta_floor < 0:
            raise ValueError("beta_floor must be nonnegative")
        if self.tol_rel <= 0 or self.max_iter < 1 or self.time_limit_s <= 0:
            raise ValueError("tol_rel, max_iter and time_limit_s must be positive")


def beta_schedule(config: SolverConfig, k: int, rho: float = 0.0) -> float:
    """``max(beta0 * decay**k, floor)``; identically 0 when ``beta0 == 0``."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    if config.beta0 == 0:
        return 0.0
    floor = config.beta_floor
    if floor is None:
        floor = 1e-8 if rho == 0 else 0.0
    return max(config.beta0 * config.beta_decay**k, floor)


@dataclass
class IterRecord:
    k: int
    x: np.ndarray  # x^{k+1}
    f: float  # f(x^{k+1})
    f_prev: float
    step_norm: float
    beta: float
    multipliers: tuple
    fw_gap: float
    lin_residuals: tuple  # G_i(x^{k+1}) - H_i(x^k) - s_Hi.(x^{k+1} - x^k)
    time_s: float
    s_h: np.ndarray
    qp_iterations: int = 0


@dataclass
class SolveTrace:
    x0: np.ndarray
    f0: float
    rho: float
    records: List[IterRecord] = field(default_factory=list)
    status: str = MAX_ITER

    def __len__(self):
        return len(self.records)

    @property
    def iterates(self):
        return [self.x0] + [r.x for r in self.records]

    @property
    def fvals(self):
        return [self.f0] + [r.f for r in self.records]

    def fw_violation(self, slack: float = 1e-8) -> float:
        """Largest excess of ``min_{l<=k} d_l`` over ``(f0 - f_k)/k + slack``, k >= 1."""
        worst = -math.inf
        running = math.inf
        for k, rec in enumerate(self.records, start=1):
            running = min(running, rec.fw_gap)
            bound = (self.f0 - rec.f) / k + slack
            worst = max(worst, running - bound)
        return worst

    def to_csv(self, path) -> None:
        ncons = len(self.records[0].multipliers) if self.records else 1
        lam_cols = ["lambda"] + [f"lambda_{i + 1}" for i in range(1, ncons)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "f", "step_norm", "beta", *lam_cols, "fw_gap", "time_s"])
            for r in self.records:
                w.writerow([r.k, repr(r.f), repr(r.step_norm), repr(r.beta),
                            *(repr(float(m)) for m in r.multipliers),
                            repr(r.fw_gap), f"{r.time_s:.6f}"])


def fw_gap(objective, x_k, x_next, s_h) -> float:
    """``g(x_k) - g(x_next) - s_h.(x_k - x_next)``, the linearised decrease."""
    x_k = np.asarray(x_k, dtype=float)
    x_next = np.asarray(x_next, dtype=float)
    return objective.g(x_k) - objective.g(x_next) - float(s_h @ (x_k - x_next))


def _is_convex(program: DcProgram) -> bool:
    return program.convex_constraints and program.objective.h.kind == "zero"


def pdca_solve(program: DcProgram, x0, config: Optional[SolverConfig] = None):
    """Run the proximal DC iteration from a feasible ``x0``.

    Returns
    -------
    x_final : ndarray
    trace : SolveTrace

    Raises
    ------
    InfeasibleStartError, SubproblemError, FeasibilityDriftError,
    SufficientDecreaseError
    """
    cfg = config or SolverConfig()
    n = program.n
    x = as_vector(x0, n).copy()
    rho = program.objective.rho
    if rho + cfg.beta0 == 0 and not cfg.allow_zero_prox:
        raise ValueError("rho + beta0 = 0: set allow_zero_prox to run without a proximal term")
    start = check_feasibility(program, x, FEAS_TOL)
    if not start.feasible:
        raise InfeasibleStartError(0, f"x0 violates the constraints: values={start.values}, "
                                      f"domain residuals={start.domain_residuals}")

    objective = program.objective
    f = objective(x)
    trace = SolveTrace(x.copy(), f, rho)
    convex = _is_convex(program)
    t0 = time.perf_counter()

    for k in range(cfg.max_iter):
        # a convex program needs no proximal term: one solve gives the optimum
        beta = 0.0 if convex else beta_schedule(cfg, k, rho)
        s_h = objective.h.subgradient(x)
        lin = linearize(program, x)
        sub = assemble_subproblem(program, x, s_h, lin, beta)
        sol = solve_subproblem(sub, x, cfg.qp)
        if sol.status != "optimal":
            raise SubproblemError(k, sol.status)
        x_next = sol.x_next

        rep = check_feasibility(program, x_next, cfg.drift_tol)
        if not rep.feasible:
            raise FeasibilityDriftError(k, f"iterate left the feasible set: values={rep.values}, "
                                           f"domain residuals={rep.domain_residuals}")
        f_next = objective(x_next)
        step = float(np.linalg.norm(x_next - x))
        if f_next - f > -0.5 * (rho + beta) * step**2 + cfg.decrease_slack:
            raise SufficientDecreaseError(
                k, f"f went {f!r} -> {f_next!r} with step {step:.3e}, beta {beta:.3e}")

        lin_res = tuple(
            con.GH(x_next)[0] - H_k - float(s_H @ (x_next - x))
            for con, (H_k, s_H) in zip(program.constraints, lin))
        rec = IterRecord(
            k=k, x=x_next.copy(), f=f_next, f_prev=f, step_norm=step, beta=beta,
            multipliers=sol.multipliers, fw_gap=fw_gap(objective, x, x_next, s_h),
            lin_residuals=lin_res, time_s=time.perf_counter() - t0, s_h=s_h,
            qp_iterations=sol.qp_iterations)
        trace.records.append(rec)

        done = abs(f - f_next) / max(1.0, abs(f_next)) <= cfg.tol_rel
        x, f = x_next, f_next
        if done or convex:
            trace.status = CONVERGED
            break
        if rec.time_s >= cfg.time_limit_s:
            trace.status = TIME_LIMIT
            break
    else:
        trace.status = MAX_ITER
    return x, trace


def kkt_report(program: DcProgram, trace: SolveTrace) -> dict:
    """Stationarity proxy, final multipliers and linearised complementarity."""
    if not trace.records:
        raise ValueError("empty trace")
    last = trace.records[-1]
    comp = max(abs(m * r) for m, r in zip(last.multipliers, last.lin_residuals))
    mult = last.multipliers[0] if len(last.multipliers) == 1 else last.multipliers
    return {"step_norm_final": last.step_norm, "multiplier_final": mult,
            "complementarity": comp}
