"""CVaR initialiser and the exact scenario-subset oracle."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import ChanceProblem, InvalidInputError, in_sample_probability
from .qpsolver import INFEASIBLE, UNBOUNDED, QpConfig, QuadraticProgram, qp_solve
from .quantile import AllScenariosRequired, compute_M
from .reform import check_feasibility, reformulate_chance


class NoInitialPointError(RuntimeError):
    pass


class BudgetExceededError(RuntimeError):
    pass


class OracleInfeasibleError(RuntimeError):
    pass


def _scenario_rows(problem: ChanceProblem):
    """Rows ``(a_j + B_j xi_i)`` and offsets ``b_j.xi_i + d_j``, stacked per piece.

    Returns arrays of shape (m, N, n) and (m, N).
    """
    sc = problem.scenarios
    grads = np.stack([np.asarray(sc.piece_gradients(j)) for j in range(sc.m)])
    offs = np.stack([sc.piece_offsets(j) for j in range(sc.m)])
    return grads, offs


def _objective_terms(problem: ChanceProblem, nv: int):
    n = problem.n
    g = problem.objective.g
    P = np.zeros((nv, nv))
    P[:n, :n] = g.hessian()
    q = np.zeros(nv)
    q[:n] = g.a0
    return P, q


def cvar_solve(problem: ChanceProblem, config: Optional[QpConfig] = None):
    """Minimise ``g`` under the CVaR surrogate of the chance constraint.

    Variables are ``(x, t, u)`` with

        t + sum(u) / (alpha N) <= 0,   u_i >= c_j(x, xi_i) - t,   u >= 0.

    A concave part ``h`` of the objective is dropped.  The returned point is
    checked against the quantile constraint before it is handed back.

    Returns
    -------
    x0 : ndarray
    status : str
    """
    n, N = problem.n, problem.N
    grads, offs = _scenario_rows(problem)
    m = grads.shape[0]
    nv = n + 1 + N
    P, q = _objective_terms(problem, nv)
    rows, rhs = [], []
    r = np.zeros(nv)
    r[n] = 1.0
    r[n + 1:] = 1.0 / (problem.alpha * N)
    rows.append(r[None, :])
    rhs.append([0.0])
    for j in range(m):
        r = np.zeros((N, nv))
        r[:, :n] = grads[j]
        r[:, n] = -1.0
        r[:, n + 1:] = -np.eye(N)
        rows.append(r)
        rhs.append(-offs[j])
    r = np.zeros((N, nv))
    r[:, n + 1:] = -np.eye(N)
    rows.append(r)
    rhs.append(np.zeros(N))
    dom = problem.domain
    if dom.Gineq.shape[0]:
        r = np.zeros((dom.Gineq.shape[0], nv))
        r[:, :n] = dom.Gineq
        rows.append(r)
        rhs.append(dom.hineq)
    Aeq = np.zeros((dom.Aeq.shape[0], nv))
    Aeq[:, :n] = dom.Aeq
    qp = QuadraticProgram(P, q, Aeq, dom.beq, np.vstack(rows),
                          np.concatenate([np.asarray(v, float) for v in rhs]))
    sol = qp_solve(qp, config)
    if sol.status == INFEASIBLE:
        raise NoInitialPointError("CVaR approximation is infeasible")
    if not sol.ok:
        raise NoInitialPointError(f"CVaR solve failed with status {sol.status!r}")
    x0 = sol.x[:n].copy()
    if not check_feasibility(reformulate_chance(problem), x0).feasible:
        raise NoInitialPointError("CVaR point does not satisfy the quantile constraint")
    return x0, sol.status


@dataclass
class OracleResult:
    x_star: np.ndarray
    f_star: float
    subset: tuple
    solves: int


def oracle_size(problem: ChanceProblem) -> int:
    try:
        M = compute_M(problem.alpha, problem.N)
    except AllScenariosRequired:
        return 1
    return math.comb(problem.N, M)


def saa_oracle(problem: ChanceProblem, cap: int = 5000, workers: int = 1,
               config: Optional[QpConfig] = None) -> OracleResult:
    """Global optimum of the sample problem by enumerating size-M scenario subsets.

    The feasible set is the union over subsets S with ``|S| = M`` of the convex
    sets ``{x in X : C(x, xi_i) <= 0, i in S}``, so the best per-subset optimum
    is the global one.  Ties go to the lexicographically smallest subset.
    """
    if problem.objective.h.kind != "zero":
        raise InvalidInputError("the oracle needs a convex objective (h = 0)")
    N, n = problem.N, problem.n
    try:
        M = compute_M(problem.alpha, N)
    except AllScenariosRequired:
        M = N
    if problem.weights is not None and (M == N or problem.weights[M - 1] != 1.0):
        raise InvalidInputError("the oracle handles the plain quantile constraint only")
    count = math.comb(N, M)
    if count > cap:
        raise BudgetExceededError(f"C({N}, {M}) = {count} subsets exceeds the cap {cap}")

    grads, offs = _scenario_rows(problem)
    P, q = _objective_terms(problem, n)
    dom = problem.domain

    def solve(S):
        idx = list(S)
        G = np.vstack([dom.Gineq] + [grads[j][idx] for j in range(grads.shape[0])])
        h = np.concatenate([dom.hineq] + [-offs[j][idx] for j in range(grads.shape[0])])
        sol = qp_solve(QuadraticProgram(P, q, dom.Aeq, dom.beq, G, h), config)
        if sol.status == UNBOUNDED:
            raise OracleInfeasibleError(f"subset {S}: objective unbounded below")
        if sol.status == INFEASIBLE:
            return None
        if not sol.ok:
            raise RuntimeError(f"subset {S}: QP solver returned {sol.status!r}")
        return S, problem.objective(sol.x), sol.x

    subsets = itertools.combinations(range(N), M)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(solve, subsets))
    else:
        results = [solve(S) for S in subsets]

    best = None
    for res in results:  # enumeration order is lexicographic
        if res is None:
            continue
        if best is None or res[1] < best[1] - 1e-10 * (1 + abs(best[1])):
            best = res
    if best is None:
        raise OracleInfeasibleError("every scenario subset is infeasible")
    S, f, x = best
    assert in_sample_probability(problem.scenarios, x, 1e-7) >= M / N - 1e-12
    return OracleResult(x.copy(), float(f), tuple(S), count)
