"""DC reformulations and assembly of the convexified subproblems.

A chance problem becomes ``min g - h  s.t.  G - H <= 0`` with G, H the top-k
sums from :mod:`dcchance.quantile`.  At an iterate ``x_k`` the concave parts are
linearised and each top-k sum in G is replaced by its LP dual,

    top_k(C(x)) = min { 1'lam + k mu : lam >= 0, C_i(x) <= lam_i + mu },

so the subproblem is a QP over ``(x, lam, mu)`` with one ``(lam, mu)`` block per
nonzero weight.  The intermediate vector ``z >= C(x)`` is folded into the
scenario rows directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np

from .model import (
    FEAS_TOL, AffineMap, ChanceProblem, ConvexFunction, DcObjective, InvalidInputError,
    Polyhedron, ScenarioModel, as_vector,
)
from .qpsolver import QpConfig, QuadraticProgram, qp_solve
from .quantile import (
    AllScenariosRequired, DcSplit, compute_M, gh_values, subgrad_H,
)


@dataclass(frozen=True)
class QuantileConstraint:
    """``sum_i w_i C_[i](x) <= 0`` over a scenario model.

    ``split=None`` encodes the all-scenario case ``C_i(x) <= 0`` for every i,
    which is convex (H identically zero).
    """

    scenarios: ScenarioModel
    split: Optional[DcSplit]

    @property
    def n(self):
        return self.scenarios.n

    def GH(self, x):
        C = self.scenarios.piece_values(x).max(axis=1)
        if self.split is None:
            return float(C.max()), 0.0
        return gh_values(self.split, C)

    def value(self, x) -> float:
        G, H = self.GH(x)
        if self.split is None:
            return G
        return G - H

    def H_and_subgradient(self, x):
        if self.split is None:
            return 0.0, np.zeros(self.n)
        return self.GH(x)[1], subgrad_H(self.scenarios, self.split, x)


@dataclass(frozen=True)
class GenericConstraint:
    """``G(x) - H(x) <= 0`` with G of kind zero or linear (QP-representable)."""

    G: ConvexFunction
    H: ConvexFunction

    def __post_init__(self):
        if self.G.kind == "quadratic":
            raise InvalidInputError(
                "a quadratic G cannot enter the LP/QP subproblem; only zero or linear G")
        if self.G.n != self.H.n:
            raise InvalidInputError("G and H dimensions differ")

    @property
    def n(self):
        return self.G.n

    def GH(self, x):
        return self.G(x), self.H(x)

    def value(self, x) -> float:
        return self.G(x) - self.H(x)

    def H_and_subgradient(self, x):
        return self.H(x), self.H.subgradient(x)


Constraint = Union[QuantileConstraint, GenericConstraint]


@dataclass(frozen=True)
class DcProgram:
    objective: DcObjective
    domain: Polyhedron
    constraints: tuple

    def __post_init__(self):
        cons = tuple(self.constraints)
        object.__setattr__(self, "constraints", cons)
        if not cons:
            raise InvalidInputError("a DC program needs at least one constraint")
        n = self.objective.n
        if self.domain.n not in (0, n) or any(c.n != n for c in cons):
            raise InvalidInputError("constraints, domain and objective disagree on n")

    @property
    def n(self) -> int:
        return self.objective.n

    @property
    def convex_constraints(self) -> bool:
        return all(isinstance(c, QuantileConstraint) and c.split is None for c in self.constraints)


@dataclass(frozen=True)
class FeasibilityReport:
    values: tuple
    domain_residuals: tuple
    feasible: bool


def check_feasibility(program: DcProgram, x, tol: float = FEAS_TOL) -> FeasibilityReport:
    x = as_vector(x, program.n)
    values = tuple(c.value(x) for c in program.constraints)
    res = program.domain.residuals(x)
    ok = all(v <= tol for v in values) and max(res) <= tol
    return FeasibilityReport(values, res, ok)


def split_for(problem: ChanceProblem) -> Optional[DcSplit]:
    N = problem.N
    try:
        M = compute_M(problem.alpha, N)
    except AllScenariosRequired:
        if problem.weights is None:
            return None
        M = N - 1
    if problem.weights is None:
        return DcSplit.plain(M, N)
    return DcSplit(M, problem.weights)


def reformulate_chance(problem: ChanceProblem) -> DcProgram:
    con = QuantileConstraint(problem.scenarios, split_for(problem))
    return DcProgram(problem.objective, problem.domain, (con,))


def reformulate_cardinality(objective: DcObjective, domain: Polyhedron, K: int) -> DcProgram:
    """Lift ``||x||_0 <= K`` to ``(x, z)`` with ``|x_i| <= z_i`` and ``z_[n-K] <= 0``."""
    n = objective.n
    if not 1 <= K <= n - 1:
        raise InvalidInputError(f"need 1 <= K <= n-1, got K={K}, n={n}")
    lo, hi = domain.coordinate_bounds()
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise InvalidInputError("cardinality lift needs a bounded box on every coordinate")
    zmax = np.maximum(np.abs(lo), np.abs(hi))
    eye, zero = np.eye(n), np.zeros((n, n))
    G = np.vstack([
        np.hstack([domain.Gineq, np.zeros((domain.Gineq.shape[0], n))]),
        np.hstack([eye, -eye]),
        np.hstack([-eye, -eye]),
        np.hstack([zero, -eye]),
        np.hstack([zero, eye]),
    ])
    h = np.concatenate([domain.hineq, np.zeros(2 * n), np.zeros(n), zmax])
    Aeq = np.hstack([domain.Aeq, np.zeros((domain.Aeq.shape[0], n))])
    lifted_domain = Polyhedron(Aeq, domain.beq, G, h)
    # scenario i is the unit vector e_i, and the single piece reads off z_i
    B = np.vstack([zero, eye])
    coords = ScenarioModel(np.eye(n), (AffineMap(np.zeros(2 * n), np.zeros(n), 0.0, B),))
    con = QuantileConstraint(coords, DcSplit.plain(n - K, n))
    lifted = DcObjective(objective.g.lift(2 * n), objective.h.lift(2 * n))
    return DcProgram(lifted, lifted_domain, (con,))


@dataclass
class Subproblem:
    qp: QuadraticProgram
    n: int
    dc_rows: list  # row index of each linearised DC constraint (None if absent)
    blocks: list  # per constraint: list of (lam_slice, mu_index, k) per weight level
    program: DcProgram

    def feasible_point(self, x_k) -> np.ndarray:
        """``x_k`` with the tight dual block values: a feasible point of the QP."""
        v = np.zeros(self.qp.nv)
        v[: self.n] = x_k
        for con, blocks in zip(self.program.constraints, self.blocks):
            if not blocks:
                continue
            C = con.scenarios.piece_values(x_k).max(axis=1)
            desc = np.sort(C)[::-1]
            for lam, mu_idx, k in blocks:
                mu = desc[k - 1]
                v[lam] = np.maximum(C - mu, 0.0)
                v[mu_idx] = mu
        return v


@dataclass
class SubproblemSolution:
    x_next: np.ndarray
    multipliers: tuple
    aux: list
    status: str
    qp_iterations: int = 0


def assemble_subproblem(program: DcProgram, x_k, s_h, linearizations, beta: float) -> Subproblem:
    """Build the QP at ``x_k``.

    ``linearizations`` holds ``(H_i(x_k), s_H_i)`` per constraint.  The objective
    is ``g(x) - s_h.x + beta/2 ||x - x_k||^2`` with constants dropped.
    """
    n = program.n
    x_k = as_vector(x_k, n)
    g = program.objective.g

    # column layout: x, then per constraint, per weight level, (lam in R^N, mu)
    blocks = []
    col = n
    for con in program.constraints:
        cb = []
        if isinstance(con, QuantileConstraint) and con.split is not None:
            N = con.scenarios.N
            for _w, kG, _ in con.split.levels():
                cb.append((slice(col, col + N), col + N, kG))
                col += N + 1
        blocks.append(cb)
    nv = col

    P = np.zeros((nv, nv))
    P[:n, :n] = g.hessian() + beta * np.eye(n)
    q = np.zeros(nv)
    q[:n] = g.a0 - s_h - beta * x_k

    rows, rhs, dc_rows = [], [], []
    nrow = 0
    for con, cb, (H_k, s_H) in zip(program.constraints, blocks, linearizations):
        if isinstance(con, GenericConstraint):
            r = np.zeros((1, nv))
            r[0, :n] = con.G.a0 - s_H
            rows.append(r)
            rhs.append([H_k - s_H @ x_k - con.G.const])
            dc_rows.append(nrow)
            nrow += 1
            continue
        sc = con.scenarios
        N = sc.N
        grads = [np.asarray(sc.piece_gradients(j)) for j in range(sc.m)]
        offs = [sc.piece_offsets(j) for j in range(sc.m)]
        if con.split is None:
            for gr, off in zip(grads, offs):
                r = np.zeros((N, nv))
                r[:, :n] = gr
                rows.append(r)
                rhs.append(-off)
                nrow += N
            dc_rows.append(None)
            continue
        r = np.zeros((1, nv))
        r[0, :n] = -s_H
        for (w, _kG, _), (lam, mu, k) in zip(con.split.levels(), cb):
            r[0, lam] = w
            r[0, mu] = w * k
        rows.append(r)
        rhs.append([H_k - s_H @ x_k])
        dc_rows.append(nrow)
        nrow += 1
        eyeN = np.eye(N)
        for lam, mu, _k in cb:
            for gr, off in zip(grads, offs):
                r = np.zeros((N, nv))
                r[:, :n] = gr
                r[:, lam] = -eyeN
                r[:, mu] = -1.0
                rows.append(r)
                rhs.append(-off)
                nrow += N
            r = np.zeros((N, nv))
            r[:, lam] = -eyeN
            rows.append(r)
            rhs.append(np.zeros(N))
            nrow += N

    dom = program.domain
    if dom.Gineq.shape[0]:
        r = np.zeros((dom.Gineq.shape[0], nv))
        r[:, :n] = dom.Gineq
        rows.append(r)
        rhs.append(dom.hineq)
    Aeq = np.zeros((dom.Aeq.shape[0], nv))
    Aeq[:, :n] = dom.Aeq

    Gm = np.vstack(rows) if rows else np.zeros((0, nv))
    hv = np.concatenate([np.asarray(v, dtype=float) for v in rhs]) if rhs else np.zeros(0)
    qp = QuadraticProgram(P, q, Aeq, dom.beq, Gm, hv)
    return Subproblem(qp, n, dc_rows, blocks, program)


def linearize(program: DcProgram, x):
    return [c.H_and_subgradient(x) for c in program.constraints]


def solve_subproblem(sub: Subproblem, x_k, config: Optional[QpConfig] = None,
                     warm: bool = True) -> SubproblemSolution:
    start = sub.feasible_point(x_k) if warm else None
    sol = qp_solve(sub.qp, config, warm_start=start)
    mults = tuple(0.0 if r is None else float(sol.s[r]) for r in sub.dc_rows)
    aux = [[(sol.x[lam], float(sol.x[mu])) for lam, mu, _ in cb] for cb in sub.blocks]
    return SubproblemSolution(sol.x[: sub.n].copy(), mults, aux, sol.status, sol.iterations)
