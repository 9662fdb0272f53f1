"""Synthetic instance families and the benchmark runner.

Families
--------
portfolio
    VaR-constrained mean-variance selection, returns from a 3-factor model.
transport_convex / transport_nonconvex
    Probabilistic transportation with random demands; the nonconvex variant
    discounts the unit cost linearly in the shipped amount.
cardinality
    ``min ||x - c||^2`` over a box with ``||x||_0 <= K``; ``K = n - ceil((1 - alpha) n)``
    so that ``alpha`` plays the same role as in the chance families.
toy
    The 1-d instance ``xi = (1, 2, 5, 9)``, ``g = x^2``, ``X = [-10, 10]``.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .baselines import NoInitialPointError, cvar_solve, saa_oracle
from .model import (
    AffineMap, ChanceProblem, ConvexFunction, DcObjective, InvalidInputError, Polyhedron,
    ScenarioModel, in_sample_probability,
)
from .pdca import SolverConfig, pdca_solve
from .qpsolver import QuadraticProgram, qp_solve
from .quantile import compute_M
from .reform import reformulate_cardinality, reformulate_chance
from .solve import PROB_TOL

FAMILIES = ("portfolio", "transport_convex", "transport_nonconvex", "cardinality", "toy")
BENCH_METHODS = ("dca", "pdca1", "pdca2", "cvar", "oracle")
DEFAULT_BETAS = {
    "portfolio": (0.1, 1.0),
    "transport_convex": (1.0, 10.0),
    "transport_nonconvex": (1.0, 10.0),
    "cardinality": (1.0, 10.0),
    "toy": (0.1, 1.0),
}
MAX_REDRAWS = 10

GAMMA = 2.0
TARGET_RETURN = 0.0002
MAX_WEIGHT = 0.5


class GenerationError(RuntimeError):
    pass


def _redraw(make, seed):
    """Call ``make(rng)`` until the CVaR initialiser finds a point."""
    for attempt in range(MAX_REDRAWS):
        problem = make(np.random.default_rng([seed, attempt]))
        try:
            cvar_solve(problem)
        except NoInitialPointError:
            continue
        return problem
    raise GenerationError(f"no CVaR-feasible instance after {MAX_REDRAWS} draws (seed {seed})")


def gen_portfolio(n: int, N: Optional[int] = None, seed: int = 0, alpha: float = 0.05) -> ChanceProblem:
    """Mean-variance portfolio with ``P(xi'x >= R) >= 1 - alpha``.

    Daily returns follow ``mu + L f + e`` with three factors.  The objective uses
    the sample mean and covariance of the drawn returns, so ``Sigma`` is PSD by
    construction.
    """
    if n < 2:
        raise InvalidInputError("portfolio needs n >= 2")
    N = 3 * n if N is None else N

    def make(rng):
        drift = rng.uniform(0.001, 0.004, n)
        loadings = np.column_stack([rng.uniform(0.5, 1.5, n), rng.normal(0, 0.5, (n, 2))])
        fvol = np.array([0.002, 0.001, 0.001])
        # idiosyncratic noise dominates, so concentrated high-drift portfolios
        # break the VaR target while diversified ones meet it
        ivol = rng.uniform(0.003, 0.010, n)
        F = rng.normal(size=(N, 3)) * fvol
        xi = drift + F @ loadings.T + rng.normal(size=(N, n)) * ivol
        mu = xi.mean(axis=0)
        Sigma = np.cov(xi, rowvar=False)
        Sigma = 0.5 * (Sigma + Sigma.T)
        obj = DcObjective(ConvexFunction.quadratic(GAMMA * Sigma, -mu), ConvexFunction.zero(n))
        cmap = AffineMap(np.zeros(n), np.zeros(n), TARGET_RETURN, -np.eye(n))
        dom = Polyhedron.box(np.zeros(n), np.full(n, MAX_WEIGHT), np.ones((1, n)), np.ones(1))
        return ChanceProblem(obj, dom, ScenarioModel(xi, (cmap,)), alpha)

    return _redraw(make, seed)


def gen_transport(n: int, m: int, N: int, seed: int = 0, nonconvex: bool = False,
                  alpha: float = 0.05) -> ChanceProblem:
    """Transportation from n suppliers to m customers with random demands.

    Variable ``x[i*m + j]`` ships from supplier i to customer j.  Scenario j-th
    piece is ``xi_j - sum_i x_ij``, so all demands must be met jointly.
    """
    if n < 2 or m < 2:
        raise InvalidInputError("transport needs n, m >= 2")
    nv = n * m

    def make(rng):
        cost = rng.uniform(1.0, 10.0, (n, m))
        d = rng.uniform(10.0, 50.0, m)
        xi = np.maximum(rng.normal(d, 0.1 * d, (N, m)), 0.0)
        share = rng.uniform(0.5, 1.5, n)
        theta = share / share.sum() * 1.5 * d.sum()
        maps = []
        for j in range(m):
            a = np.zeros((n, m))
            a[:, j] = -1.0
            maps.append(AffineMap(a.ravel(), np.eye(m)[j], 0.0))
        g = ConvexFunction.linear(cost.ravel())
        if nonconvex:
            h = ConvexFunction.quadratic(np.diag((cost / (2.0 * theta[:, None])).ravel()))
        else:
            h = ConvexFunction.zero(nv)
        supply = np.kron(np.eye(n), np.ones((1, m)))
        G = np.vstack([supply, -np.eye(nv)])
        hv = np.concatenate([theta, np.zeros(nv)])
        dom = Polyhedron(np.zeros((0, nv)), np.zeros(0), G, hv)
        return ChanceProblem(DcObjective(g, h), dom, ScenarioModel(xi, tuple(maps)), alpha)

    return _redraw(make, seed)


@dataclass(frozen=True)
class CardinalityInstance:
    objective: DcObjective
    domain: Polyhedron
    K: int

    @property
    def n(self):
        return self.objective.n


def gen_cardinality(n: int, K: int, seed: int = 0, bound: float = 10.0) -> CardinalityInstance:
    """``min ||x - c||^2`` over ``[-bound, bound]^n`` with at most K nonzeros."""
    if not 1 <= K <= n - 1:
        raise InvalidInputError("need 1 <= K <= n-1")
    rng = np.random.default_rng(seed)
    c = rng.normal(0.0, 3.0, n)
    g = ConvexFunction.quadratic(np.eye(n), -2.0 * c, float(c @ c))
    obj = DcObjective(g, ConvexFunction.zero(n))
    return CardinalityInstance(obj, Polyhedron.box(np.full(n, -bound), np.full(n, bound)), K)


def cardinality_oracle(inst: CardinalityInstance):
    """Best point over all supports of size K; returns ``(x, f)``."""
    n = inst.n
    g = inst.objective.g
    dom = inst.domain
    best = None
    for S in itertools.combinations(range(n), inst.K):
        off = [i for i in range(n) if i not in S]
        Aeq = np.vstack([dom.Aeq, np.eye(n)[off]])
        beq = np.concatenate([dom.beq, np.zeros(len(off))])
        sol = qp_solve(QuadraticProgram(g.hessian(), g.a0, Aeq, beq, dom.Gineq, dom.hineq))
        if sol.ok:
            f = inst.objective(sol.x)
            if best is None or f < best[1] - 1e-10 * (1 + abs(best[1])):
                best = (sol.x, f)
    return best


def solve_cardinality(inst: CardinalityInstance, config: Optional[SolverConfig] = None, x0=None):
    """pDCA on the lifted program from ``x0`` (default 0); returns ``(x, trace)``."""
    program = reformulate_cardinality(inst.objective, inst.domain, inst.K)
    n = inst.n
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    w0 = np.concatenate([x0, np.abs(x0)])
    w, trace = pdca_solve(program, w0, config)
    return w[:n], trace


def gen_toy(alpha: float = 0.25) -> ChanceProblem:
    obj = DcObjective(ConvexFunction.quadratic([[1.0]]), ConvexFunction.zero(1))
    sc = ScenarioModel(np.array([[1.0], [2.0], [5.0], [9.0]]), (AffineMap([-1.0], [1.0]),))
    return ChanceProblem(obj, Polyhedron.box([-10.0], [10.0]), sc, alpha)


def gen_random_affine(n: int, m: int, N: int, seed: int = 0, alpha: float = 0.25,
                      d: int = 2, bound: float = 5.0) -> ChanceProblem:
    """``min ||x - c||^2`` over a box with m random affine pieces.

    Offsets are negative so that the origin satisfies most scenarios, and the
    target ``c`` lies far enough out for the chance constraint to bind.
    """
    def make(rng):
        c = rng.normal(0.0, 3.0, n)
        maps = tuple(AffineMap(rng.normal(size=n), rng.normal(size=d), -rng.uniform(1.0, 3.0))
                     for _ in range(m))
        g = ConvexFunction.quadratic(np.eye(n), -2.0 * c, float(c @ c))
        obj = DcObjective(g, ConvexFunction.zero(n))
        dom = Polyhedron.box(np.full(n, -bound), np.full(n, bound))
        return ChanceProblem(obj, dom, ScenarioModel(rng.normal(size=(N, d)), maps), alpha)

    return _redraw(make, seed)


# --- runner ---------------------------------------------------------------------

@dataclass
class BenchSpec:
    family: str
    n: int = 1
    m: int = 1
    N: Optional[int] = None
    alpha: float = 0.05
    seeds: Sequence[int] = (0,)
    methods: Sequence[str] = ("cvar", "dca", "pdca1", "pdca2")
    betas: Optional[Sequence[float]] = None  # beta0 for pdca1, pdca2
    tol_rel: float = 1e-6
    max_iter: int = 1000
    time_limit_s: float = 1800.0
    oracle_cap: int = 5000
    workers: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidInputError(f"family must be one of {FAMILIES}")
        bad = set(self.methods) - set(BENCH_METHODS)
        if bad:
            raise InvalidInputError(f"unknown methods {sorted(bad)}")
        if self.n < 1 or self.m < 1 or (self.N is not None and self.N < 2):
            raise InvalidInputError("sizes must be positive (N >= 2)")
        if not 0 < self.alpha < 1:
            raise InvalidInputError("alpha must lie in (0, 1)")
        self.seeds = [int(s) for s in self.seeds]
        self.methods = list(self.methods)
        self.betas = tuple(self.betas) if self.betas is not None else DEFAULT_BETAS[self.family]
        if len(self.betas) != 2:
            raise InvalidInputError("betas must hold two values (pdca1, pdca2)")
        if "oracle" in self.methods and self.family != "cardinality":
            N = self.N_effective
            try:
                count = math.comb(N, compute_M(self.alpha, N))
            except InvalidInputError:
                count = 1
            if count > self.oracle_cap:
                raise InvalidInputError(f"oracle needs {count} subset solves, cap is {self.oracle_cap}")

    @property
    def N_effective(self) -> int:
        if self.family == "toy":
            return 4
        if self.family == "cardinality":
            return self.n
        if self.N is not None:
            return self.N
        return 3 * self.n if self.family == "portfolio" else 50

    @property
    def K(self) -> int:
        return self.n - compute_M(self.alpha, self.n)

    @classmethod
    def from_dict(cls, doc) -> "BenchSpec":
        return cls(**doc)

    def solver_config(self, beta0: float) -> SolverConfig:
        return SolverConfig(beta0=beta0, tol_rel=self.tol_rel, max_iter=self.max_iter,
                            time_limit_s=self.time_limit_s, allow_zero_prox=beta0 == 0)


def load_specs(path) -> List[BenchSpec]:
    with open(path) as fh:
        doc = json.load(fh)
    docs = doc if isinstance(doc, list) else [doc]
    return [BenchSpec.from_dict(d) for d in docs]


ROW_FIELDS = ["family", "n", "m", "N", "alpha", "method", "seed", "fval", "time_s", "prob", "status"]
AGG_FIELDS = ["family", "n", "m", "N", "alpha", "method", "runs", "ok",
              "fval_mean", "time_s_mean", "prob_mean"]


def make_instance(spec: BenchSpec, seed: int):
    f = spec.family
    if f == "portfolio":
        return gen_portfolio(spec.n, spec.N_effective, seed, spec.alpha)
    if f.startswith("transport"):
        return gen_transport(spec.n, spec.m, spec.N_effective, seed,
                             nonconvex=f == "transport_nonconvex", alpha=spec.alpha)
    if f == "cardinality":
        return gen_cardinality(spec.n, spec.K, seed)
    return gen_toy(spec.alpha)


def _beta_for(spec, method):
    return {"dca": 0.0, "pdca1": spec.betas[0], "pdca2": spec.betas[1]}[method]


def _run_cardinality(spec, inst, method):
    if method == "cvar":
        return None, "unsupported", None
    if method == "oracle":
        x, _ = cardinality_oracle(inst)
        return x, "optimal", None
    x, trace = solve_cardinality(inst, spec.solver_config(_beta_for(spec, method)))
    return x, trace.status, trace


def _run_chance(spec, problem, method):
    if method == "oracle":
        res = saa_oracle(problem, cap=spec.oracle_cap)
        return res.x_star, "optimal", None
    x0, status = cvar_solve(problem)
    if method == "cvar":
        return x0, status, None
    x, trace = pdca_solve(reformulate_chance(problem), x0, spec.solver_config(_beta_for(spec, method)))
    return x, trace.status, trace


def run_cell(spec: BenchSpec, seed: int, method: str, instance=None) -> dict:
    """One (instance, method) cell.  Failures become status strings."""
    row = {"family": spec.family, "n": spec.n, "m": spec.m, "N": spec.N_effective,
           "alpha": spec.alpha, "method": method, "seed": seed,
           "fval": math.nan, "time_s": math.nan, "prob": math.nan, "status": "", "trace": None}
    t0 = time.perf_counter()
    try:
        inst = instance if instance is not None else make_instance(spec, seed)
        if spec.family == "cardinality":
            x, status, trace = _run_cardinality(spec, inst, method)
            if x is not None:
                row["fval"] = inst.objective(x)
                row["prob"] = float(np.mean(np.abs(x) <= 1e-8))
        else:
            x, status, trace = _run_chance(spec, inst, method)
            row["fval"] = inst.objective(x)
            row["prob"] = in_sample_probability(inst.scenarios, x, PROB_TOL)
        row["status"], row["trace"] = status, trace
    except Exception as exc:  # a failed cell must not abort the table
        row["status"] = f"error:{type(exc).__name__}"
    row["time_s"] = time.perf_counter() - t0
    return row


def run_bench(spec: BenchSpec, keep_traces: bool = False) -> List[dict]:
    """Rows in (seed, method) enumeration order, independent of worker count."""
    def seed_rows(seed):
        try:
            inst = make_instance(spec, seed)
        except Exception:
            inst = None  # each cell retries and records the failure
        return [run_cell(spec, seed, m, inst) for m in spec.methods]

    if spec.workers > 1:
        with ThreadPoolExecutor(spec.workers) as pool:
            per_seed = list(pool.map(seed_rows, spec.seeds))
    else:
        per_seed = [seed_rows(s) for s in spec.seeds]
    rows = [r for block in per_seed for r in block]
    if not keep_traces:
        for r in rows:
            r.pop("trace")
    return rows


def _ok(status: str) -> bool:
    return status in ("optimal", "converged", "max_iter", "time_limit")


def aggregate(rows: List[dict]) -> List[dict]:
    groups = {}
    for r in rows:
        key = tuple(r[k] for k in AGG_FIELDS[:6])
        groups.setdefault(key, []).append(r)
    out = []
    for key, rs in groups.items():
        good = [r for r in rs if _ok(r["status"])]
        mean = lambda k: float(np.mean([r[k] for r in good])) if good else math.nan
        out.append({**dict(zip(AGG_FIELDS[:6], key)), "runs": len(rs), "ok": len(good),
                    "fval_mean": mean("fval"), "time_s_mean": mean("time_s"),
                    "prob_mean": mean("prob")})
    return out


def _fmt(v, timing=True, key=""):
    if key.startswith("time_s") and not timing:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(rows: List[dict], path, fields=ROW_FIELDS, timing: bool = True) -> None:
    """CSV writer; ``timing=False`` blanks wall-clock columns for byte-stable output."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r[k], timing, k) for k in fields])


def write_report(rows: List[dict], out_dir, stem: str = "bench", timing: bool = True):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells, agg = out / f"{stem}.csv", out / f"{stem}_aggregate.csv"
    write_rows(rows, cells, ROW_FIELDS, timing)
    write_rows(aggregate(rows), agg, AGG_FIELDS, timing)
    return cells, agg
