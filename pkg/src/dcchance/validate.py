"""Invariant checks behind ``dcchance validate``.

Each check returns ``(passed, detail)``.  ``fast`` runs property checks on small
random instances; ``full`` adds larger sample counts and the oracle sweep.
Subgradients are looked up as ``quantile.subgrad_H`` at call time, so a patched
implementation is what gets checked.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, List, Tuple

import numpy as np

from . import quantile
from .baselines import cvar_solve, saa_oracle
from .bench import gen_random_affine, gen_toy
from .model import AffineMap, ScenarioModel
from .pdca import SolverConfig, pdca_solve
from .qpsolver import QuadraticProgram, lp_solve, qp_solve
from .reform import check_feasibility, reformulate_chance

Check = Callable[[int], Tuple[bool, str]]


def check_quantile_equivalence(count: int) -> Tuple[bool, str]:
    rng = np.random.default_rng(11)
    for t in range(count):
        N = int(rng.integers(2, 201))
        v = rng.normal(size=N)
        if t % 3 == 0:
            v = np.round(v, 1)  # ties
        M = int(rng.integers(1, N))
        G, H = quantile.gh_values(quantile.DcSplit.plain(M, N), v)
        srt = np.sort(v)
        if abs((G - H) - srt[M - 1]) > 1e-12:
            return False, f"G - H != v_[M] on vector {t}"
        k = int(rng.integers(0, N + 1))
        if quantile.top_sum(v, k) != math.fsum(srt[N - k:]):
            return False, f"top_sum differs from the sorted sum on vector {t}"
    return True, f"{count} vectors"


def random_model(rng, n, m, N, d=2):
    maps = tuple(AffineMap(rng.normal(size=n), rng.normal(size=d), rng.normal())
                 for _ in range(m))
    return ScenarioModel(rng.normal(size=(N, d)), maps)


def check_subgradient(count: int, probes: int = 20) -> Tuple[bool, str]:
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(count):
        n, m, N = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(3, 15))
        model = random_model(rng, n, m, N)
        split = quantile.DcSplit.plain(int(rng.integers(1, N)), N)
        x = rng.normal(size=n)
        s = quantile.subgrad_H(model, split, x)
        Hx = quantile.H_value(model, split, x)
        for _ in range(probes):
            y = x + rng.normal(size=n) * rng.choice([1e-3, 1.0, 10.0])
            worst = max(worst, Hx + s @ (y - x) - quantile.H_value(model, split, y))
    if worst > 1e-9:
        return False, f"subgradient convexity inequality violated by {worst:.3e}"
    return True, f"max violation {worst:.1e}"


def check_duality(count: int) -> Tuple[bool, str]:
    rng = np.random.default_rng(13)
    for t in range(count):
        N = int(rng.integers(2, 30))
        C = rng.normal(size=N) * 10
        k = int(rng.integers(1, N + 1))
        # min 1'lam + k mu  s.t.  -lam - mu <= -C, -lam <= 0, over (lam, mu)
        q = np.concatenate([np.ones(N), [k]])
        G = np.vstack([np.hstack([-np.eye(N), -np.ones((N, 1))]),
                       np.hstack([-np.eye(N), np.zeros((N, 1))])])
        h = np.concatenate([-C, np.zeros(N)])
        sol = lp_solve(q, Gineq=G, hineq=h)
        if not sol.ok or abs(sol.objective - quantile.top_sum(C, k)) > 1e-7 * (1 + abs(sol.objective)):
            return False, f"LP dual value differs from top_sum on pair {t}"
    return True, f"{count} pairs"


def enumerate_qp(P, q, G, h):
    """Exact QP optimum by trying every active set; P positive definite."""
    n = q.size
    best = None
    for r in range(min(n, G.shape[0]) + 1):
        for S in itertools.combinations(range(G.shape[0]), r):
            S = list(S)
            K = np.block([[P, G[S].T], [G[S], np.zeros((r, r))]])
            try:
                v = np.linalg.solve(K, np.concatenate([-q, h[S]]))
            except np.linalg.LinAlgError:
                continue
            x, lam = v[:n], v[n:]
            if np.all(G @ x <= h + 1e-9) and np.all(lam >= -1e-9):
                f = 0.5 * x @ P @ x + q @ x
                if best is None or f < best[1]:
                    best = (x, f)
    return best


def check_qp(count: int) -> Tuple[bool, str]:
    rng = np.random.default_rng(14)
    for t in range(count):
        n, mi = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        L = rng.normal(size=(n, n))
        P = L @ L.T + 0.1 * np.eye(n)
        q = rng.normal(size=n)
        G = rng.normal(size=(mi, n))
        h = rng.uniform(0.1, 2.0, mi)  # origin strictly feasible
        ref = enumerate_qp(P, q, G, h)
        sol = qp_solve(QuadraticProgram(P, q, None, None, G, h))
        if not sol.ok or abs(sol.objective - ref[1]) > 1e-6 or max(sol.residuals[:2]) > 1e-6:
            return False, f"QP {t}: status {sol.status}, objective {sol.objective} vs {ref[1]}"
    return True, f"{count} QPs"


def check_toy(_count: int) -> Tuple[bool, str]:
    problem = gen_toy()
    x0, _ = cvar_solve(problem)
    x, trace = pdca_solve(reformulate_chance(problem), x0, SolverConfig(beta0=1.0))
    if abs(x[0] - 5.0) > 1e-6 or any(r.x[0] < 5.0 - 1e-6 for r in trace.records):
        return False, f"toy run ended at {x[0]}"
    if trace.fw_violation() > 0:
        return False, "FW telescoping bound violated on the toy run"
    return True, f"x = {x[0]:.8f}"


def check_cvar_chain(count: int) -> Tuple[bool, str]:
    for seed in range(count):
        problem = gen_random_affine(2, 2, 12, seed, alpha=0.25)
        x0, _ = cvar_solve(problem)
        program = reformulate_chance(problem)
        if not check_feasibility(program, x0).feasible:
            return False, f"CVaR point infeasible on seed {seed}"
        x, _ = pdca_solve(program, x0, SolverConfig(beta0=1.0))
        if problem.objective(x) > problem.objective(x0) + 1e-9:
            return False, f"pDCA worse than its CVaR start on seed {seed}"
    return True, f"{count} seeds"


def check_lestimator(count: int) -> Tuple[bool, str]:
    for N in range(3, 3 + count):
        for M in range(2, N):
            w = quantile.l1_weights(M / N, N)
            plain = np.zeros(N)
            plain[M - 1] = 1.0
            if not np.array_equal(w, plain):
                return False, f"l1 weights differ from e_M at N={N}, M={M}"
    return True, f"N = 3..{count + 2}"


def check_oracle_sweep(count: int) -> Tuple[bool, str]:
    for seed in range(count):
        problem = gen_random_affine(2, 2, 8, seed, alpha=0.25)
        ref = saa_oracle(problem)
        x0, _ = cvar_solve(problem)
        x, _ = pdca_solve(reformulate_chance(problem), x0, SolverConfig(beta0=1.0))
        if problem.objective(x) < ref.f_star - 1e-6:
            return False, f"pDCA beat the global oracle on seed {seed}"
    return True, f"{count} instances"


FAST: List[Tuple[str, Check, int]] = [
    ("quantile-equivalence", check_quantile_equivalence, 200),
    ("subgradient-convexity", check_subgradient, 30),
    ("duality-identity", check_duality, 30),
    ("qp-vs-enumeration", check_qp, 20),
    ("pdca-toy", check_toy, 1),
    ("cvar-chain", check_cvar_chain, 5),
    ("lestimator-consistency", check_lestimator, 20),
]
FULL: List[Tuple[str, Check, int]] = [
    ("quantile-equivalence", check_quantile_equivalence, 1000),
    ("subgradient-convexity", check_subgradient, 200),
    ("duality-identity", check_duality, 200),
    ("qp-vs-enumeration", check_qp, 100),
    ("pdca-toy", check_toy, 1),
    ("cvar-chain", check_cvar_chain, 20),
    ("lestimator-consistency", check_lestimator, 40),
    ("oracle-sweep", check_oracle_sweep, 10),
]


def run(level: str = "fast", out=print) -> bool:
    """Run the checks for ``level`` and print one line each; True if all pass."""
    checks = {"fast": FAST, "full": FULL}[level]
    passed = 0
    for name, fn, count in checks:
        try:
            ok, detail = fn(count)
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        passed += ok
        out(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    out(f"{passed}/{len(checks)} checks passed")
    return passed == len(checks)
