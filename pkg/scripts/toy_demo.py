"""The 1-d toy instance: CVaR start, pDCA iterations, and the subset oracle.

g(x) = x^2 on [-10, 10], scenarios xi = (1, 2, 5, 9), constraint xi - x <= 0
with alpha = 0.25, so three of the four scenarios must hold.
"""

from dcchance.baselines import cvar_solve, saa_oracle
from dcchance.bench import gen_toy
from dcchance.pdca import SolverConfig, kkt_report, pdca_solve
from dcchance.reform import reformulate_chance


def main():
    problem = gen_toy()
    x0, _ = cvar_solve(problem)
    print(f"CVaR start: x = {x0[0]:.6f}, f = {problem.objective(x0):.6f}")
    program = reformulate_chance(problem)
    x, trace = pdca_solve(program, x0, SolverConfig(beta0=1.0))
    print(f"{'k':>3} {'x':>12} {'f':>12} {'beta':>10} {'lambda':>10} {'fw_gap':>10}")
    for r in trace.records:
        print(f"{r.k:>3} {r.x[0]:>12.8f} {r.f:>12.6f} {r.beta:>10.3g} "
              f"{float(r.multipliers[0]):>10.4g} {r.fw_gap:>10.3g}")
    print(f"pDCA: x = {x[0]:.8f} ({trace.status}), KKT report {kkt_report(program, trace)}")
    ref = saa_oracle(problem)
    print(f"oracle: x = {ref.x_star[0]:.8f}, f = {ref.f_star:.6f}, kept scenarios {ref.subset}")


if __name__ == "__main__":
    main()
