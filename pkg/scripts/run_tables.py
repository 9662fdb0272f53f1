"""Desk-scale benchmark tables: CVaR vs DCA vs two pDCA settings.

Usage: python3 scripts/run_tables.py [SPEC.json] [--out DIR] [--workers K]

Prints one aggregate line per (family, alpha, method) and writes the CSVs
through the same code path as ``dcchance bench``.
"""

import argparse
from pathlib import Path

from dcchance.bench import aggregate, load_specs, run_bench, write_report

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("spec", nargs="?", default=str(ROOT / "instances" / "bench_desk.json"))
    ap.add_argument("--out", default="tables_out")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    rows = []
    for spec in load_specs(args.spec):
        spec.workers = args.workers
        rows += run_bench(spec)
    cells, agg = write_report(rows, args.out)
    print(f"{'family':<20} {'alpha':>5} {'method':<6} {'ok':>5} {'fval':>14} {'time_s':>8} {'prob':>7}")
    for a in aggregate(rows):
        print(f"{a['family']:<20} {a['alpha']:>5} {a['method']:<6} {a['ok']:>2}/{a['runs']:<2} "
              f"{a['fval_mean']:>14.6g} {a['time_s_mean']:>8.3f} {a['prob_mean']:>7.4f}")
    print(f"wrote {cells} and {agg}")


if __name__ == "__main__":
    main()
