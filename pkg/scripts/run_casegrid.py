"""Observation-parameter case grid (cases 1-7, both sensors).

    python scripts/run_casegrid.py --samples 300 --workers 4
"""

import argparse
from pathlib import Path

from dsctnav.harness import CASES, RunConfig, case_grid_configs, run_case_grid


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--samples", type=int, default=300)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--cases", default=",".join(map(str, CASES)))
    p.add_argument("--out", default="results/casegrid")
    args = p.parse_args()
    cases = [int(c) for c in args.cases.split(",")]
    rows = run_case_grid(case_grid_configs(RunConfig(samples=args.samples), cases), Path(args.out), args.workers)
    print(f"{'case':16s} {'solved':>7s} {'pos err au':>11s} {'time err s':>11s}")
    for r in rows:
        if r["error"]:
            print(f"{r['case']:16s} error: {r['error']}")
        else:
            print(f"{r['case']:16s} {r['solved']:7d} {r['position_error_mean_au']:11.4f} {r['time_error_mean_s']:11.2f}")


if __name__ == "__main__":
    main()
