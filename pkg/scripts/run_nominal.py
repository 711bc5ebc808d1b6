"""Nominal Monte Carlo for both sensors; writes reports under results/.

    python scripts/run_nominal.py --samples 300 --workers 4
"""

import argparse
import json
from pathlib import Path

from dsctnav.harness import emit_reports, load_run_config, run_monte_carlo

CONFIGS = Path(__file__).parents[1] / "configs"


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--samples", type=int, default=300)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="results")
    args = p.parse_args()
    for sensor in ("mapcam", "polycam"):
        cfg = load_run_config(CONFIGS / f"nominal_{sensor}.yaml", samples=args.samples)
        rep = run_monte_carlo(cfg, args.workers)
        emit_reports(rep, Path(args.out) / cfg.name)
        print(sensor, json.dumps(rep.aggregates, sort_keys=True))


if __name__ == "__main__":
    main()
