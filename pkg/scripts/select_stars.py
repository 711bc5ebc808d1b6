"""Pick a low-GDOP subset of bright, high-amplitude catalog stars.

Greedy forward selection on the geometric dilution of precision of the
timing design matrix [1, u], followed by single-swap refinement.

    python scripts/select_stars.py --n 10 --vmag-max 6.7 --amp-min 0.08
"""

import argparse

import numpy as np

from dsctnav.catalog import find_stars, load_catalog, select_stars
from dsctnav.harness import DEFAULT_STARS


def gdop(los) -> float:
    A = np.hstack([np.ones((len(los), 1)), np.asarray(los)])
    try:
        return float(np.sqrt(np.trace(np.linalg.inv(A.T @ A))))
    except np.linalg.LinAlgError:
        return np.inf


def choose(entries, n):
    los = [e.los for e in entries]
    chosen = []
    while len(chosen) < n:
        rest = [i for i in range(len(entries)) if i not in chosen]
        # with fewer than four stars GDOP is undefined; seed with spread-out stars
        if len(chosen) < 4:
            def score(i):
                return -min((1 - np.dot(los[i], los[j]) for j in chosen), default=0.0)
        else:
            def score(i):
                return gdop([los[j] for j in chosen + [i]])
        chosen.append(min(rest, key=score))
    improved = True
    while improved:
        improved = False
        best = gdop([los[j] for j in chosen])
        for k in range(n):
            for i in range(len(entries)):
                if i in chosen:
                    continue
                trial = chosen[:k] + [i] + chosen[k + 1:]
                g = gdop([los[j] for j in trial])
                if g < best - 1e-12:
                    chosen, best, improved = trial, g, True
    return [entries[i] for i in chosen]


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--catalog")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--vmag-max", type=float, default=6.7)
    p.add_argument("--amp-min", type=float, default=0.08)
    p.add_argument("--freq-min", type=float, default=0.0)
    args = p.parse_args()
    pool = select_stars(load_catalog(args.catalog), args.vmag_max, args.amp_min, args.freq_min)
    if len(pool) < args.n:
        raise SystemExit(f"only {len(pool)} stars pass the cuts")
    picked = choose(pool, args.n)
    print(f"{len(pool)} candidates, GDOP {gdop([e.los for e in picked]):.3f}")
    for e in picked:
        print(f"  {e.name:12s} V={e.max_vmag:5.2f} amp={e.amplitude_vmag:.3f} f={e.dominant_frequency:6.2f} c/d")
    default = find_stars(load_catalog(args.catalog), list(DEFAULT_STARS))
    print(f"built-in default set GDOP {gdop([e.los for e in default]):.3f}")


if __name__ == "__main__":
    main()
