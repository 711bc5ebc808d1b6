"""Command-line entry point: ``python -m dsctnav <verb> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .catalog import CatalogError, find_stars, load_catalog
from .estimation import EstimationError, oc_analysis
from .lightcurve import FitError, fit_model, load_models, load_series, save_models
from .scenario import (StarMeasurements, load_measurements, positions_at, save_measurements,
                       simulate_campaign, trajectory_from_config)
from .detector import sensor_preset

log = logging.getLogger("dsctnav")


def _config(args) -> harness.RunConfig:
    over = {"samples": getattr(args, "samples", None), "base_seed": getattr(args, "seed", None),
            "sensor": getattr(args, "sensor", None), "output_dir": getattr(args, "out", None)}
    if args.config:
        return harness.load_run_config(args.config, **over)
    return harness.RunConfig(**{k: v for k, v in over.items() if v is not None})


def cmd_catalog_validate(args) -> int:
    entries = load_catalog(args.catalog)
    print(f"{len(entries)} entries OK")
    return 0


def cmd_model_fit(args) -> int:
    series = load_series(args.series)
    name = args.name or series.source_label
    entry = find_stars(load_catalog(args.catalog), [name])[0]
    model = fit_model(series, args.snr_min, args.cutoff, entry.los, name=name)
    save_models([model], args.out)
    print(f"{name}: {len(model.modes)} modes -> {args.out}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    truth, onboard = harness.star_models(cfg)
    rng = np.random.default_rng(cfg.base_seed)
    toff = float(rng.uniform(-1, 1) * cfg.clock_offset_span * cfg.region_half_width)
    campaign = cfg.campaign(toff)
    traj = trajectory_from_config(cfg.trajectory)
    ms = simulate_campaign(traj, campaign, truth, sensor_preset(cfg.sensor), rng=rng, noise=cfg.noise)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_measurements(ms, out / "measurements.csv")
    save_models([onboard[n] for n in cfg.stars], out / "onboard_models.json")
    save_models([truth[n] for n in cfg.stars], out / "truth_models.json")
    p = positions_at(traj, [campaign.midpoint_epoch])[0]
    (out / "truth.json").write_text(json.dumps(
        {"seed": cfg.base_seed, "clock_offset_s": toff, "position_au": [float(x) for x in p],
         "midpoint_mjd": campaign.midpoint_epoch}, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out}")
    return 0


def cmd_solve(args) -> int:
    cfg = _config(args)
    ms = load_measurements(args.measurements)
    models = {m.name: m for m in load_models(args.models)}
    names = [n for n in cfg.stars if n in ms.stars] if args.config else list(ms.stars)
    missing = [n for n in names if n not in models]
    if missing:
        raise KeyError(f"no model for {missing}")
    region = cfg.region
    sets = harness.enumerate_all(ms, models, names, region, max_objective_ratio=cfg.max_objective_ratio,
                                 sigma_method=cfg.sigma_method, model_error=cfg.model_error)
    sol, sols, msg = harness.solve_candidates(sets, models, names, region)
    if sol is None:
        print(f"error: {msg}", file=sys.stderr)
        return 3
    used = [n for n, s in zip(names, sets) if s]
    doc = {"clock_offset_s": sol.clock_offset, "position_au": [float(x) for x in sol.position],
           "covariance": sol.covariance.tolist(), "residual_norm": sol.residual_norm,
           "stars": used, "delta_t_s": list(sol.delta_t), "n_solutions": len(sols),
           "region": dataclasses.asdict(region)}
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_montecarlo(args) -> int:
    cfg = _config(args)
    rep = harness.run_monte_carlo(cfg, args.workers)
    harness.emit_reports(rep, cfg.output_dir)
    print(json.dumps(rep.aggregates, indent=2, sort_keys=True))
    return 0


def cmd_casegrid(args) -> int:
    cfg = _config(args)
    cases = [int(c) for c in args.cases.split(",")]
    sensors = args.sensors.split(",")
    rows = harness.run_case_grid(harness.case_grid_configs(cfg, cases, sensors), cfg.output_dir, args.workers)
    for r in rows:
        print(r["case"], r.get("solved"), r.get("position_error_mean_au"), r.get("time_error_mean_s"), r["error"])
    return 0 if not any(r["error"] for r in rows) else 4


def cmd_oc(args) -> int:
    series = load_series(args.series)
    models = {m.name: m for m in load_models(args.models)}
    name = args.name or series.source_label
    model = models[name]
    y = series.as_magnitudes(model.mean_mag)
    seg_id = np.floor((series.times - series.times[0]) / args.segment_days).astype(int)
    segments = []
    for k in np.unique(seg_id):
        sel = seg_id == k
        epoch = float(series.times[sel][0])
        segments.append(StarMeasurements(name, epoch, (series.times[sel] - epoch) * 86400.0, y[sel]))
    oc = oc_analysis(segments, model)
    rows = ["epoch_mjd,o_minus_c_s"] + [f"{float(e)!r},{float(v)!r}" for e, v in zip(oc.epochs, oc.o_minus_c)]
    if args.out:
        Path(args.out).write_text("\n".join(rows) + "\n")
    print(f"slope {oc.slope:.6g} s/day, detrended sigma {oc.detrended_sigma:.6g} s, "
          f"{len(oc.flagged)} flagged segments")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dsctnav", description="Navigation from delta Scuti star light curves.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    cat = sub.add_parser("catalog", help="catalog tools").add_subparsers(dest="action", required=True)
    v = cat.add_parser("validate", help="parse and check a catalog file")
    v.add_argument("--catalog", help="CSV path (default: bundled table)")
    v.set_defaults(func=cmd_catalog_validate)

    mod = sub.add_parser("model", help="light-curve models").add_subparsers(dest="action", required=True)
    f = mod.add_parser("fit", help="fit a pulsation model to a photometric series")
    f.add_argument("--series", required=True)
    f.add_argument("--name", help="catalog name (default: the series label)")
    f.add_argument("--catalog")
    f.add_argument("--snr-min", type=float, default=4.0)
    f.add_argument("--cutoff", type=float, default=0.05, help="amplitude cutoff relative to the strongest mode")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_model_fit)

    def run_opts(sp, out_required=False):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--sensor")
        sp.add_argument("--out", required=out_required, help="output directory")

    s = sub.add_parser("simulate", help="simulate one observation campaign")
    run_opts(s, True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("solve", help="solve position and clock offset from measurements")
    s.add_argument("--config")
    s.add_argument("--measurements", required=True)
    s.add_argument("--models", required=True)
    s.add_argument("--out", help="write the solution JSON here")
    s.set_defaults(func=cmd_solve)

    for verb, func, helptext in (("montecarlo", cmd_montecarlo, "Monte Carlo campaign"),
                                 ("casegrid", cmd_casegrid, "observation-parameter case grid")):
        s = sub.add_parser(verb, help=helptext)
        run_opts(s)
        s.add_argument("--samples", type=int)
        s.add_argument("--workers", type=int, default=1)
        if verb == "casegrid":
            s.add_argument("--cases", default=",".join(map(str, harness.CASES)))
            s.add_argument("--sensors", default="mapcam,polycam")
        s.set_defaults(func=func)

    s = sub.add_parser("oc", help="O-C timing analysis of a long photometric series")
    s.add_argument("--series", required=True)
    s.add_argument("--models", required=True)
    s.add_argument("--name")
    s.add_argument("--segment-days", type=float, default=1.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_oc)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CatalogError, FitError, EstimationError, FileNotFoundError, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
