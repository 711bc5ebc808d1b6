"""End-to-end runs: one navigation instance, Monte Carlo campaigns, the
observation-parameter case grid, and report emission."""

from __future__ import annotations

import csv
import dataclasses
import functools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .catalog import find_stars, load_catalog
from .constants import C_AU_S
from .detector import sensor_preset
from .estimation import EstimationError, ToaCandidate, enumerate_candidates
from .lightcurve import StarModel
from .navsolver import (SearchRegion, SearchSettings, SolverError, ambiguity_search,
                        covariance_ellipse, select_solution)
from .scenario import (CampaignConfig, MeasurementSet, StarSynthesis, make_star_models, positions_at,
                       simulate_campaign, trajectory_from_config)

# Ten bright, high-amplitude stars spread over the sky.  GDOP 1.022, within 1% of
# the greedy optimum found by scripts/select_stars.py.
DEFAULT_STARS = ("OX Aur", "del Sct", "rho Pup", "del Del", "WZ Scl", "tet Tuc",
                 "V0784 Cas", "FM Vir", "V0386 Per", "FM Com")

# (observation time per star s, exposure s, revisits)
CASES = {
    1: (120.0, 3.0, 20),
    2: (240.0, 3.0, 10),
    3: (480.0, 3.0, 5),
    4: (120.0, 2.0, 20),
    5: (120.0, 1.0, 20),
    6: (120.0, 3.0, 10),
    7: (120.0, 3.0, 30),
}


@dataclass(frozen=True)
class RunConfig:
    name: str = "nominal"
    sensor: str = "mapcam"
    stars: tuple[str, ...] = DEFAULT_STARS
    obs_time: float = 120.0
    exposure: float = 3.0
    cadence: float = 3.0
    slew_time: float = 60.0
    revisits: int = 20
    samples: int = 100
    base_seed: int = 0
    model_seed: int = 7
    start_epoch: float = 60555.0
    trajectory: dict | None = None
    catalog: str | None = None
    region_center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    region_radius: float = 40.0
    region_half_width: float = 10 * 86400.0
    # true clock offsets are drawn uniformly from +-this fraction of the time half-width
    clock_offset_span: float = 0.9
    noise: bool = True
    onboard: str = "fitted"            # "fitted" or "truth"
    max_objective_ratio: float | None = 2.0
    sigma_method: str = "windowed"
    model_error: bool = True
    output_dir: str = "results"

    def __post_init__(self):
        object.__setattr__(self, "stars", tuple(self.stars))
        object.__setattr__(self, "region_center", tuple(float(x) for x in self.region_center))
        if self.samples < 1:
            raise ValueError("sample count must be at least 1")
        if len(self.stars) < 4:
            raise ValueError("need at least four stars")
        if self.onboard not in ("fitted", "truth"):
            raise ValueError(f"onboard must be 'fitted' or 'truth', got {self.onboard!r}")
        if not 0 <= self.clock_offset_span <= 1:
            raise ValueError("clock_offset_span must lie in [0, 1]")
        if self.catalog is not None and not Path(self.catalog).is_file():
            raise FileNotFoundError(f"catalog not found: {self.catalog}")
        traj = self.trajectory or {}
        if traj.get("kind") == "tabulated" and not Path(traj["path"]).is_file():
            raise FileNotFoundError(f"trajectory table not found: {traj['path']}")
        # fail early on bad names
        sensor_preset(self.sensor)
        CampaignConfig(self.stars, self.obs_time, self.exposure, self.cadence, self.slew_time, self.revisits)

    @property
    def region(self) -> SearchRegion:
        return SearchRegion(self.region_center, self.region_radius, 0.0, self.region_half_width)

    def campaign(self, clock_offset: float = 0.0) -> CampaignConfig:
        return CampaignConfig(self.stars, self.obs_time, self.exposure, self.cadence, self.slew_time,
                              self.revisits, self.start_epoch, clock_offset)

    def with_case(self, case: int, sensor: str | None = None) -> "RunConfig":
        obs, exp, rev = CASES[case]
        return dataclasses.replace(self, name=f"case{case}-{sensor or self.sensor}", obs_time=obs,
                                   exposure=exp, revisits=rev, sensor=sensor or self.sensor)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stars"] = list(self.stars)
        d["region_center"] = list(self.region_center)
        return d


def load_run_config(path, **overrides) -> RunConfig:
    path = Path(path)
    data = yaml.safe_load(path.read_text()) or {}
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    # relative file references resolve against the config's directory
    for key in ("catalog",):
        if data.get(key) and not Path(data[key]).is_absolute():
            data[key] = str(path.parent / data[key])
    traj = data.get("trajectory")
    if traj and traj.get("path") and not Path(traj["path"]).is_absolute():
        data["trajectory"] = {**traj, "path": str(path.parent / traj["path"])}
    return RunConfig(**data)


@functools.lru_cache(maxsize=8)
def _models_cached(stars, model_seed, start_epoch, catalog):
    entries = find_stars(load_catalog(catalog), list(stars))
    return make_star_models(entries, model_seed, start_epoch, StarSynthesis())


def star_models(config: RunConfig) -> tuple[dict[str, StarModel], dict[str, StarModel]]:
    """(truth, onboard) models for the configured stars; cached per process."""
    truth, fitted = _models_cached(config.stars, config.model_seed, config.start_epoch, config.catalog)
    return truth, (truth if config.onboard == "truth" else fitted)


# ---------------------------------------------------------------------------
# single instance


@dataclass
class InstanceRecord:
    seed: int
    solved: bool
    position_error: float        # au, nan if unsolved
    time_error: float            # s, signed estimate - truth
    clock_offset_true: float     # s
    clock_offset_est: float      # s
    position_est: tuple[float, float, float]
    residual_norm: float
    n_solutions: int
    candidate_counts: tuple[int, ...]
    covariance: np.ndarray | None = field(default=None, repr=False)
    message: str = ""
    runtime: float = field(default=0.0, compare=False)

    def same_as(self, other: "InstanceRecord") -> bool:
        """Equality ignoring runtime, with NaN == NaN."""
        a, b = dataclasses.asdict(self), dataclasses.asdict(other)
        a.pop("runtime"), b.pop("runtime")
        ca, cb = a.pop("covariance"), b.pop("covariance")
        if (ca is None) != (cb is None) or (ca is not None and not np.array_equal(ca, cb)):
            return False
        return json.dumps(a, default=str) == json.dumps(b, default=str)


def enumerate_all(ms: MeasurementSet, models: dict[str, StarModel], names, region: SearchRegion,
                  *, max_objective_ratio=2.0, sigma_method="windowed",
                  model_error=True) -> list[list[ToaCandidate]]:
    sets = []
    for name in names:
        model = models[name]
        try:
            cands = enumerate_candidates(ms[name], model, region.shift_window(model.los),
                                         max_objective_ratio=max_objective_ratio,
                                         sigma_method=sigma_method, model_error=model_error)
        except EstimationError:
            cands = []
        sets.append(cands)
    return sets


def solve_candidates(sets, models, names, region, b=(0.0, 0.0, 0.0),
                     settings: SearchSettings = SearchSettings()):
    """Ambiguity search over stars that produced candidates.

    Returns (selected solution or None, all solutions, message)."""
    usable = [i for i, s in enumerate(sets) if s]
    if len(usable) < 4:
        return None, [], "fewer than four stars with candidates"
    los = [models[names[i]].los for i in usable]
    try:
        sols = ambiguity_search([sets[i] for i in usable], los, b, region, settings)
        return select_solution(sols), sols, ""
    except SolverError as exc:
        return None, [], str(exc)


def run_single(config: RunConfig, seed: int, models=None) -> InstanceRecord:
    t0 = time.perf_counter()
    truth, onboard = models if models is not None else star_models(config)
    rng = np.random.default_rng(seed)
    toff = float(rng.uniform(-1, 1) * config.clock_offset_span * config.region_half_width)
    campaign = config.campaign(toff)
    traj = trajectory_from_config(config.trajectory)
    sensor = sensor_preset(config.sensor)
    ms = simulate_campaign(traj, campaign, truth, sensor, rng=rng, noise=config.noise)
    region = config.region
    sets = enumerate_all(ms, onboard, config.stars, region, max_objective_ratio=config.max_objective_ratio,
                         sigma_method=config.sigma_method, model_error=config.model_error)
    sol, sols, msg = solve_candidates(sets, onboard, config.stars, region)
    p_true = positions_at(traj, [campaign.midpoint_epoch])[0]
    counts = tuple(len(s) for s in sets)
    if sol is None:
        return InstanceRecord(seed, False, math.nan, math.nan, toff, math.nan, (math.nan,) * 3, math.nan,
                              len(sols), counts, None, msg or "ambiguity unresolved",
                              time.perf_counter() - t0)
    return InstanceRecord(seed, True, float(np.linalg.norm(sol.position - p_true)), sol.clock_offset - toff,
                          toff, sol.clock_offset, tuple(float(x) for x in sol.position), sol.residual_norm,
                          len(sols), counts, sol.covariance, "", time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass
class MonteCarloReport:
    config: RunConfig
    records: list[InstanceRecord]
    aggregates: dict
    numerical_ellipse: tuple[np.ndarray, np.ndarray] | None
    analytic_ellipse: tuple[np.ndarray, np.ndarray] | None


def _projected_covariance(cov: np.ndarray) -> np.ndarray:
    """(clock offset s, position along its major axis au) block of a 4x4 state covariance."""
    _, v = np.linalg.eigh(cov[1:, 1:])
    J = np.zeros((2, 4))
    J[0, 0] = 1.0 / C_AU_S
    J[1, 1:] = v[:, -1]
    return J @ cov @ J.T


def aggregate(records: list[InstanceRecord]) -> dict:
    ok = [r for r in records if r.solved]
    pos = np.array([r.position_error for r in ok])
    tim = np.array([r.time_error for r in ok])

    def stat(x, fn):
        if fn is np.std:
            return float(np.std(x, ddof=1)) if len(x) > 1 else None
        return float(fn(x)) if len(x) else None

    return {
        "samples": len(records),
        "solved": len(ok),
        "position_error_mean": stat(pos, np.mean),
        "position_error_std": stat(pos, np.std),
        "time_error_mean": stat(tim, np.mean),
        "time_error_std": stat(tim, np.std),
        "abs_time_error_mean": stat(np.abs(tim), np.mean),
    }


def monte_carlo_report(config: RunConfig, records: list[InstanceRecord], nsigma: float = 3.0) -> MonteCarloReport:
    records = sorted(records, key=lambda r: r.seed)
    agg = aggregate(records)
    ok = [r for r in records if r.solved]
    numerical = analytic = None
    if len(ok) >= 3:
        pts = np.array([[r.time_error, r.position_error] for r in ok])
        numerical = covariance_ellipse(np.cov(pts.T), nsigma, center=tuple(pts.mean(0)))
    if ok:
        mean_cov = np.mean([_projected_covariance(r.covariance) for r in ok], axis=0)
        analytic = covariance_ellipse(mean_cov, nsigma)
    return MonteCarloReport(config, records, agg, numerical, analytic)


def _run_chunk(args):
    config, seeds = args
    models = star_models(config)
    return [run_single(config, s, models) for s in seeds]


def run_monte_carlo(config: RunConfig, workers: int = 1) -> MonteCarloReport:
    seeds = [config.base_seed + i for i in range(config.samples)]
    if workers <= 1:
        models = star_models(config)
        records = [run_single(config, s, models) for s in seeds]
    else:
        chunks = [(config, seeds[k::workers]) for k in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            records = [r for chunk in pool.map(_run_chunk, chunks) for r in chunk]
    return monte_carlo_report(config, records)


# ---------------------------------------------------------------------------
# reports

INSTANCE_COLUMNS = ("seed", "solved", "position_error_au", "time_error_s", "clock_offset_true_s",
                    "clock_offset_est_s", "x_au", "y_au", "z_au", "residual_norm", "n_solutions",
                    "candidate_counts", "message")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else "nan"
    return str(x)


def instance_row(r: InstanceRecord) -> list[str]:
    vals = (r.seed, r.solved, r.position_error, r.time_error, r.clock_offset_true, r.clock_offset_est,
            *r.position_est, r.residual_norm, r.n_solutions, " ".join(map(str, r.candidate_counts)), r.message)
    return [_fmt(float(v) if isinstance(v, np.floating) else v) for v in vals]


def _write_csv(path: Path, header, rows):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def emit_reports(report: MonteCarloReport, outdir, *, timing: bool = True) -> list[Path]:
    """Write instances.csv, the ellipse polylines and summary.json under ``outdir``.

    Per-instance runtimes go to timing.csv, the only file that differs between
    otherwise identical runs.
    """
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc}") from exc
    files = [out / "instances.csv"]
    _write_csv(files[0], INSTANCE_COLUMNS, [instance_row(r) for r in report.records])
    for label, ell in (("numerical", report.numerical_ellipse), ("analytic", report.analytic_ellipse)):
        if ell is not None:
            p = out / f"ellipse_{label}.csv"
            _write_csv(p, ("time_error_s", "position_error_au"),
                       [(_fmt(float(x)), _fmt(float(y))) for x, y in zip(*ell)])
            files.append(p)
    summary = {"config": report.config.to_dict(), "aggregates": report.aggregates}
    p = out / "summary.json"
    try:
        p.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {p}: {exc}") from exc
    files.append(p)
    if timing:
        p = out / "timing.csv"
        _write_csv(p, ("seed", "runtime_s"), [(r.seed, f"{r.runtime:.6f}") for r in report.records])
        files.append(p)
    return files


def read_instances(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# case grid

GRID_COLUMNS = ("sensor", "case", "obs_time_s", "exposure_s", "revisits", "position_error_mean_au",
                "position_error_std_au", "time_error_mean_s", "time_error_std_s", "solved", "samples", "error")


def run_case_grid(configs: list[RunConfig], outdir=None, workers: int = 1) -> list[dict]:
    """One row per config; a failing case is recorded and the grid carries on."""
    rows = []
    for cfg in configs:
        row = {"sensor": cfg.sensor, "case": cfg.name, "obs_time_s": cfg.obs_time, "exposure_s": cfg.exposure,
               "revisits": cfg.revisits, "samples": cfg.samples, "error": ""}
        try:
            rep = run_monte_carlo(cfg, workers)
            a = rep.aggregates
            row.update(position_error_mean_au=a["position_error_mean"], position_error_std_au=a["position_error_std"],
                       time_error_mean_s=a["time_error_mean"], time_error_std_s=a["time_error_std"],
                       solved=a["solved"])
            if outdir is not None:
                emit_reports(rep, Path(outdir) / cfg.name)
        except Exception as exc:  # noqa: BLE001 - recorded per case
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    if outdir is not None:
        Path(outdir).mkdir(parents=True, exist_ok=True)
        _write_csv(Path(outdir) / "casegrid.csv", GRID_COLUMNS,
                   [[_fmt(row.get(c)) for c in GRID_COLUMNS] for row in rows])
    return rows


def case_grid_configs(base: RunConfig, cases=tuple(CASES), sensors=("mapcam", "polycam")) -> list[RunConfig]:
    return [base.with_case(c, s) for s in sensors for c in cases]
