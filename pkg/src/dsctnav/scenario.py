"""Spacecraft trajectory, observation schedule and simulated measurement sets.

Campaign clock: all schedule times are seconds after ``start_epoch`` (MJD, on
the reference-observatory time scale).  Spacecraft time tags are those true
times minus the clock offset.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .catalog import StarEntry
from .constants import C_AU_S, GM_SUN_AU3_DAY2, OBLIQUITY_J2000_DEG, SECONDS_PER_DAY
from .detector import V_BAND, BandConstants, SensorConfig, sample_signal, signal_to_mag
from .lightcurve import (PhotometricSeries, PulsationMode, StarModel, eval_reference_offset,
                         fit_model)

# ---------------------------------------------------------------------------
# trajectories


def _rot_x(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def solve_kepler(mean_anomaly, e, tol=1e-15):
    """Eccentric anomaly for an elliptic orbit (Newton iteration)."""
    M = math.remainder(mean_anomaly, 2 * math.pi)
    E = M if e < 0.8 else math.pi * math.copysign(1.0, M)
    for _ in range(50):
        dE = (E - e * math.sin(E) - M) / (1 - e * math.cos(E))
        E -= dE
        if abs(dE) < tol:
            break
    return E


@dataclass(frozen=True)
class KeplerOrbit:
    """Heliocentric two-body ellipse.  Angles in degrees; ``frame`` names the
    plane the angles are referred to ("ecliptic" or "equatorial"); positions are
    always returned in the equatorial J2000 frame."""

    a: float
    e: float
    inc: float = 0.0
    raan: float = 0.0
    argp: float = 0.0
    tp: float = 0.0  # time of perihelion, days
    mu: float = GM_SUN_AU3_DAY2
    frame: str = "ecliptic"

    def __post_init__(self):
        if not (self.a > 0 and 0 <= self.e < 1):
            raise ValueError("only elliptic orbits are supported")

    @property
    def period(self) -> float:
        return 2 * math.pi * math.sqrt(self.a**3 / self.mu)

    @property
    def _rotation(self):
        R = _rot_z(math.radians(self.raan)) @ _rot_x(math.radians(self.inc)) @ _rot_z(math.radians(self.argp))
        if self.frame == "ecliptic":
            R = _rot_x(math.radians(OBLIQUITY_J2000_DEG)) @ R
        return R

    def state(self, t: float):
        n = math.sqrt(self.mu / self.a**3)
        E = solve_kepler(n * (t - self.tp), self.e)
        cE, sE = math.cos(E), math.sin(E)
        q = math.sqrt(1 - self.e**2)
        r_pf = np.array([self.a * (cE - self.e), self.a * q * sE, 0.0])
        edot = n / (1 - self.e * cE)
        v_pf = np.array([-self.a * sE * edot, self.a * q * cE * edot, 0.0])
        R = self._rotation
        return R @ r_pf, R @ v_pf

    def position(self, t: float) -> np.ndarray:
        return self.state(t)[0]

    def positions(self, t) -> np.ndarray:
        """Vectorised positions, shape (len(t), 3)."""
        t = np.asarray(t, float)
        n = math.sqrt(self.mu / self.a**3)
        M = np.remainder(n * (t - self.tp) + np.pi, 2 * np.pi) - np.pi
        E = M.copy() if self.e < 0.8 else np.pi * np.sign(M)
        for _ in range(50):
            dE = (E - self.e * np.sin(E) - M) / (1 - self.e * np.cos(E))
            E -= dE
            if np.max(np.abs(dE)) < 1e-15:
                break
        r_pf = np.stack([self.a * (np.cos(E) - self.e), self.a * math.sqrt(1 - self.e**2) * np.sin(E),
                         np.zeros_like(E)], axis=-1)
        return r_pf @ self._rotation.T


@dataclass(frozen=True)
class StaticPosition:
    xyz: tuple[float, float, float]

    def position(self, t: float) -> np.ndarray:
        return np.array(self.xyz, dtype=float)


class TabulatedTrajectory:
    """Cubic interpolation of (t_days, x, y, z) rows; no extrapolation."""

    def __init__(self, times, positions):
        times = np.asarray(times, float)
        positions = np.asarray(positions, float)
        if np.any(np.diff(times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if not np.all(np.isfinite(positions)):
            raise ValueError("trajectory positions must be finite")
        self.times = times
        self.positions = positions
        self._spline = CubicSpline(times, positions, axis=0)

    def position(self, t: float) -> np.ndarray:
        if not self.times[0] <= t <= self.times[-1]:
            raise ValueError(f"t={t} outside trajectory table [{self.times[0]}, {self.times[-1]}]")
        return self._spline(t)

    @classmethod
    def from_file(cls, path):
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        return cls(data[:, 0], data[:, 1:4])


def position_at(traj, t: float) -> np.ndarray:
    return traj.position(t)


def positions_at(traj, t) -> np.ndarray:
    t = np.asarray(t, float)
    if hasattr(traj, "positions"):
        return traj.positions(t)
    return np.array([traj.position(x) for x in t]).reshape(-1, 3)


# A perihelion passage near MJD 60555; not a mission ephemeris.
DEFAULT_ORBIT = KeplerOrbit(a=0.92, e=0.22, inc=3.0, raan=20.0, argp=320.0, tp=60555.0)


def trajectory_from_config(cfg: dict | None, base_dir: Path | None = None):
    if not cfg:
        return DEFAULT_ORBIT
    kind = cfg.get("kind", "kepler")
    if kind == "kepler":
        keys = ("a", "e", "inc", "raan", "argp", "tp", "frame")
        return KeplerOrbit(**{k: cfg[k] for k in keys if k in cfg})
    if kind == "static":
        return StaticPosition(tuple(cfg["position"]))
    if kind == "tabulated":
        p = Path(cfg["path"])
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        return TabulatedTrajectory.from_file(p)
    raise ValueError(f"unknown trajectory kind {kind!r}")


# ---------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class CampaignConfig:
    star_names: tuple[str, ...]
    obs_time_per_star: float = 120.0  # s
    exposure: float = 3.0             # s
    cadence: float = 3.0              # s
    slew_time: float = 60.0           # s
    revisits: int = 20
    start_epoch: float = 60555.0      # MJD
    true_clock_offset: float = 0.0    # s

    def __post_init__(self):
        if self.cadence < self.exposure or self.revisits < 1 or self.obs_time_per_star < self.cadence:
            raise ValueError("need cadence >= exposure, revisits >= 1, obs_time >= cadence")
        if not self.star_names:
            raise ValueError("campaign needs at least one star")

    @property
    def span(self) -> float:
        return self.revisits * len(self.star_names) * (self.obs_time_per_star + self.slew_time)

    @property
    def midpoint_epoch(self) -> float:
        return self.start_epoch + 0.5 * self.span / SECONDS_PER_DAY


def build_schedule(config: CampaignConfig) -> list[tuple[str, float, float]]:
    windows = []
    t = 0.0
    for _ in range(config.revisits):
        for name in config.star_names:
            windows.append((name, t, t + config.obs_time_per_star))
            t += config.obs_time_per_star + config.slew_time
    return windows


def exposure_midtimes(config: CampaignConfig, start: float, end: float) -> np.ndarray:
    k = np.arange(int(math.floor((end - start - config.exposure) / config.cadence + 1e-9)) + 1)
    return start + k * config.cadence + 0.5 * config.exposure


# ---------------------------------------------------------------------------
# measurements


@dataclass
class StarMeasurements:
    name: str
    epoch: float                 # MJD of spacecraft-clock zero
    times: np.ndarray            # s, spacecraft clock
    mags: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        self.mags = np.asarray(self.mags, float)
        self.valid = (np.isfinite(self.mags) if self.valid is None
                      else np.asarray(self.valid, bool) & np.isfinite(self.mags))
        if np.any(np.diff(self.times) <= 0):
            raise ValueError(f"{self.name}: time tags must be strictly increasing")

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    def valid_only(self) -> "StarMeasurements":
        return StarMeasurements(self.name, self.epoch, self.times[self.valid], self.mags[self.valid])

    def shifted(self, seconds: float) -> "StarMeasurements":
        return StarMeasurements(self.name, self.epoch, self.times + seconds, self.mags, self.valid)


@dataclass
class MeasurementSet:
    epoch: float
    stars: dict[str, StarMeasurements] = field(default_factory=dict)

    def __getitem__(self, name):
        return self.stars[name]

    def __iter__(self):
        return iter(self.stars.values())

    def __len__(self):
        return len(self.stars)


def simulate_campaign(traj, config: CampaignConfig, models: dict[str, StarModel] | list[StarModel],
                      sensor: SensorConfig | None, band: BandConstants = V_BAND,
                      rng: np.random.Generator | None = None, *, noise: bool = True,
                      b=(0.0, 0.0, 0.0), read_noise: bool = False) -> MeasurementSet:
    """Observe every scheduled window; magnitudes are taken at exposure mid-times.

    With ``noise=False`` the detector is bypassed and exact model magnitudes
    are recorded.
    """
    if not isinstance(models, dict):
        models = {m.name: m for m in models}
    if noise and (sensor is None or rng is None):
        raise ValueError("noisy simulation needs a sensor and a random generator")
    per_star: dict[str, list] = {name: ([], []) for name in config.star_names}
    for name, start, end in build_schedule(config):
        model = models[name]
        secs = exposure_midtimes(config, start, end)
        true_days = config.start_epoch + secs / SECONDS_PER_DAY
        shifts = (positions_at(traj, true_days) - np.asarray(b, float)) @ model.los / C_AU_S
        mags = eval_reference_offset(model, config.start_epoch, secs + shifts)
        per_star[name][0].append(secs - config.true_clock_offset)
        per_star[name][1].append(np.atleast_1d(mags))

    out = MeasurementSet(config.start_epoch)
    for name, (ts, ms) in per_star.items():
        t = np.concatenate(ts)
        m = np.concatenate(ms)
        if noise:
            counts = sample_signal(m, sensor, band, config.exposure, rng, read_noise)
            m, valid = signal_to_mag(counts, sensor, band, config.exposure)
        else:
            valid = np.ones(len(m), bool)
        if not np.any(valid):
            warnings.warn(f"{name}: no detectable samples", RuntimeWarning, stacklevel=2)
        out.stars[name] = StarMeasurements(name, config.start_epoch, t, m, valid)
    return out


def save_measurements(ms: MeasurementSet, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# epoch_mjd: {float(ms.epoch)!r}\n")
        fh.write("star,time_s,mag,valid\n")
        for sm in ms:
            for t, m, v in zip(sm.times, sm.mags, sm.valid):
                fh.write(f"{sm.name},{float(t)!r},{float(m)!r},{int(v)}\n")


def load_measurements(path) -> MeasurementSet:
    epoch = None
    rows: dict[str, list] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                if key.strip() == "epoch_mjd":
                    epoch = float(val)
                continue
            if line.startswith("star,"):
                continue
            name, t, m, v = line.rsplit(",", 3)
            rows.setdefault(name, []).append((float(t), float(m), v.strip() == "1"))
    if epoch is None:
        raise ValueError(f"{path}: missing epoch_mjd header")
    ms = MeasurementSet(epoch)
    for name, r in rows.items():
        t, m, v = zip(*r)
        ms.stars[name] = StarMeasurements(name, epoch, np.array(t), np.array(m), np.array(v))
    return ms


# ---------------------------------------------------------------------------
# synthetic star models


@dataclass(frozen=True)
class StarSynthesis:
    """Knobs of the synthetic pulsation-spectrum generator."""
    extra_modes: tuple[int, int] = (4, 9)        # inclusive range of secondary modes
    freq_range: tuple[float, float] = (4.0, 30.0)  # cycles/day
    amp_ratio_range: tuple[float, float] = (0.01, 0.5)  # relative to the dominant mode, log-uniform
    min_separation: float = 0.3                  # cycles/day
    survey_span: float = 27.0                    # days
    survey_cadence: float = 20.0 / 1440.0        # days
    survey_noise: float = 5e-4                   # mag
    survey_lead: float = 30.0                    # days between survey midpoint and campaign start


def synthesize_star(entry: StarEntry, rng: np.random.Generator, epoch: float,
                    synth: StarSynthesis = StarSynthesis()) -> StarModel:
    """Full pulsation spectrum for a catalog star: the dominant mode carries
    half the catalog range at the catalog period, secondary modes are random."""
    a1 = entry.amplitude_vmag / 2.0
    freqs = [entry.dominant_frequency]
    amps = [a1]
    n_extra = int(rng.integers(synth.extra_modes[0], synth.extra_modes[1] + 1))
    lo, hi = np.log(synth.amp_ratio_range)
    while len(freqs) < n_extra + 1:
        f = float(rng.uniform(*synth.freq_range))
        if min(abs(f - g) for g in freqs) < synth.min_separation:
            continue
        freqs.append(f)
        amps.append(a1 * float(np.exp(rng.uniform(lo, hi))))
    phases = rng.uniform(0, 2 * math.pi, len(freqs))
    modes = tuple(PulsationMode(a, f, p) for a, f, p in zip(amps, freqs, phases))
    return StarModel(entry.name, entry.max_vmag + entry.amplitude_vmag / 2.0, epoch, modes, entry.los)


def survey_series(model: StarModel, rng: np.random.Generator, midpoint: float,
                  synth: StarSynthesis = StarSynthesis()) -> PhotometricSeries:
    t = midpoint - synth.survey_span / 2 + np.arange(0.0, synth.survey_span, synth.survey_cadence)
    offs = (t - model.epoch) * SECONDS_PER_DAY
    y = eval_reference_offset(model, model.epoch, offs) + rng.normal(0.0, synth.survey_noise, len(t))
    return PhotometricSeries(t, y, model.name)


def make_star_models(entries: list[StarEntry], seed: int, campaign_epoch: float,
                     synth: StarSynthesis = StarSynthesis(), *, truth_cutoff: float = 0.01,
                     onboard_cutoff: float = 0.05, snr_min: float = 4.0):
    """Simulation-truth and onboard models for each star.

    Truth is the generated spectrum cut at ``truth_cutoff``; the onboard model
    is fitted to a noisy survey light curve with ``onboard_cutoff``.
    """
    truth, onboard = {}, {}
    for i, entry in enumerate(entries):
        rng = np.random.default_rng([seed, i])
        survey_mid = campaign_epoch - synth.survey_lead
        full = synthesize_star(entry, rng, survey_mid, synth)
        truth[entry.name] = full.truncated(truth_cutoff)
        series = survey_series(truth[entry.name], rng, survey_mid, synth)
        onboard[entry.name] = fit_model(series, snr_min, onboard_cutoff, entry.los,
                                        name=entry.name, epoch=survey_mid)
    return truth, onboard
