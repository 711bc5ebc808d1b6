"""Multi-mode sinusoidal light-curve models.

Times handed to the evaluators are in days on the reference-observatory time
scale; light-time shifts are computed in seconds and converted at the boundary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .constants import C_AU_S, SECONDS_PER_DAY

TWO_PI = 2.0 * math.pi


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class PulsationMode:
    amplitude: float  # mag
    frequency: float  # cycles/day
    phase: float  # rad, [0, 2pi)

    def __post_init__(self):
        if self.amplitude < 0 or not self.frequency > 0:
            raise ValueError(f"invalid pulsation mode {self}")
        if not 0.0 <= self.phase < TWO_PI:
            object.__setattr__(self, "phase", float(self.phase % TWO_PI))


@dataclass(frozen=True)
class StarModel:
    name: str
    mean_mag: float
    epoch: float  # days
    modes: tuple[PulsationMode, ...]
    los: np.ndarray = field(compare=False)
    # rms (mag) of modes known to exist but left out of the model
    unmodeled_rms: float = 0.0

    def __post_init__(self):
        if not self.modes:
            raise ValueError(f"{self.name}: a star model needs at least one mode")
        modes = tuple(sorted(self.modes, key=lambda m: -m.amplitude))
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "los", np.asarray(self.los, dtype=float))

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([m.amplitude for m in self.modes])

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([m.frequency for m in self.modes])

    @property
    def phases(self) -> np.ndarray:
        return np.array([m.phase for m in self.modes])

    @property
    def shortest_period_s(self) -> float:
        return SECONDS_PER_DAY / float(self.frequencies.max())

    def truncated(self, amp_cutoff: float) -> "StarModel":
        """Drop modes weaker than ``amp_cutoff`` times the strongest one."""
        floor = amp_cutoff * self.modes[0].amplitude
        keep = tuple(m for m in self.modes if m.amplitude >= floor)
        dropped = sum(m.amplitude**2 / 2 for m in self.modes if m.amplitude < floor)
        return StarModel(self.name, self.mean_mag, self.epoch, keep, self.los,
                         math.sqrt(self.unmodeled_rms**2 + dropped))


def eval_reference(model: StarModel, t):
    """Magnitude seen at the reference observatory at time ``t`` (days)."""
    t = np.asarray(t, dtype=float)
    arg = TWO_PI * np.multiply.outer(t - model.epoch, model.frequencies) + model.phases
    out = model.mean_mag + np.sin(arg) @ model.amplitudes
    return float(out) if out.ndim == 0 else out


def eval_reference_offset(model: StarModel, epoch: float, seconds):
    """Same as :func:`eval_reference` at ``epoch + seconds/86400``, keeping the
    sub-day part in seconds so long baselines don't lose precision."""
    seconds = np.asarray(seconds, dtype=float)
    cycles = np.multiply.outer(seconds / SECONDS_PER_DAY, model.frequencies)
    cycles += (epoch - model.epoch) * model.frequencies
    out = model.mean_mag + np.sin(TWO_PI * cycles + model.phases) @ model.amplitudes
    return float(out) if out.ndim == 0 else out


def eval_reference_rate(model: StarModel, epoch: float, seconds):
    """Time derivative of the reference light curve, mag/s."""
    seconds = np.asarray(seconds, dtype=float)
    cycles = np.multiply.outer(seconds / SECONDS_PER_DAY, model.frequencies)
    cycles += (epoch - model.epoch) * model.frequencies
    w = TWO_PI * model.frequencies / SECONDS_PER_DAY
    return np.cos(TWO_PI * cycles + model.phases) @ (model.amplitudes * w)


def light_time_shift(los, p, b=(0.0, 0.0, 0.0)) -> float:
    """Seconds by which the signal reaches ``b`` after reaching ``p``: u.(p - b)/c."""
    return float(np.dot(los, np.asarray(p, float) - np.asarray(b, float))) / C_AU_S


def eval_observer(model: StarModel, t, p, b=(0.0, 0.0, 0.0)):
    """Magnitude seen by an observer at ``p`` (au) at time ``t`` (days)."""
    return eval_reference(model, np.asarray(t, dtype=float) + light_time_shift(model.los, p, b) / SECONDS_PER_DAY)


def los_timing_error_bound(theta: float, range_au: float) -> float:
    """Upper bound (s) on the timing error from a line of sight misaligned by ``theta`` rad."""
    if theta < 0 or range_au < 0:
        raise ValueError("theta and range must be non-negative")
    return theta * range_au / C_AU_S


def exact_los_timing_error(u_assumed, u_true, r_au) -> float:
    return float(np.dot(np.asarray(u_assumed) - np.asarray(u_true), r_au)) / C_AU_S


# ---------------------------------------------------------------------------
# photometric series and model fitting


@dataclass
class PhotometricSeries:
    times: np.ndarray  # days
    values: np.ndarray
    source_label: str = ""
    kind: str = "magnitude"  # or "flux"
    time_scale: str = "TDB"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape or self.times.ndim != 1:
            raise ValueError("times and values must be 1-D arrays of equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")
        if self.kind not in ("magnitude", "flux"):
            raise ValueError(f"unknown value kind {self.kind!r}")

    def as_magnitudes(self, mean_mag: float = 0.0) -> np.ndarray:
        if self.kind == "magnitude":
            return self.values
        return mean_mag - 2.5 * np.log10(self.values / np.median(self.values))


def amplitude_spectrum(t, y, freqs, block: int = 256):
    """Semi-amplitude spectrum (units of y) of mean-subtracted data on an evenly
    spaced grid in cycles/day; the classical DFT amplitude spectrum used in
    prewhitening work.

    Phasors for a block of frequencies are shared across blocks, so the cost is
    one complex matrix-vector product per block.
    """
    t = np.asarray(t, float)
    y = np.asarray(y, float) - np.mean(y)
    freqs = np.asarray(freqs, float)
    df = freqs[1] - freqs[0] if len(freqs) > 1 else 0.0
    tc = t - t.mean()
    steps = np.exp(-1j * TWO_PI * df * np.multiply.outer(np.arange(block), tc))
    out = np.empty(len(freqs))
    for start in range(0, len(freqs), block):
        n = min(block, len(freqs) - start)
        base = y * np.exp(-1j * TWO_PI * freqs[start] * tc)
        out[start:start + n] = np.abs(steps[:n] @ base)
    return 2.0 * out / len(t)


def _local_snr(freqs, amps, k, timespan, half_window=5.0):
    f0 = freqs[k]
    sel = (np.abs(freqs - f0) <= half_window) & (np.abs(freqs - f0) > 1.0 / timespan)
    if not np.any(sel):
        return math.inf
    noise = np.median(amps[sel])
    return amps[k] / noise if noise > 0 else math.inf


def _design(t, freqs):
    arg = TWO_PI * np.multiply.outer(t, freqs)
    return np.hstack([np.ones((len(t), 1)), np.sin(arg), np.cos(arg)])


def _linear_fit(t, y, freqs):
    X = _design(t, freqs)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef


def _joint_fit(t, y, freqs):
    """Least squares over all frequencies plus their sin/cos coefficients."""
    k = len(freqs)
    coef = _linear_fit(t, y, freqs)
    x0 = np.concatenate([freqs, coef])

    def resid(x):
        return _design(t, x[:k]) @ x[k:] - y

    def jac(x):
        f, c = x[:k], x[k:]
        arg = TWO_PI * np.multiply.outer(t, f)
        s, co = np.sin(arg), np.cos(arg)
        J = np.empty((len(t), len(x)))
        J[:, :k] = TWO_PI * t[:, None] * (c[1:k + 1] * co - c[k + 1:] * s)
        J[:, k:] = np.hstack([np.ones((len(t), 1)), s, co])
        return J

    sol = least_squares(resid, x0, jac=jac, method="lm", xtol=1e-14, ftol=1e-14, gtol=1e-14)
    return sol.x[:k], sol.x[k:]


def _to_modes(freqs, coef):
    k = len(freqs)
    modes = []
    for f, a, b in zip(freqs, coef[1:k + 1], coef[k + 1:]):
        # a sin x + b cos x = A sin(x + phi)
        modes.append(PulsationMode(float(math.hypot(a, b)), float(abs(f)),
                                   float(math.atan2(b, a) % TWO_PI)))
    return modes


def fit_model(series: PhotometricSeries, snr_min: float, amp_cutoff: float, los, *,
              name: str | None = None, mean_mag: float = 0.0, max_modes: int = 40,
              oversample: float = 10.0, epoch: float | None = None) -> StarModel:
    """Iterative prewhitening: extract the strongest significant periodogram peak,
    refit every extracted mode jointly, subtract, repeat.

    Modes weaker than ``amp_cutoff`` of the strongest are discarded and the
    survivors refit before the model is returned.
    """
    t_days = series.times
    y = series.as_magnitudes(mean_mag)
    epoch = 0.5 * (t_days[0] + t_days[-1]) if epoch is None else epoch
    t = t_days - epoch
    span = t_days[-1] - t_days[0]
    nyquist = 0.5 / float(np.median(np.diff(t_days)))
    df = 1.0 / (oversample * span)
    grid = np.arange(df, nyquist, df)
    if len(grid) < 3:
        raise FitError("series too short for a periodogram")

    freqs = np.empty(0)
    resid = y - y.mean()
    first_amp = None
    while len(freqs) < max_modes:
        amps = amplitude_spectrum(t, resid, grid)
        k = int(np.argmax(amps))
        if _local_snr(grid, amps, k, span) < snr_min:
            break
        if first_amp is not None and amps[k] < 1e-9 * first_amp:
            break
        f_peak = grid[k]
        if 0 < k < len(grid) - 1:
            y0, y1, y2 = amps[k - 1:k + 2]
            denom = y0 - 2 * y1 + y2
            if denom != 0:
                f_peak += 0.5 * (y0 - y2) / denom * df
        first_amp = amps[k] if first_amp is None else first_amp
        freqs, coef = _joint_fit(t, y, np.append(freqs, f_peak))
        resid = y - _design(t, freqs) @ coef
    if len(freqs) == 0:
        raise FitError("no significant pulsation")

    modes = _to_modes(freqs, coef)
    top = max(m.amplitude for m in modes)
    kept = np.array([m.frequency for m in modes if m.amplitude >= amp_cutoff * top])
    dropped = sum(m.amplitude**2 / 2 for m in modes if m.amplitude < amp_cutoff * top)
    kept_f, coef = _joint_fit(t, y, kept)
    modes = _to_modes(kept_f, coef)
    return StarModel(name or series.source_label, float(coef[0]), float(epoch), tuple(modes), los,
                     math.sqrt(dropped))


# ---------------------------------------------------------------------------
# file formats


def model_to_dict(model: StarModel) -> dict:
    return {
        "name": model.name,
        "los": [float(x) for x in model.los],
        "mean_mag": model.mean_mag,
        "epoch": model.epoch,
        "modes": [{"amplitude": m.amplitude, "frequency": m.frequency, "phase": m.phase}
                  for m in model.modes],
        "unmodeled_rms": model.unmodeled_rms,
    }


def model_from_dict(d: dict) -> StarModel:
    modes = tuple(PulsationMode(m["amplitude"], m["frequency"], m["phase"]) for m in d["modes"])
    return StarModel(d["name"], d["mean_mag"], d["epoch"], modes, np.array(d["los"], dtype=float),
                     d.get("unmodeled_rms", 0.0))


def save_models(models, path):
    """JSON is used because Python's float repr round-trips exactly."""
    Path(path).write_text(json.dumps([model_to_dict(m) for m in models], indent=1) + "\n")


def load_models(path) -> list[StarModel]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = [data]
    return [model_from_dict(d) for d in data]


def save_series(series: PhotometricSeries, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# source: {series.source_label}\n")
        fh.write(f"# time_scale: {series.time_scale}\n")
        fh.write(f"# kind: {series.kind}\n")
        fh.write("time_days,value\n")
        for t, v in zip(series.times, series.values):
            fh.write(f"{float(t)!r},{float(v)!r}\n")


def load_series(path) -> PhotometricSeries:
    meta = {}
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                meta[key.strip()] = val.strip()
                continue
            if line[0].isalpha():
                continue  # column header
            t, v = line.split(",")[:2]
            rows.append((float(t), float(v)))
    arr = np.array(rows, dtype=float).reshape(-1, 2)
    return PhotometricSeries(arr[:, 0], arr[:, 1], meta.get("source", Path(path).stem),
                             meta.get("kind", "magnitude"), meta.get("time_scale", "TDB"))
