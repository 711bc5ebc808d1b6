"""Per-star time-of-arrival estimation: the scaled least-squares objective, its
local minima over a window of time shifts, their uncertainties, and O-C analysis.

Shifts are in seconds: a candidate ``delta_t`` maps spacecraft time tag t' to
reference time t' + delta_t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import SECONDS_PER_DAY
from .lightcurve import StarModel, eval_reference_offset, eval_reference_rate
from .scenario import StarMeasurements

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
SIGMA_FLOOR = 1e-3  # s; ten times the refinement tolerance
COARSE_MARGIN = 1.05  # slack on the objective-ratio screen before refinement


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ToaCandidate:
    delta_t: float    # s
    scale: float
    objective: float  # mag^2
    sigma: float      # s


def _valid(meas: StarMeasurements):
    t, m = meas.times[meas.valid], meas.mags[meas.valid]
    if len(t) == 0:
        raise EstimationError(f"{meas.name}: no valid samples")
    return t, m


def objective(delta_t: float, scale: float, meas: StarMeasurements, model: StarModel) -> float:
    """Mean squared difference between measured and scaled model magnitudes."""
    t, m = _valid(meas)
    pred = eval_reference_offset(model, meas.epoch, t + delta_t)
    return float(np.mean((m - scale * pred) ** 2))


def best_scale(delta_t: float, meas: StarMeasurements, model: StarModel) -> float:
    t, m = _valid(meas)
    pred = eval_reference_offset(model, meas.epoch, t + delta_t)
    den = float(pred @ pred)
    if den <= 0:
        raise EstimationError("degenerate model prediction")
    return float(m @ pred) / den


class ObjectiveScan:
    """Exact J(dt, C*(dt)) for many shifts at a cost independent of the sample count.

    With phases a_ik of mode i at sample k and b_i = 2 pi f_i dt, the model's
    oscillating part is sum_i A_i (sin a_ik cos b_i + cos a_ik sin b_i), so every
    sum over samples reduces to per-mode and per-mode-pair moments computed once.
    The data are expanded about the best constant fit to keep the minimum free of
    cancellation.
    """

    def __init__(self, meas: StarMeasurements, model: StarModel):
        t, m = _valid(meas)
        self.n = len(t)
        self.model = model
        f = model.frequencies
        self.omega = 2 * math.pi * f / SECONDS_PER_DAY  # rad/s
        cycles = np.multiply.outer(t / SECONDS_PER_DAY, f) + (meas.epoch - model.epoch) * f
        alpha = 2 * math.pi * cycles + model.phases
        s, c = np.sin(alpha), np.cos(alpha)
        self.t, self.m = t, m
        self._s, self._c = s, c
        self.A = model.amplitudes
        self.A0 = model.mean_mag
        self.M = float(m.mean())
        dm = m - self.M
        self.dm2 = float(dm @ dm)
        self.S, self.Co = s.sum(0), c.sum(0)
        self.DS, self.DC = dm @ s, dm @ c
        self.SS, self.SC, self.CC = s.T @ s, s.T @ c, c.T @ c

    def evaluate(self, dts):
        """Return (J, C*) arrays for shifts ``dts`` (s)."""
        dts = np.atleast_1d(np.asarray(dts, float))
        beta = np.multiply.outer(dts, self.omega)
        x = self.A * np.cos(beta)
        y = self.A * np.sin(beta)
        sv = x @ self.S + y @ self.Co
        dmv = x @ self.DS + y @ self.DC
        vv = ((x @ self.SS) * x).sum(1) + 2 * ((x @ self.SC) * y).sum(1) + ((y @ self.CC) * y).sum(1)
        n, A0, M = self.n, self.A0, self.M
        rho = M / A0
        qq = self.dm2 - 2 * rho * dmv + rho * rho * vv
        qa = A0 * (-rho * sv) + dmv - rho * vv
        aa = n * A0 * A0 + 2 * A0 * sv + vv
        J = (qq - qa * qa / aa) / n
        C = (n * M * A0 + M * sv + dmv) / aa
        return np.maximum(J, 0.0), C

    def predict(self, dts):
        """Model magnitude and rate (mag/s) at every sample for each shift,
        by angle addition on the cached phases; arrays of shape (K, n)."""
        beta = np.multiply.outer(np.atleast_1d(np.asarray(dts, float)), self.omega)
        cb, sb = np.cos(beta), np.sin(beta)
        x, y = self.A * cb, self.A * sb
        pred = self.A0 + x @ self._s.T + y @ self._c.T
        w = self.A * self.omega
        rate = (w * cb) @ self._c.T - (w * sb) @ self._s.T
        return pred, rate


def estimate_sigma(meas: StarMeasurements, model: StarModel, delta_t: float, scale: float,
                   objective_min: float | None = None) -> float:
    """Gauss-Newton 1-sigma of a shift at a local minimum of J."""
    t, m = _valid(meas)
    n = len(t)
    if objective_min is None:
        objective_min = objective(delta_t, scale, meas, model)
    rate = scale * eval_reference_rate(model, meas.epoch, t + delta_t)
    curv = float(np.mean(rate * rate))
    if curv <= 0 or n <= 2:
        raise EstimationError("zero curvature; shift is unobservable")
    return max(math.sqrt(objective_min / ((n - 2) * curv)), SIGMA_FLOOR)


def observation_windows(times, gap_factor: float = 2.0) -> np.ndarray:
    """Label contiguous runs of samples; a gap longer than ``gap_factor`` times
    the median spacing starts a new window."""
    gaps = np.diff(times)
    if len(gaps) == 0:
        return np.zeros(len(times), int)
    return np.concatenate([[0], np.cumsum(gaps > gap_factor * np.median(gaps))])


def estimate_sigma_windowed(meas: StarMeasurements, model: StarModel, delta_t: float, scale: float) -> float:
    """Cluster-robust (sandwich) 1-sigma of a shift, one cluster per observation window.

    Unlike :func:`estimate_sigma` this does not assume independent residuals,
    so model errors that persist through a window are accounted for.
    """
    t, m = _valid(meas)
    T = t + delta_t
    pred = eval_reference_offset(model, meas.epoch, T)
    g = scale * eval_reference_rate(model, meas.epoch, T)
    r = m - scale * pred
    g = g - (g @ pred) / (pred @ pred) * pred  # scale profiled out
    gg = float(g @ g)
    if gg <= 0:
        raise EstimationError("zero curvature; shift is unobservable")
    labels = observation_windows(t)
    if labels[-1] < 2:
        labels = np.arange(len(t))
    G = labels[-1] + 1
    score = np.bincount(labels, weights=g * r)
    return max(math.sqrt(G / (G - 1) * float(score @ score)) / gg, SIGMA_FLOOR)


def model_error_sigma(meas: StarMeasurements, model: StarModel, delta_t: float, scale: float) -> float:
    """Expected shift error (s) from modes the model omits.

    An omitted mode whose beat against the model outlasts the campaign biases
    the shift by roughly a cos(phi) / rms(rate); averaging over the unknown
    phase gives rms / sqrt(2 <rate^2>) for the omitted-mode rms.
    """
    if model.unmodeled_rms <= 0:
        return 0.0
    t, _ = _valid(meas)
    T = t + delta_t
    pred = eval_reference_offset(model, meas.epoch, T)
    g = scale * eval_reference_rate(model, meas.epoch, T)
    g = g - (g @ pred) / (pred @ pred) * pred
    ms_rate = float(g @ g) / len(t)
    if ms_rate <= 0:
        raise EstimationError("zero curvature; shift is unobservable")
    return model.unmodeled_rms / math.sqrt(2.0 * ms_rate)


def _parabolic_offset(jl, jc, jr):
    """Vertex of the parabola through three equally spaced values, in steps from the middle."""
    den = jl - 2 * jc + jr
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, np.clip(0.5 * (jl - jr) / safe, -1.0, 1.0), 0.0)


def _golden_refine(scan: ObjectiveScan, lo, hi, tol):
    lo, hi = np.array(lo, float), np.array(hi, float)
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1, f2 = scan.evaluate(x1)[0], scan.evaluate(x2)[0]
    while np.max(hi - lo) > tol:
        left = f1 <= f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        nx1 = np.where(left, hi - GOLDEN * (hi - lo), x2)
        nx2 = np.where(left, x1, lo + GOLDEN * (hi - lo))
        new = np.where(left, nx1, nx2)
        fn = scan.evaluate(new)[0]
        f1, f2 = np.where(left, fn, f2), np.where(left, f1, fn)
        x1, x2 = nx1, nx2
    return 0.5 * (lo + hi)


def _polish(scan: ObjectiveScan, dts, scales, iterations=2):
    """Gauss-Newton in (shift, scale) on per-sample residuals; the moment-based
    objective loses resolution within ~1e-3 s of an exact fit."""
    m = scan.m
    dts = np.array(dts, float)
    C = np.array(scales, float)
    for _ in range(iterations):
        pred, rate = scan.predict(dts)
        r = m - C[:, None] * pred
        jd, jc = C[:, None] * rate, pred  # minus the residual Jacobian
        a11, a12, a22 = (jd * jd).sum(1), (jd * jc).sum(1), (jc * jc).sum(1)
        g1, g2 = (jd * r).sum(1), (jc * r).sum(1)
        det = a11 * a22 - a12 * a12
        ok = det > 0
        step_d = np.where(ok, (a22 * g1 - a12 * g2) / np.where(ok, det, 1), 0.0)
        step_c = np.where(ok, (a11 * g2 - a12 * g1) / np.where(ok, det, 1), 0.0)
        dts = dts + step_d
        C = C + step_c
    pred, _ = scan.predict(dts)
    C = (pred @ m) / np.einsum("kn,kn->k", pred, pred)
    J = np.mean((m - C[:, None] * pred) ** 2, axis=1)
    return dts, C, J


def _sigma_batch(scan: ObjectiveScan, dts, scales, objectives, method, model_error):
    """Vectorised :func:`estimate_sigma` / :func:`estimate_sigma_windowed`,
    optionally combined with :func:`model_error_sigma`."""
    t, m, model = scan.t, scan.m, scan.model
    n = len(t)
    pred, rate = scan.predict(dts)
    g = scales[:, None] * rate
    if method == "gauss-newton":
        if n <= 2:
            raise EstimationError("zero curvature; shift is unobservable")
        curv = np.mean(g * g, axis=1)
        if np.any(curv <= 0):
            raise EstimationError("zero curvature; shift is unobservable")
        sig = np.sqrt(objectives / ((n - 2) * curv))
    gp = g - (np.einsum("kn,kn->k", g, pred) / np.einsum("kn,kn->k", pred, pred))[:, None] * pred
    gg = np.einsum("kn,kn->k", gp, gp)
    if np.any(gg <= 0):
        raise EstimationError("zero curvature; shift is unobservable")
    if method == "windowed":
        labels = observation_windows(t)
        if labels[-1] < 2:
            labels = np.arange(n)
        G = labels[-1] + 1
        r = m - scales[:, None] * pred
        onehot = np.zeros((n, G))
        onehot[np.arange(n), labels] = 1.0
        score = (gp * r) @ onehot
        sig = np.sqrt(G / (G - 1) * np.einsum("kg,kg->k", score, score)) / gg
    sig = np.maximum(sig, SIGMA_FLOOR)
    if model_error and model.unmodeled_rms > 0:
        sig = np.hypot(sig, model.unmodeled_rms / np.sqrt(2.0 * gg / n))
    return sig


def grid_step(model: StarModel) -> float:
    return model.shortest_period_s / 20.0


def enumerate_candidates(meas: StarMeasurements, model: StarModel, window, *,
                         max_objective_ratio: float | None = None, tol: float = 1e-4,
                         sigma_method: str = "gauss-newton",
                         model_error: bool = False) -> list[ToaCandidate]:
    """Every local minimum of J over ``window`` = (dt_min, dt_max) seconds.

    ``max_objective_ratio`` optionally keeps only minima with
    J <= ratio * (lowest J found); None keeps all of them.  ``sigma_method`` is
    "gauss-newton" (independent residuals) or "windowed" (cluster-robust);
    ``model_error`` adds :func:`model_error_sigma` in quadrature.
    """
    if sigma_method not in ("gauss-newton", "windowed"):
        raise ValueError(f"unknown sigma method {sigma_method!r}")
    lo, hi = float(window[0]), float(window[1])
    if not hi > lo:
        return []
    scan = ObjectiveScan(meas, model)
    step = grid_step(model)
    grid = np.linspace(lo, hi, int(math.ceil((hi - lo) / step)) + 1)
    J, _ = scan.evaluate(grid)
    interior = np.nonzero((J[1:-1] < J[:-2]) & (J[1:-1] <= J[2:]))[0] + 1
    if len(interior) == 0:
        return []
    lo_b, hi_b = grid[interior - 1], grid[interior + 1]
    if max_objective_ratio is not None:
        # Screen with J at the parabolic vertex through the three grid values and
        # refine only minima the ratio filter could keep.  J there is at least
        # the local minimum, and the vertex is close enough that the margin
        # covers the difference.
        vtx = grid[interior] + _parabolic_offset(J[interior - 1], J[interior], J[interior + 1]) * step
        Jc, _ = scan.evaluate(vtx)
        near = Jc <= COARSE_MARGIN * max_objective_ratio * Jc.min() + 1e-300
        lo_b, hi_b = lo_b[near], hi_b[near]
    dts = _golden_refine(scan, lo_b, hi_b, tol)
    Jm, Cm = scan.evaluate(dts)

    # merge near-duplicates, keep the lower objective
    merge = 1e-3 * model.shortest_period_s
    order = np.argsort(dts)
    kept: list[int] = []
    for k in order:
        if kept and dts[k] - dts[kept[-1]] < merge:
            if Jm[k] < Jm[kept[-1]]:
                kept[-1] = k
            continue
        kept.append(k)
    kept_arr = np.array(kept)
    # local-minimum certificate
    eps = step / 100.0
    Jl, _ = scan.evaluate(dts[kept_arr] - eps)
    Jr, _ = scan.evaluate(dts[kept_arr] + eps)
    kept_arr = kept_arr[(Jl > Jm[kept_arr]) & (Jr > Jm[kept_arr])]
    if max_objective_ratio is not None and len(kept_arr):
        floor = Jm[kept_arr].min()
        kept_arr = kept_arr[Jm[kept_arr] <= max_objective_ratio * floor + 1e-300]

    if len(kept_arr) == 0:
        return []
    pd, pc, pj = _polish(scan, dts[kept_arr], Cm[kept_arr])
    # the polish may only improve a minimum in place, never hop to a neighbour
    accept = (np.abs(pd - dts[kept_arr]) < 0.5 * step) & (pj <= Jm[kept_arr] + 1e-15)
    pd = np.where(accept, pd, dts[kept_arr])
    pc = np.where(accept, pc, Cm[kept_arr])
    pj = np.where(accept, pj, Jm[kept_arr])
    sig = _sigma_batch(scan, pd, pc, pj, sigma_method, model_error)
    return [ToaCandidate(float(d), float(c), float(j), float(e)) for d, c, j, e in zip(pd, pc, pj, sig)]


# ---------------------------------------------------------------------------
# O-C analysis


@dataclass
class OcSeries:
    epochs: np.ndarray        # days
    o_minus_c: np.ndarray     # s
    slope: float              # s/day
    intercept: float          # s
    detrended_sigma: float    # s
    flagged: list[int]        # indices of segments that failed


def oc_analysis(segments: list[StarMeasurements], model: StarModel, predicted=None) -> OcSeries:
    """Observed-minus-computed shifts for a list of light-curve segments.

    Each segment's shift is the minimum of J nearest its predicted value
    (zero by default), searched within half a dominant period either side.
    """
    if len(segments) < 2:
        raise EstimationError("O-C analysis needs at least two segments")
    predicted = np.zeros(len(segments)) if predicted is None else np.asarray(predicted, float)
    half = 0.5 * SECONDS_PER_DAY / model.modes[0].frequency
    epochs, oc, flagged = [], [], []
    for i, (seg, pred) in enumerate(zip(segments, predicted)):
        try:
            cands = enumerate_candidates(seg, model, (pred - half, pred + half))
        except EstimationError:
            cands = []
        if not cands:
            flagged.append(i)
            continue
        best = min(cands, key=lambda c: abs(c.delta_t - pred))
        t = seg.times[seg.valid]
        epochs.append(seg.epoch + 0.5 * (t[0] + t[-1]) / SECONDS_PER_DAY)
        oc.append(best.delta_t - pred)
    epochs, oc = np.array(epochs), np.array(oc)
    if len(oc) < 2:
        raise EstimationError("fewer than two usable segments")
    slope, intercept = np.polyfit(epochs - epochs[0], oc, 1)
    resid = oc - (intercept + slope * (epochs - epochs[0]))
    dof = max(len(oc) - 2, 1)
    sigma = float(math.sqrt(resid @ resid / dof))
    return OcSeries(epochs, oc, float(slope), float(intercept), sigma, flagged)
