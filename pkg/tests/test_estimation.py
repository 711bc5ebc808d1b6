import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import make_measurements, make_model, windows
from dsctnav.constants import SECONDS_PER_DAY
from dsctnav.estimation import (EstimationError, ObjectiveScan, best_scale, enumerate_candidates,
                                estimate_sigma, estimate_sigma_windowed, grid_step, model_error_sigma,
                                objective, oc_analysis)
from dsctnav.scenario import StarMeasurements

SINGLE = make_model([(0.1, 10.0, 0.4)], name="single")
PERIOD = SECONDS_PER_DAY / 10.0


def oracle_J(model, meas, dts):
    """min over C of J, by explicit vectorised evaluation of the model sum."""
    t = meas.times[meas.valid]
    m = meas.mags[meas.valid]
    out = []
    for dt in np.atleast_1d(dts):
        days = (meas.epoch - model.epoch) + (t + dt) / SECONDS_PER_DAY
        pred = model.mean_mag + sum(md.amplitude * np.sin(2 * np.pi * md.frequency * days + md.phase)
                                    for md in model.modes)
        C = (m @ pred) / (pred @ pred)
        out.append(np.mean((m - C * pred) ** 2))
    return np.array(out)


# ---------------------------------------------------------------------------
# objective and scale


def test_objective_zero_at_truth(three_mode_model):
    meas = make_measurements(three_mode_model, 812.3, windows(5))
    assert objective(812.3, 1.0, meas, three_mode_model) < 1e-24
    assert best_scale(812.3, meas, three_mode_model) == pytest.approx(1.0, abs=1e-12)


def test_objective_constant_model(three_mode_model):
    meas = make_measurements(three_mode_model, 0.0, windows(3))
    assert objective(17.0, 0.0, meas, three_mode_model) == pytest.approx(np.mean(meas.mags ** 2), rel=1e-15)


@given(st.floats(-1e5, 1e5), st.floats(0.5, 1.5), st.integers(0, 1000))
def test_objective_three_sample_oracle(dt, C, seed):
    model = make_model([(0.1, 7.392, 0.3), (0.04, 6.046, 1.1)], epoch=60000.0)
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 5000, 3))
    meas = StarMeasurements("x", 60000.5, t, rng.normal(6, 0.1, 3))
    modes = [(md.amplitude, md.frequency, md.phase) for md in model.modes]
    want = oracles.direct_objective(dt, C, t, meas.mags, 6.0, modes, epoch_offset_days=0.5)
    assert objective(dt, C, meas, model) == pytest.approx(want, rel=1e-9, abs=1e-14)


def test_best_scale_linear_and_golden(three_mode_model):
    meas = make_measurements(three_mode_model, 40.0, windows(4), 0.01, np.random.default_rng(2))
    c1 = best_scale(55.0, meas, three_mode_model)
    doubled = StarMeasurements(meas.name, meas.epoch, meas.times, 2 * meas.mags)
    assert best_scale(55.0, doubled, three_mode_model) == pytest.approx(2 * c1, rel=1e-14)
    cg = oracles.golden_min(lambda c: objective(55.0, c, meas, three_mode_model), 0.5, 1.5)
    assert c1 == pytest.approx(cg, abs=1e-8)
    j1 = objective(55.0, c1, meas, three_mode_model)
    for c in np.random.default_rng(0).uniform(0, 2, 100):
        assert j1 <= objective(55.0, c, meas, three_mode_model)


def test_no_valid_samples(three_mode_model):
    meas = StarMeasurements("x", 60000.0, [0.0, 3.0], [np.nan, np.nan])
    with pytest.raises(EstimationError):
        objective(0.0, 1.0, meas, three_mode_model)


@given(st.floats(-5e5, 5e5))
def test_scan_matches_direct_objective(dt):
    model = make_model([(0.1, 7.392, 0.3), (0.04, 6.046, 1.1), (0.02, 13.98, 4.0)])
    meas = make_measurements(model, 300.0, windows(6), 0.003, np.random.default_rng(4))
    J, C = ObjectiveScan(meas, model).evaluate([dt])
    assert C[0] == pytest.approx(best_scale(dt, meas, model), rel=1e-9)
    assert J[0] == pytest.approx(objective(dt, C[0], meas, model), rel=1e-7, abs=1e-14)


# ---------------------------------------------------------------------------
# candidate enumeration


def test_one_period_window_single_candidate():
    meas = make_measurements(SINGLE, 1000.0, windows(10))
    cands = enumerate_candidates(meas, SINGLE, (1000.0 - 0.49 * PERIOD, 1000.0 + 0.49 * PERIOD))
    assert len(cands) == 1
    assert cands[0].delta_t == pytest.approx(1000.0, abs=1e-3)


def test_empty_window():
    meas = make_measurements(SINGLE, 0.0, windows(2))
    assert enumerate_candidates(meas, SINGLE, (5.0, 5.0)) == []


@pytest.mark.parametrize("width_periods", [3.3, 7.0, 12.6])
def test_single_mode_spacing_and_count(width_periods):
    meas = make_measurements(SINGLE, 500.0, windows(10), 0.002, np.random.default_rng(1))
    W = width_periods * PERIOD
    cands = enumerate_candidates(meas, SINGLE, (-0.3 * W, 0.7 * W))
    assert abs(len(cands) - math.floor(W / PERIOD)) <= 1
    np.testing.assert_allclose(np.diff([c.delta_t for c in cands]), PERIOD, atol=0.5)


def test_candidates_cover_dense_grid_minima(three_mode_model):
    meas = make_measurements(three_mode_model, 2000.0, windows(8), 0.005, np.random.default_rng(5))
    lo, hi = -4000.0, 9000.0
    cands = enumerate_candidates(meas, three_mode_model, (lo, hi))
    step = grid_step(three_mode_model)
    xs, _ = oracles.dense_grid_minima(lambda d: oracle_J(three_mode_model, meas, d)[0], lo + step, hi - step,
                                      step / 8)
    got = np.array([c.delta_t for c in cands])
    for x in xs:
        assert np.min(np.abs(got - x)) <= step / 2


def test_multimode_true_minimum_is_best(three_mode_model):
    meas = make_measurements(three_mode_model, 3210.0, windows(10))
    cands = enumerate_candidates(meas, three_mode_model, (-2e4, 2e4))
    best = min(cands, key=lambda c: c.objective)
    assert best.delta_t == pytest.approx(3210.0, abs=1e-3)
    others = sorted(c.objective for c in cands if c is not best)
    assert others[0] > 100 * max(best.objective, 1e-20)


def test_local_minimum_certificate(three_mode_model):
    meas = make_measurements(three_mode_model, 700.0, windows(6), 0.005, np.random.default_rng(8))
    eps = grid_step(three_mode_model) / 100
    for c in enumerate_candidates(meas, three_mode_model, (-5000.0, 5000.0)):
        j = oracle_J(three_mode_model, meas, [c.delta_t - eps, c.delta_t, c.delta_t + eps])
        assert j[0] > j[1] and j[2] > j[1]
        assert c.sigma > 0 and c.objective >= 0


def test_objective_ratio_filter(three_mode_model):
    meas = make_measurements(three_mode_model, 0.0, windows(6), 0.005, np.random.default_rng(8))
    every = enumerate_candidates(meas, three_mode_model, (-5000.0, 5000.0))
    some = enumerate_candidates(meas, three_mode_model, (-5000.0, 5000.0), max_objective_ratio=2.0)
    jmin = min(c.objective for c in every)
    want = [c.delta_t for c in every if c.objective <= 2 * jmin]
    np.testing.assert_allclose([c.delta_t for c in some], want, atol=1e-4)
    with pytest.raises(ValueError):
        enumerate_candidates(meas, three_mode_model, (0.0, 1.0), sigma_method="bogus")


@given(st.floats(-3000, 3000))
def test_shift_equivariance(s):
    model = make_model([(0.1, 7.392, 0.3), (0.04, 6.046, 1.1)])
    meas = make_measurements(model, 100.0, windows(6), 0.004, np.random.default_rng(3))
    moved = StarMeasurements(meas.name, meas.epoch, meas.times + s, meas.mags)
    a = enumerate_candidates(meas, model, (-3000.0, 3000.0))
    b = enumerate_candidates(moved, model, (-3000.0 - s, 3000.0 - s))
    da = np.array([c.delta_t for c in a])
    db = np.array([c.delta_t for c in b]) + s
    # interior minima must correspond; an edge minimum may appear on one side only
    for x in da[(da > -2900) & (da < 2900)]:
        assert np.min(np.abs(db - x)) < 2e-3


# ---------------------------------------------------------------------------
# uncertainty


def _truth_candidate(meas, model, shift, **kw):
    cands = enumerate_candidates(meas, model, (shift - 0.4 * PERIOD, shift + 0.4 * PERIOD), **kw)
    return min(cands, key=lambda c: abs(c.delta_t - shift))


def test_crlb_single_mode():
    sig_m, n_trials = 0.01, 100
    times = windows(20)
    rng = np.random.default_rng(0)
    est, sig = [], []
    for _ in range(n_trials):
        meas = make_measurements(SINGLE, 0.0, times, sig_m, rng)
        c = _truth_candidate(meas, SINGLE, 0.0)
        est.append(c.delta_t)
        sig.append(c.sigma)
    omega = 2 * math.pi * 10.0 / SECONDS_PER_DAY
    crlb = sig_m * math.sqrt(2) / (omega * 0.1 * math.sqrt(len(times)))
    assert np.mean(sig) == pytest.approx(crlb, rel=0.1)
    assert np.std(est) == pytest.approx(crlb, rel=0.2)


def test_sigma_scales_with_noise():
    times = windows(20)
    rng = np.random.default_rng(1)
    s1 = np.mean([_truth_candidate(make_measurements(SINGLE, 0.0, times, 0.005, rng), SINGLE, 0.0).sigma
                  for _ in range(100)])
    s2 = np.mean([_truth_candidate(make_measurements(SINGLE, 0.0, times, 0.010, rng), SINGLE, 0.0).sigma
                  for _ in range(100)])
    assert s2 / s1 == pytest.approx(2.0, rel=0.2)


def test_noiseless_sigma_hits_floor(three_mode_model):
    meas = make_measurements(three_mode_model, 0.0, windows(6))
    c = _truth_candidate(meas, three_mode_model, 0.0)
    assert c.objective < 1e-20
    assert c.sigma == pytest.approx(1e-3)


def test_zero_curvature():
    flat = make_model([(1e-300, 10.0, 0.0)])
    meas = make_measurements(flat, 0.0, windows(2))
    with pytest.raises(EstimationError):
        estimate_sigma(meas, flat, 0.0, 1.0, 1e-6)


@pytest.mark.parametrize("method", ["gauss-newton", "windowed"])
@pytest.mark.parametrize("model_error", [False, True])
def test_batch_sigma_matches_scalar(three_mode_model, method, model_error):
    model = replace(three_mode_model, unmodeled_rms=0.004)
    meas = make_measurements(model, 150.0, windows(10), 0.01, np.random.default_rng(6))
    for c in enumerate_candidates(meas, model, (-2000.0, 2000.0), sigma_method=method, model_error=model_error):
        if method == "gauss-newton":
            s = estimate_sigma(meas, model, c.delta_t, c.scale, c.objective)
        else:
            s = estimate_sigma_windowed(meas, model, c.delta_t, c.scale)
        if model_error:
            s = math.hypot(s, model_error_sigma(meas, model, c.delta_t, c.scale))
        assert c.sigma == pytest.approx(s, rel=1e-6)


def test_windowed_sigma_captures_persistent_bias():
    """An omitted slow mode biases every window alike; the windowed sigma and
    the model-error term must cover the resulting shift error, the white one
    does not."""
    truth = make_model([(0.1, 10.0, 0.4), (0.006, 10.37, 1.3)])
    onboard = replace(SINGLE, unmodeled_rms=0.006 / math.sqrt(2))
    times = windows(20, gap=1800.0)
    rng = np.random.default_rng(9)
    meas = make_measurements(truth, 0.0, times, 0.002, rng)
    white = _truth_candidate(meas, onboard, 0.0)
    robust = _truth_candidate(meas, onboard, 0.0, sigma_method="windowed", model_error=True)
    assert robust.delta_t == white.delta_t
    assert abs(white.delta_t) > 3 * white.sigma
    assert abs(robust.delta_t) < 3 * robust.sigma


def test_model_error_sigma_zero_without_unmodeled(three_mode_model):
    meas = make_measurements(three_mode_model, 0.0, windows(3))
    assert model_error_sigma(meas, three_mode_model, 0.0, 1.0) == 0.0


# ---------------------------------------------------------------------------
# O-C


def _segments(model, shifts, noise=0.0, rng=None, days_apart=1.0):
    segs = []
    for i, s in enumerate(shifts):
        epoch = model.epoch + i * days_apart
        segs.append(make_measurements(model, s, windows(6), noise, rng, epoch=epoch))
    return segs


def test_oc_of_model_itself_is_flat():
    oc = oc_analysis(_segments(SINGLE, np.zeros(10)), SINGLE)
    assert np.max(np.abs(oc.o_minus_c)) < 1e-3
    assert abs(oc.slope) < 1e-4
    assert oc.flagged == []


def test_oc_frequency_offset_gives_linear_trend():
    df = 1e-4
    star = make_model([(0.1, 10.0 + df, 0.4)])
    segs = [make_measurements(star, 0.0, windows(6), epoch=SINGLE.epoch + i) for i in range(10)]
    oc = oc_analysis(segs, SINGLE)
    assert oc.slope == pytest.approx(df / 10.0 * SECONDS_PER_DAY, rel=0.05)
    assert oc.detrended_sigma < 0.05


def test_oc_jitter_round_trip():
    rng = np.random.default_rng(12)
    jitter = rng.normal(0.0, 2.0, 30)
    oc = oc_analysis(_segments(SINGLE, jitter), SINGLE)
    x = oc.epochs - oc.epochs[0]
    resid = jitter - np.polyval(np.polyfit(x, jitter, 1), x)
    assert oc.detrended_sigma == pytest.approx(math.sqrt(resid @ resid / 28), rel=1e-3)
    assert oc.detrended_sigma == pytest.approx(2.0, rel=0.35)


def test_oc_flags_bad_segment():
    segs = _segments(SINGLE, np.zeros(4))
    segs[2] = StarMeasurements("x", segs[2].epoch, segs[2].times, np.full(len(segs[2].times), np.nan))
    oc = oc_analysis(segs, SINGLE)
    assert oc.flagged == [2]
    assert len(oc.o_minus_c) == 3
    with pytest.raises(EstimationError):
        oc_analysis(segs[:1], SINGLE)
