import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from dsctnav.detector import (V_BAND, SensorConfig, expected_dark_signal, expected_sky_signal,
                              expected_source_signal, expected_total_signal, mag_to_photon_flux,
                              round_half_away, sample_measurement, sample_signal, sample_to_mag,
                              sensor_preset, signal_to_mag, source_photons)

MAPCAM = sensor_preset("mapcam")
POLYCAM = sensor_preset("polycam")


def test_zero_mag_flux():
    assert float(mag_to_photon_flux(0.0)) == pytest.approx(8.86e5, rel=2e-3)
    assert float(mag_to_photon_flux(0.0)) == pytest.approx(oracles.photon_flux(0.0), rel=1e-12)


def test_x_cae_flux():
    assert float(mag_to_photon_flux(6.28)) == pytest.approx(oracles.photon_flux(6.28), rel=1e-12)


@given(st.floats(-2, 20))
def test_five_magnitudes_step(m):
    assert float(mag_to_photon_flux(m + 2.5)) == pytest.approx(float(mag_to_photon_flux(m)) / 10, rel=1e-12)


def test_presets():
    assert MAPCAM.aperture_diameter == 38.0 and POLYCAM.aperture_diameter == 175.0
    assert MAPCAM.pixel_area == pytest.approx(55.25)
    with pytest.raises(KeyError):
        sensor_preset("nope")
    with pytest.raises(ValueError):
        SensorConfig(gain=0.0)


def test_source_signal_oracle():
    assert expected_source_signal(6.0, MAPCAM, exposure=3.0) == pytest.approx(oracles.source_adu(6.0, 38.0, 3.0),
                                                                              rel=1e-12)


def test_aperture_ratio():
    ratio = float(source_photons(6.0, POLYCAM, V_BAND, 3.0) / source_photons(6.0, MAPCAM, V_BAND, 3.0))
    assert ratio == pytest.approx((175 / 38) ** 2, rel=1e-3)


def test_faint_source_rounds_to_zero():
    assert expected_source_signal(40.0, MAPCAM, exposure=1e-3) == 0.0


def test_sky_oracle_and_zero_pixels():
    assert expected_sky_signal(MAPCAM, exposure=3.0) == pytest.approx(oracles.sky_adu(125.0, 3.0), rel=1e-12)
    assert expected_sky_signal(replace(MAPCAM, npix=0), exposure=3.0) == 0.0


def test_dark_oracle_and_zeros():
    assert expected_dark_signal(MAPCAM, 3.0) == pytest.approx(oracles.dark_adu(3.0), rel=1e-12)
    assert expected_dark_signal(replace(MAPCAM, dark_current=0.0), 3.0) == 0.0
    assert expected_dark_signal(replace(MAPCAM, npix=0), 3.0) == 0.0


def test_round_half_away():
    assert [round_half_away(x) for x in (0.5, 1.5, 2.5, -0.5, 0.49)] == [1, 2, 3, -1, 0]
    for x in (0.5, 2.5, -3.5, 7.2):
        assert round_half_away(x) == oracles.round_half_away(x)


def test_zero_mean_sample_is_zero():
    zero = replace(MAPCAM, npix=0)
    rng = np.random.default_rng(0)
    s = sample_signal(np.full(100, 60.0), zero, V_BAND, 3.0, rng)
    assert np.all(s == 0)


def test_sample_deterministic():
    a = sample_signal(np.full(10, 6.0), MAPCAM, V_BAND, 3.0, np.random.default_rng(5))
    b = sample_signal(np.full(10, 6.0), MAPCAM, V_BAND, 3.0, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)
    d = sample_measurement(6.0, MAPCAM, V_BAND, 3.0, np.random.default_rng(5), time_tag=12.0)
    assert d.total_signal >= 0 and d.time_tag == 12.0 and isinstance(d.total_signal, int)


@pytest.mark.parametrize("m", [6.0, 14.0])
def test_poisson_mean(m):
    mu = expected_total_signal(m, MAPCAM, exposure=3.0)
    s = sample_signal(np.full(10_000, m), MAPCAM, V_BAND, 3.0, np.random.default_rng(11))
    assert abs(s.mean() - mu) < 4 * math.sqrt(mu / 10_000)


@given(st.floats(2, 9), st.sampled_from(["mapcam", "polycam"]), st.floats(1, 5))
def test_round_trip(m, name, t):
    sensor = sensor_preset(name)
    total = expected_total_signal(m, sensor, exposure=t)
    if total - expected_sky_signal(sensor, exposure=t) - expected_dark_signal(sensor, t) < 1e3:
        return
    back, ok = signal_to_mag(total, sensor, exposure=t)
    assert ok and abs(back - m) < 1e-3


def test_invalid_net_signal():
    m, ok = signal_to_mag(0, MAPCAM, exposure=3.0)
    assert not ok and math.isnan(m)
    mags, valid = signal_to_mag(np.array([0, 10_000]), MAPCAM, exposure=3.0)
    assert list(valid) == [False, True]


def test_halving_net_signal():
    bg = expected_sky_signal(MAPCAM, exposure=3.0) + expected_dark_signal(MAPCAM, 3.0)
    m1, _ = signal_to_mag(bg + 20_000, MAPCAM, exposure=3.0)
    m2, _ = signal_to_mag(bg + 10_000, MAPCAM, exposure=3.0)
    assert m2 - m1 == pytest.approx(2.5 * math.log10(2), abs=1e-12)
    assert 2.5 * math.log10(2) == pytest.approx(0.7526, abs=1e-4)


def test_sample_to_mag():
    d = sample_measurement(6.0, MAPCAM, V_BAND, 3.0, np.random.default_rng(0))
    assert sample_to_mag(d, MAPCAM)[0] == pytest.approx(6.0, abs=0.01)


@given(st.floats(0, 12), st.floats(0.01, 1))
def test_monotone_in_magnitude(m, dm):
    assert expected_source_signal(m, POLYCAM) >= expected_source_signal(m + dm, POLYCAM)
    assert source_photons(m, POLYCAM, V_BAND, 3.0) > source_photons(m + dm, POLYCAM, V_BAND, 3.0)
