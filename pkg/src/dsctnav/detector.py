"""Magnitude -> digital detector signal chain for a navigation camera, and its inverse.

Unit conventions: optics in mm, pixel area in um^2, dark current in pA/cm^2,
fluxes in photons/cm^2/s, signals in ADU.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .constants import ARCSEC_PER_RAD, C_CM_S, ELECTRON_CHARGE, H_PLANCK


@dataclass(frozen=True)
class SensorConfig:
    pixel_area: float = 55.25         # um^2 (6.5 x 8.5)
    readout_noise: float = 50.0       # e-, carried but off by default
    dark_current: float = 0.065       # pA/cm^2
    quantum_efficiency: float = 0.35
    gain: float = 4.5                 # e-/ADU
    focal_length: float = 125.0       # mm
    aperture_diameter: float = 38.0   # mm
    npix: int = 9
    sky_mag: float = 21.5             # mag/arcsec^2
    name: str = "custom"

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "name":
                continue
            if f.name in ("npix", "dark_current", "readout_noise"):
                ok = v >= 0
            else:
                ok = v > 0
            if not ok:
                raise ValueError(f"sensor {self.name}: {f.name} must be positive, got {v}")
        if self.quantum_efficiency > 1:
            raise ValueError("quantum efficiency must be <= 1")

    @property
    def aperture_area_cm2(self) -> float:
        return math.pi * (0.1 * self.aperture_diameter / 2.0) ** 2

    @property
    def pixel_area_cm2(self) -> float:
        return self.pixel_area * 1e-8

    @property
    def pixel_solid_angle_arcsec2(self) -> float:
        """Sky area seen by one pixel: pixel area / f^2 in rad^2, converted to arcsec^2."""
        f_cm = 0.1 * self.focal_length
        return self.pixel_area_cm2 / f_cm**2 * ARCSEC_PER_RAD**2


@dataclass(frozen=True)
class BandConstants:
    zero_point_flux: float = 3.631e-9   # erg/cm^2/s/A
    effective_bandwidth: float = 880.0  # A
    mean_wavelength: float = 551.0      # nm

    def __post_init__(self):
        if min(self.zero_point_flux, self.effective_bandwidth, self.mean_wavelength) <= 0:
            raise ValueError("band constants must be positive")

    @property
    def photon_energy(self) -> float:
        """erg per photon at the mean wavelength."""
        return H_PLANCK * C_CM_S / (self.mean_wavelength * 1e-7)


V_BAND = BandConstants()


@dataclass(frozen=True)
class DigitalSample:
    time_tag: float      # s, spacecraft clock
    total_signal: int    # ADU
    exposure: float      # s


def round_half_away(x):
    x = np.asarray(x, dtype=float)
    out = np.sign(x) * np.floor(np.abs(x) + 0.5)
    return float(out) if out.ndim == 0 else out


def mag_to_photon_flux(m, band: BandConstants = V_BAND):
    """photons/cm^2/s for a V magnitude (or photons/cm^2/s/arcsec^2 for a surface brightness)."""
    return band.zero_point_flux * band.effective_bandwidth * 10.0 ** (-np.asarray(m, float) / 2.5) / band.photon_energy


def source_photons(m, sensor: SensorConfig, band: BandConstants, exposure: float):
    """Photons collected before rounding."""
    return mag_to_photon_flux(m, band) * sensor.aperture_area_cm2 * exposure


def expected_source_signal(m, sensor: SensorConfig, band: BandConstants = V_BAND, exposure: float = 3.0):
    if exposure <= 0:
        raise ValueError("exposure must be positive")
    return round_half_away(source_photons(m, sensor, band, exposure)) * sensor.quantum_efficiency / sensor.gain


def sky_photons(sensor: SensorConfig, band: BandConstants, exposure: float) -> float:
    """Pre-rounding sky term: surface-brightness flux x pixel solid angle x npix x t.

    No collecting-area factor enters, matching the published expression.
    """
    return float(mag_to_photon_flux(sensor.sky_mag, band)) * sensor.pixel_solid_angle_arcsec2 * sensor.npix * exposure


def expected_sky_signal(sensor: SensorConfig, band: BandConstants = V_BAND, exposure: float = 3.0) -> float:
    if exposure <= 0:
        raise ValueError("exposure must be positive")
    return round_half_away(sky_photons(sensor, band, exposure)) * sensor.quantum_efficiency / sensor.gain


def dark_electrons(sensor: SensorConfig, exposure: float) -> float:
    # pA/cm^2 -> e-/s/cm^2
    rate = sensor.dark_current * 1e-12 / ELECTRON_CHARGE
    return rate * sensor.pixel_area_cm2 * sensor.npix * exposure


def expected_dark_signal(sensor: SensorConfig, exposure: float = 3.0) -> float:
    # QE applied to an electron count, as in the published chain
    if exposure <= 0:
        raise ValueError("exposure must be positive")
    return round_half_away(dark_electrons(sensor, exposure)) * sensor.quantum_efficiency / sensor.gain


def expected_total_signal(m, sensor, band=V_BAND, exposure=3.0):
    return (expected_source_signal(m, sensor, band, exposure)
            + expected_sky_signal(sensor, band, exposure)
            + expected_dark_signal(sensor, exposure))


def sample_signal(m, sensor, band, exposure, rng: np.random.Generator, read_noise: bool = False):
    """Poisson shot noise on the summed expected signal (vectorised over ``m``)."""
    mean = np.asarray(expected_total_signal(m, sensor, band, exposure), dtype=float)
    s = rng.poisson(mean)
    if read_noise:
        s = np.maximum(np.rint(s + rng.normal(0.0, sensor.readout_noise / sensor.gain, np.shape(s))), 0)
    return np.asarray(s).astype(np.int64)


def sample_measurement(m, sensor, band, exposure, rng, time_tag: float = 0.0,
                       read_noise: bool = False) -> DigitalSample:
    s = sample_signal(m, sensor, band, exposure, rng, read_noise)
    return DigitalSample(time_tag, int(s), exposure)


def signal_to_mag(total_signal, sensor: SensorConfig, band: BandConstants = V_BAND, exposure: float = 3.0):
    """Invert the noiseless chain.  Returns (magnitude, valid); invalid where the
    background-subtracted signal is not positive (magnitude is NaN there)."""
    net = np.asarray(total_signal, float) - expected_sky_signal(sensor, band, exposure) - expected_dark_signal(sensor, exposure)
    valid = net > 0
    photons = np.where(valid, net, np.nan) * sensor.gain / sensor.quantum_efficiency
    flux0 = float(mag_to_photon_flux(0.0, band)) * sensor.aperture_area_cm2 * exposure
    with np.errstate(invalid="ignore"):
        m = -2.5 * np.log10(photons / flux0)
    if m.ndim == 0:
        return float(m), bool(valid)
    return m, valid


def sample_to_mag(sample: DigitalSample, sensor, band=V_BAND):
    return signal_to_mag(sample.total_signal, sensor, band, sample.exposure)


# ---------------------------------------------------------------------------
# presets


def _preset_file() -> Path:
    return Path(str(resources.files("dsctnav") / "data" / "sensors.yaml"))


def load_sensors(path=None) -> dict[str, SensorConfig]:
    data = yaml.safe_load(Path(path or _preset_file()).read_text())
    shared = data.get("shared", {})
    return {name: SensorConfig(**{**shared, **cfg, "name": name})
            for name, cfg in data["sensors"].items()}


def sensor_preset(name: str) -> SensorConfig:
    presets = load_sensors()
    try:
        return presets[name.lower()]
    except KeyError:
        raise KeyError(f"unknown sensor preset {name!r}; have {sorted(presets)}") from None


def sensor_to_dict(sensor: SensorConfig) -> dict:
    return asdict(sensor)
