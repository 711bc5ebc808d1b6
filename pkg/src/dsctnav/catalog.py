"""δ Scuti star catalog: loading, validation, selection and line-of-sight vectors."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

FIELDS = ("name", "max_vmag", "amplitude_vmag", "period_days", "ra_deg", "dec_deg")


class CatalogError(ValueError):
    pass


@dataclass(frozen=True)
class StarEntry:
    name: str
    max_vmag: float
    amplitude_vmag: float
    dominant_period: float  # days
    ra: float  # deg, J2000
    dec: float  # deg, J2000

    def __post_init__(self):
        if not (0.0 <= self.ra < 360.0) or not (-90.0 <= self.dec <= 90.0):
            raise CatalogError(f"{self.name}: sky position out of range (ra={self.ra}, dec={self.dec})")
        if not self.amplitude_vmag > 0.0:
            raise CatalogError(f"{self.name}: amplitude must be positive")
        if not self.dominant_period > 0.0:
            raise CatalogError(f"{self.name}: period must be positive")

    @property
    def dominant_frequency(self) -> float:
        """Cycles per day."""
        return 1.0 / self.dominant_period

    @property
    def los(self) -> np.ndarray:
        return los_vector(self.ra, self.dec)


def los_vector(ra: float, dec: float) -> np.ndarray:
    """Unit vector toward (ra, dec) in degrees, J2000 equatorial frame."""
    a, d = math.radians(ra), math.radians(dec)
    v = np.array([math.cos(d) * math.cos(a), math.cos(d) * math.sin(a), math.sin(d)])
    # already unit to rounding; renormalise so the 1e-12 contract is not at the mercy of trig error
    return v / math.sqrt(float(v @ v))


def default_catalog_path() -> Path:
    return Path(str(resources.files("dsctnav") / "data" / "dsct_catalog.csv"))


def load_catalog(path: str | Path | None = None) -> list[StarEntry]:
    """Read a comma-delimited catalog with a header naming the six fields.

    An empty file (or a header with no rows) gives an empty list.
    """
    path = default_catalog_path() if path is None else Path(path)
    entries: list[StarEntry] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, skipinitialspace=True)
        header = None
        for lineno, row in enumerate(reader, start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            if header is None:
                header = tuple(h.strip() for h in row)
                if header != FIELDS:
                    raise CatalogError(f"line {lineno}: expected header {','.join(FIELDS)}")
                continue
            if len(row) != len(FIELDS):
                raise CatalogError(f"line {lineno}: expected {len(FIELDS)} fields, got {len(row)}")
            try:
                values = [float(x) for x in row[1:]]
            except ValueError as exc:
                raise CatalogError(f"line {lineno}: {exc}") from None
            entries.append(StarEntry(row[0].strip(), *values))
    return entries


def save_catalog(entries: list[StarEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELDS)
        for e in entries:
            w.writerow([e.name, repr(e.max_vmag), repr(e.amplitude_vmag),
                        repr(e.dominant_period), repr(e.ra), repr(e.dec)])


def select_stars(entries, vmag_max: float, amp_min: float, freq_min: float) -> list[StarEntry]:
    """Visibility cut: brighter than ``vmag_max``, amplitude at least ``amp_min``,
    dominant frequency above ``freq_min`` cycles/day.

    The amplitude bound is inclusive: the published list keeps stars whose
    tabulated amplitude equals the 0.04 mag threshold.
    """
    return [e for e in entries
            if e.max_vmag < vmag_max
            and e.amplitude_vmag >= amp_min
            and e.dominant_frequency > freq_min]


def find_stars(entries, names) -> list[StarEntry]:
    by_name = {e.name: e for e in entries}
    missing = [n for n in names if n not in by_name]
    if missing:
        raise CatalogError(f"stars not in catalog: {', '.join(missing)}")
    return [by_name[n] for n in names]
