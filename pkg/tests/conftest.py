import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from dsctnav.constants import C_AU_S  # noqa: E402
from dsctnav.estimation import ToaCandidate  # noqa: E402
from dsctnav.lightcurve import PulsationMode, StarModel, eval_reference_offset  # noqa: E402
from dsctnav.navsolver import SearchRegion  # noqa: E402
from dsctnav.scenario import StarMeasurements  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def make_model(modes, mean_mag=6.0, epoch=60000.0, los=(1.0, 0.0, 0.0), name="test"):
    return StarModel(name, mean_mag, epoch, tuple(PulsationMode(*m) for m in modes), np.asarray(los, float))


def make_measurements(model, true_shift, times, noise=0.0, rng=None, epoch=None):
    """Magnitudes a star shows at spacecraft time tags ``times`` (s) when the
    reference time is the tag plus ``true_shift``."""
    epoch = model.epoch if epoch is None else epoch
    times = np.asarray(times, float)
    mags = eval_reference_offset(model, epoch, times + true_shift)
    if noise:
        mags = mags + rng.normal(0.0, noise, len(times))
    return StarMeasurements(model.name, epoch, times, mags)


def windows(n_windows=20, per_window=40, cadence=3.0, gap=1800.0):
    """Time tags for repeated short observation windows."""
    return np.concatenate([k * gap + cadence * np.arange(per_window) for k in range(n_windows)])


def random_los(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def true_shifts(los, position, toff):
    return toff + np.asarray(los) @ np.asarray(position) / C_AU_S


def small_search_instance(seed, n_stars=5, max_cands=4, nonzero_b=True):
    """Random stars, each with the true shift plus up to ``max_cands - 1``
    decoys, and a small region near the truth."""
    rng = np.random.default_rng(seed)
    los = random_los(rng, n_stars)
    p, toff = rng.uniform(-3, 3, 3), rng.uniform(-2e4, 2e4)
    sets = []
    for d in true_shifts(los, p, toff):
        k = int(rng.integers(1, max_cands + 1))
        sig = rng.uniform(2, 40, k)
        offsets = np.concatenate([[0.0], rng.choice([-1, 1], k - 1) * rng.uniform(10, 3000, k - 1)])
        sets.append([ToaCandidate(float(d + o + rng.normal(0, s)), 1.0, float(rng.uniform(1e-4, 1e-3)), float(s))
                     for o, s in zip(offsets, sig)])
    b = rng.normal(0, 1, 3) if nonzero_b else np.zeros(3)
    region = SearchRegion(center=tuple(rng.uniform(-1, 1, 3)), radius=float(rng.uniform(2, 8)),
                          time_center=float(toff + rng.normal(0, 1000)), half_width=float(rng.uniform(2e3, 5e4)))
    return sets, los, b, region


@pytest.fixture(scope="session")
def three_mode_model():
    return make_model([(0.10, 7.392, 0.3), (0.04, 6.046, 1.1), (0.02, 13.980, 4.0)], name="three")


# ---------------------------------------------------------------------------
# acceptance criteria report: one line per criterion in the terminal summary

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion number and title")


@pytest.fixture
def detail(request):
    """Record a short measured-values string for the criterion report; the last one wins."""
    def put(text):
        request.node.user_properties.append(("detail", text))
    return put


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    n, title = mark.args
    details = [v for k, v in item.user_properties if k == "detail"]
    info = details[-1] if details else ""
    _CRITERIA[n] = ("PASS" if rep.passed else "FAIL", title, info)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title, info = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {status}: {title}" + (f" [{info}]" if info else ""))
