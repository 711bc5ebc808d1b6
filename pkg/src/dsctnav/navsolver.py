"""Position and clock offset from per-star time shifts.

Each star contributes one planar-wavefront equation

    u_i . r + c t_offset = c dt_i - u_i . b

in the unknowns s = [c t_offset, r] (au), where the shifts dt_i refer to light
curves modeled at the origin and b is only the expansion point: p = r + b.  With several candidate shifts per
star, a depth-first search picks one per star such that all wavefronts meet
inside a convex search region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2 as chi2_dist

from .constants import C_AU_S
from .estimation import ToaCandidate

CONDITION_LIMIT = 1e12


class SolverError(RuntimeError):
    pass


@dataclass
class TimingSystem:
    A: np.ndarray  # N x 4
    d: np.ndarray  # N, au
    W: np.ndarray  # N x N, 1/au^2


@dataclass
class StateSolution:
    clock_offset: float          # s
    r: np.ndarray                # au, relative to b
    covariance: np.ndarray       # 4x4 in au^2, first axis is c * clock_offset
    residual_norm: float         # sqrt of the weighted residual sum of squares
    b: np.ndarray = field(default_factory=lambda: np.zeros(3))
    selection: tuple[int, ...] = ()
    delta_t: tuple[float, ...] = ()

    @property
    def position(self) -> np.ndarray:
        return self.r + self.b

    @property
    def chi2(self) -> float:
        return self.residual_norm**2

    @property
    def state(self) -> np.ndarray:
        return np.concatenate([[C_AU_S * self.clock_offset], self.r])


@dataclass(frozen=True)
class SearchRegion:
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)  # au, absolute (not relative to b)
    radius: float = 40.0                                   # au
    time_center: float = 0.0                               # s
    half_width: float = 10 * 86400.0                       # s

    def __post_init__(self):
        if not (self.radius > 0 and self.half_width > 0):
            raise ValueError("search region needs positive radius and half-width")

    def contains(self, position, clock_offset) -> bool:
        return (float(np.linalg.norm(np.asarray(position) - np.asarray(self.center))) <= self.radius
                and abs(clock_offset - self.time_center) <= self.half_width)

    def shift_window(self, los) -> tuple[float, float]:
        """Range of shifts (s) a star can show from inside the region."""
        mid = self.time_center + float(np.dot(los, self.center)) / C_AU_S
        w = self.half_width + self.radius / C_AU_S
        return mid - w, mid + w


def build_system(delta_ts, sigmas, los_list, b=(0.0, 0.0, 0.0)) -> TimingSystem:
    U = np.asarray(los_list, float).reshape(-1, 3)
    dts = np.asarray(delta_ts, float)
    sig = np.asarray(sigmas, float)
    if len(dts) < 4:
        raise SolverError("underdetermined: need at least four stars")
    if not (len(U) == len(dts) == len(sig)):
        raise SolverError("shift, sigma and line-of-sight counts differ")
    A = np.hstack([np.ones((len(dts), 1)), U])
    d = C_AU_S * dts - U @ np.asarray(b, float)
    W = np.diag(1.0 / (C_AU_S * sig) ** 2)
    return TimingSystem(A, d, W)


def solve_wls(system: TimingSystem, b=(0.0, 0.0, 0.0)) -> StateSolution:
    A, d, W = system.A, system.d, system.W
    N = A.T @ W @ A
    if np.linalg.cond(N) > CONDITION_LIMIT:
        raise SolverError("degenerate geometry")
    cov = np.linalg.inv(N)
    cov = 0.5 * (cov + cov.T)
    s = cov @ (A.T @ W @ d)
    res = A @ s - d
    return StateSolution(float(s[0] / C_AU_S), s[1:].copy(), cov,
                         float(math.sqrt(max(res @ W @ res, 0.0))), np.asarray(b, float))


# ---------------------------------------------------------------------------
# ambiguity resolution


@dataclass(frozen=True)
class SearchSettings:
    """Pruning rules of the search.

    ``chi2_quantile`` is the probability that a correct selection passes all
    partial weighted-residual tests together; it is split evenly (Bonferroni)
    over the depths 5..N.  ``gate_sigmas=None`` derives the wavefront gate from
    that bound: with the partial-solution covariance included, the squared gate
    statistic equals the increase of the weighted residual sum, so the gate
    prunes exactly what the next test would reject.  A number gives a fixed
    n-sigma gate instead.
    """
    gate_sigmas: float | None = None
    max_star_residual: float = 3.0     # per-star |residual| / sigma
    chi2_quantile: float = 0.99
    gate_with_solution_covariance: bool = True

    def __post_init__(self):
        if self.gate_sigmas is None and not self.gate_with_solution_covariance:
            raise ValueError("the derived gate needs the partial-solution covariance")
        if not 0 < self.chi2_quantile < 1:
            raise ValueError("chi2_quantile must lie in (0, 1)")

    def chi2_limits(self, n_stars: int) -> dict[int, float]:
        """Bound on the weighted residual sum for k = 5..n_stars stars."""
        if n_stars <= 4:
            return {}
        q = 1.0 - (1.0 - self.chi2_quantile) / (n_stars - 4)
        return {k: float(chi2_dist.ppf(q, k - 4)) for k in range(5, n_stars + 1)}


def search_order(candidate_sets) -> list[int]:
    """Fewest candidates first, ties broken by the sharpest best candidate."""
    def key(i):
        cands = candidate_sets[i]
        best = min(cands, key=lambda c: c.objective)
        return (len(cands), best.sigma, i)
    return sorted(range(len(candidate_sets)), key=key)


class _Search:
    def __init__(self, candidate_sets, los_list, b, region: SearchRegion, settings: SearchSettings):
        self.sets = candidate_sets
        self.U = np.asarray(los_list, float)
        self.b = np.asarray(b, float)
        self.region = region
        self.cfg = settings
        self.order = search_order(candidate_sets)
        self.solutions: list[StateSolution] = []
        self._center = np.asarray(region.center, float)
        self._mid = region.time_center + self.U @ self._center / C_AU_S
        self._R = region.radius / C_AU_S
        self._chi2_limit = settings.chi2_limits(len(los_list))

    # The two pre-gates below only reject candidates that could not survive the
    # final region and per-star residual checks anyway.

    def pair_ok(self, i, cand, j, other) -> bool:
        du = self.U[i] - self.U[j]
        expect = float(du @ self._center) / C_AU_S
        slack = np.linalg.norm(du) * self._R + self.cfg.max_star_residual * (cand.sigma + other.sigma)
        return abs(cand.delta_t - other.delta_t - expect) <= slack * (1 + 1e-12)

    def single_ok(self, i, cand) -> bool:
        slack = self.region.half_width + self._R + self.cfg.max_star_residual * cand.sigma
        return abs(cand.delta_t - self._mid[i]) <= slack * (1 + 1e-12)

    def gate_ok(self, i, cand, partial: StateSolution, k: int) -> bool:
        """Wavefront gate for the k-th chosen star given the (k-1)-star solution."""
        a = np.concatenate([[1.0], self.U[i]])
        resid = float(a @ partial.state) - (C_AU_S * cand.delta_t - self.U[i] @ self.b)
        var = (C_AU_S * cand.sigma) ** 2
        if self.cfg.gate_with_solution_covariance:
            var += float(a @ partial.covariance @ a)
        if self.cfg.gate_sigmas is None:
            return resid * resid <= (self._chi2_limit[k] - partial.chi2) * var * (1 + 1e-9)
        return abs(resid) < self.cfg.gate_sigmas * math.sqrt(var)

    def solve(self, stars, chosen) -> StateSolution | None:
        sys_ = build_system([c.delta_t for c in chosen], [c.sigma for c in chosen], self.U[stars], self.b)
        try:
            sol = solve_wls(sys_, self.b)
        except SolverError:
            return None
        if not self.region.contains(sol.position, sol.clock_offset):
            return None
        res = (sys_.A @ sol.state - sys_.d) * np.sqrt(np.diag(sys_.W))
        if np.max(np.abs(res)) > self.cfg.max_star_residual:
            return None
        k = len(stars)
        if k > 4 and sol.chi2 > self._chi2_limit[k]:
            return None
        return sol

    def run(self, depth=0, chosen=(), chosen_idx=(), partial=None):
        star = self.order[depth]
        stars = self.order[:depth + 1]
        for ci, cand in enumerate(self.sets[star]):
            if not self.single_ok(star, cand):
                continue
            if not all(self.pair_ok(star, cand, self.order[j], chosen[j]) for j in range(depth)):
                continue
            if partial is not None and not self.gate_ok(star, cand, partial, depth + 1):
                continue
            now = chosen + (cand,)
            idx = chosen_idx + (ci,)
            sol = None
            if depth + 1 >= 4:
                sol = self.solve(stars, now)
                if sol is None:
                    continue
            if depth + 1 < len(self.order):
                self.run(depth + 1, now, idx, sol)
            else:
                sel = [0] * len(self.order)
                dts = [0.0] * len(self.order)
                for s_, i_, c_ in zip(self.order, idx, now):
                    sel[s_], dts[s_] = i_, c_.delta_t
                sol.selection, sol.delta_t = tuple(sel), tuple(dts)
                self.solutions.append(sol)


def ambiguity_search(candidate_sets, los_list, b=(0.0, 0.0, 0.0), region: SearchRegion = SearchRegion(),
                     settings: SearchSettings = SearchSettings()) -> list[StateSolution]:
    """All full-depth wavefront intersections inside ``region``.

    ``candidate_sets[i]`` lists the shift candidates of star i and ``los_list[i]``
    its line of sight.  Each solution records the chosen candidate index per star.
    """
    if len(candidate_sets) < 4 or any(len(c) == 0 for c in candidate_sets):
        raise SolverError("need at least four stars with at least one candidate each")
    search = _Search(candidate_sets, los_list, b, region, settings)
    search.run()
    return search.solutions


def select_solution(solutions: list[StateSolution]) -> StateSolution:
    if not solutions:
        raise SolverError("ambiguity unresolved")
    return min(solutions, key=lambda s: (s.residual_norm, abs(s.clock_offset)))


def time_position_ellipse(solution: StateSolution, nsigma: float = 3.0, npts: int = 181):
    """Analytic uncertainty ellipse in (clock offset s, position-error au) axes.

    The position axis is the projection of the position covariance on the
    direction of largest position variance.
    """
    cov = solution.covariance
    pos = cov[1:, 1:]
    w, v = np.linalg.eigh(pos)
    e = v[:, -1]
    J = np.zeros((2, 4))
    J[0, 0] = 1.0 / C_AU_S
    J[1, 1:] = e
    return covariance_ellipse(J @ cov @ J.T, nsigma, npts)


def covariance_ellipse(cov2, nsigma=3.0, npts=181, center=(0.0, 0.0)):
    w, v = np.linalg.eigh(np.asarray(cov2, float))
    ang = np.linspace(0, 2 * math.pi, npts)
    circle = np.vstack([np.cos(ang), np.sin(ang)])
    pts = v @ (nsigma * np.sqrt(np.maximum(w, 0))[:, None] * circle)
    return pts[0] + center[0], pts[1] + center[1]
