"""Monte Carlo estimation of the non-intersection functional Z_n and the
decay exponents of E[Z_n^lambda] across scales, with subadditivity
diagnostics, plus the two-route conditional avoidance floor."""

from dataclasses import dataclass, field
import math

import numpy as np

from . import fastpath
from .brownian import sample_until_exit
from .geometry import PolylineIndex, find_uncovered_cone
from .rng import RngStream


class ExponentError(ValueError):
    pass


@dataclass(frozen=True)
class ZSample:
    """One conditional survival estimate: the fraction of fresh paths from
    (1,0,0) that reach radius e^n without entering the tube-sausage of the
    frozen traces."""

    n: float
    k: int
    value: float
    tube: float
    master_seed: int
    stream_id: int

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ExponentError("Z value must lie in [0, 1]")


def sample_Zn(k: int, n: float, outer: int, inner: int, tube: float,
              dt: float, rng: RngStream, report_half_tube: bool = True,
              method: str = "wos"):
    """For each of `outer` replicas: freeze k traces from the origin to the
    sphere of radius e^n, then estimate by `inner` Monte Carlo runs the
    probability that an independent path from (1,0,0) reaches the sphere
    without entering the tube-sausage of the union.  Emits one ZSample per
    replica at radius `tube` and (optionally) one at `tube/2` from the same
    streams, for the thinning extrapolation.

    method="wos": the fresh path is realized by walk-on-spheres absorbing on
    the sausage surface (capture shell tube/16), which samples the avoidance
    event exactly in law with no time discretization of the fresh path.
    method="walk": fixed-dt Gaussian walk, killed when the swept step segment
    comes within the tube radius (steps cannot jump the sausage undetected);
    carries the O(sqrt(dt)) bias but extends pathwise across scales, which
    the coupled monotonicity checks rely on.
    """
    if k < 1 or n <= 0 or tube <= 0 or outer < 1 or inner < 1:
        raise ExponentError("need k >= 1, n > 0, tube > 0 and positive sample counts")
    if method not in ("wos", "walk"):
        raise ExponentError("method must be 'wos' or 'walk'")
    R = math.exp(n)
    if 1.0 >= R:
        raise ExponentError("scale too small: the fresh start sits outside the sphere")
    start = np.array([1.0, 0.0, 0.0])
    max_steps = int(40.0 * R * R / dt) + 1000
    out = []
    for rep in range(outer):
        traces = [
            sample_until_exit(np.zeros(3), R, dt,
                              rng.labeled(f"zn-trace{i}").substream(rep))
            for i in range(k)
        ]
        # near-field queries terminate on the first occupied shells, so cells
        # a little above the tube radius keep candidate scans local; the
        # coarse clearance field absorbs all far-field queries
        cell = 8.0 * tube if method == "walk" else 2.5 * tube
        idx = PolylineIndex.from_paths(traces, cell_size=cell, dt=dt)
        sub = rng.labeled("zn-fresh").substream(rep)
        streams = np.array([sub.substream(j << 32).stream_id for j in range(inner)],
                           dtype=np.uint64)
        grid = (idx.cell_size, idx._keys, idx._starts, idx._items, idx.A, idx.B)
        coarse = (idx._cD, idx._cdims, idx._corigin, idx._ccell)
        if method == "wos":
            flags = fastpath.zn_wos_many(
                start[0], start[1], start[2], R, float(tube), float(tube) / 16.0,
                50_000, np.uint64(rng.master_seed), streams, *grid, *coarse)
            z_full = float(np.mean(flags == 0))
            out.append(ZSample(n, k, z_full, tube, rng.master_seed, sub.stream_id))
            if report_half_tube:
                flags_h = fastpath.zn_wos_many(
                    start[0], start[1], start[2], R, float(tube) / 2.0,
                    float(tube) / 32.0, 50_000, np.uint64(rng.master_seed),
                    streams, *grid, *coarse)
                out.append(ZSample(n, k, float(np.mean(flags_h == 0)), tube / 2.0,
                                   rng.master_seed, sub.stream_id))
        else:
            cls, _ = fastpath.bm_survival_many(
                start[0], start[1], start[2], R, float(dt),
                np.uint64(rng.master_seed), streams, float(tube),
                float(tube) / 2.0, *grid, max_steps)
            z_full = float(np.mean(cls == 0))
            out.append(ZSample(n, k, z_full, tube, rng.master_seed, sub.stream_id))
            if report_half_tube:
                z_half = float(np.mean((cls == 0) | (cls == 1)))
                out.append(ZSample(n, k, z_half, tube / 2.0, rng.master_seed,
                                   sub.stream_id))
    return out


@dataclass
class XiEstimate:
    lam: float
    k: int
    n_values: np.ndarray
    a_values: np.ndarray
    a_variances: np.ndarray
    slope: float
    slope_stderr: float
    intercept: float
    dropped_n: list = field(default_factory=list)
    subadditivity_violations: list = field(default_factory=list)


def _weighted_line(x: np.ndarray, y: np.ndarray, var: np.ndarray):
    w = 1.0 / np.maximum(var, 1e-300)
    xbar = float((w * x).sum() / w.sum())
    ybar = float((w * y).sum() / w.sum())
    sxx = float((w * (x - xbar) ** 2).sum())
    if sxx <= 0:
        raise ExponentError("degenerate scale grid")
    slope = float((w * (x - xbar) * (y - ybar)).sum() / sxx)
    intercept = ybar - slope * xbar
    return slope, math.sqrt(1.0 / sxx), intercept


def estimate_xi(zsamples, lam: float) -> XiEstimate:
    """a_n = -log mean(Z_n^lambda) per scale, then the weighted-least-squares
    slope of a_n against n (delta-method weights).  Replicas with Z = 0
    contribute 0 to the mean (the mean is taken before the log).  Scales
    where every replica is 0 are dropped and reported."""
    if lam <= 0:
        raise ExponentError("lambda must be positive")
    groups = {}
    for z in zsamples:
        groups.setdefault(z.n, []).append(z.value)
    if len(groups) < 3:
        raise ExponentError("need at least three distinct scales")
    ns, avals, avars, dropped = [], [], [], []
    for nval in sorted(groups):
        vals = np.array(groups[nval], dtype=np.float64)
        powed = np.where(vals > 0.0, vals, 0.0) ** lam
        mean = float(powed.mean())
        if mean <= 0.0:
            dropped.append(nval)
            continue
        var_mean = float(powed.var(ddof=1)) / len(powed) if len(powed) > 1 else np.nan
        ns.append(nval)
        avals.append(-math.log(mean))
        avars.append(var_mean / mean ** 2 if np.isfinite(var_mean) else 1.0)
    if len(ns) < 3:
        raise ExponentError("fewer than three usable scales after drops")
    ns = np.array(ns)
    avals = np.array(avals)
    avars = np.maximum(np.array(avars), 1e-300)
    slope, se, intercept = _weighted_line(ns, avals, avars)
    k = next((z.k for z in zsamples if hasattr(z, "k")), 0)
    lookup = {round(float(n), 9): i for i, n in enumerate(ns)}
    violations = []
    for i, n1 in enumerate(ns):
        for j, n2 in enumerate(ns):
            key = round(float(n1 + n2), 9)
            if key in lookup:
                kk = lookup[key]
                sl = 2.0 * (math.sqrt(avars[i]) + math.sqrt(avars[j]) + math.sqrt(avars[kk]))
                if avals[kk] > avals[i] + avals[j] + sl:
                    violations.append((float(n1), float(n2),
                                       float(avals[kk] - avals[i] - avals[j])))
    return XiEstimate(lam, k, ns, avals, avars, slope, se, intercept,
                      dropped_n=dropped, subadditivity_violations=violations)


def xi_with_tube_extrapolation(zsamples, lam: float):
    """Split samples into the full- and half-tube variants (per scale: the
    tube scales with e^n, so the split is by rank within each n group), fit
    both slopes and the two-point extrapolation to zero thickening:
    2 s(half) - s(full)."""
    by_n = {}
    for z in zsamples:
        by_n.setdefault(z.n, set()).add(z.tube)
    full_samples, half_samples = [], []
    for nval, tubes in by_n.items():
        if len(tubes) != 2:
            raise ExponentError(
                f"expected exactly two tube radii at scale {nval}, got {sorted(tubes)}")
        hi = max(tubes)
        for z in zsamples:
            if z.n == nval:
                (full_samples if z.tube == hi else half_samples).append(z)
    full = estimate_xi(full_samples, lam)
    half = estimate_xi(half_samples, lam)
    slope_ex = 2.0 * half.slope - full.slope
    se_ex = math.sqrt(4.0 * half.slope_stderr ** 2 + full.slope_stderr ** 2)
    return full, half, slope_ex, se_ex


@dataclass
class AvoidFloorReport:
    start: np.ndarray
    start_distance: float
    hit_radius: float
    direct: float
    direct_stderr: float
    cone_forced: float
    cone_stderr: float
    cone_found: bool
    holds: bool


def conditional_avoid_floor(k: int, n_dyadic: int, u1: float, rng: RngStream,
                            samples: int = 4000, dt: float = 1e-4,
                            trace_radius: float = 1.5) -> AvoidFloorReport:
    """Two-route lower-bound check for conditional avoidance.

    Freezes k traces, picks a start at distance about 2^-n_dyadic from them,
    then estimates the probability of avoiding the thin sausage until exiting
    the unit ball both directly (rejection Monte Carlo) and by forcing the
    walk to stay inside an uncovered cone around the start.  The direct
    estimate must dominate the cone-forced one (up to 3 sigma)."""
    if n_dyadic < 1 or u1 <= 1.0:
        raise ExponentError("need n_dyadic >= 1 and u1 > 1")
    target = 2.0 ** (-n_dyadic)
    hit_radius = target / 8.0
    traces = [
        sample_until_exit(np.array([0.35, 0.0, 0.0]), trace_radius, dt,
                          rng.labeled(f"floor-trace{i}"))
        for i in range(k)
    ]
    idx = PolylineIndex.from_paths(traces, cell_size=max(hit_radius, math.sqrt(dt)), dt=dt)

    # start: walk outward from a mid-trace anchor until the distance is right
    anchor_path = traces[0].points
    mid = anchor_path[len(anchor_path) // 2]
    direction = mid / np.linalg.norm(mid) if np.linalg.norm(mid) > 0 else np.array([1.0, 0.0, 0.0])
    start = None
    for scale in np.linspace(target, 8 * target, 200):
        cand = mid + scale * direction
        if np.linalg.norm(cand) >= 0.75:
            break
        d = idx.min_dist(cand, cutoff=4 * target)
        if target / 2 <= d <= 2 * target:
            start = cand
            break
    if start is None:
        start = mid + 2 * target * direction
    d_start = idx.min_dist(start, cutoff=1.0)

    streams = np.array([rng.labeled("floor-direct").substream(i).stream_id
                        for i in range(samples)], dtype=np.uint64)
    max_steps = int(60.0 / dt)
    cls, _ = fastpath.bm_survival_many(
        start[0], start[1], start[2], 1.0, float(dt),
        np.uint64(rng.master_seed), streams, float(hit_radius), float(hit_radius),
        idx.cell_size, idx._keys, idx._starts, idx._items, idx.A, idx.B,
        max_steps)
    direct = float(np.mean(cls == 0))
    direct_se = math.sqrt(max(direct * (1 - direct), 0.0) / samples)

    v = find_uncovered_cone(idx, n_dyadic, u1, vertex=start, ball_radius=1.5,
                            guard=hit_radius)
    if v is None:
        return AvoidFloorReport(start, float(d_start), hit_radius, direct,
                                direct_se, np.nan, np.nan, False, True)
    streams2 = np.array([rng.labeled("floor-cone").substream(i).stream_id
                         for i in range(samples)], dtype=np.uint64)
    ok = fastpath.conestay_many(
        start[0], start[1], start[2], start[0], start[1], start[2],
        v[0], v[1], v[2], float(u1 ** (-n_dyadic)), float(target), 1.0,
        float(dt), np.uint64(rng.master_seed), streams2, max_steps)
    forced = float(np.mean(ok == 1))
    forced_se = math.sqrt(max(forced * (1 - forced), 0.0) / samples)
    holds = direct >= forced - 3.0 * math.sqrt(direct_se ** 2 + forced_se ** 2)
    return AvoidFloorReport(start, float(d_start), hit_radius, direct,
                            direct_se, forced, forced_se, True, holds)
