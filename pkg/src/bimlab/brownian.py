"""Seeded 3D Brownian simulation and the exact sphere-exit machinery.

Paths are Gaussian-increment walks at a fixed time step, terminated on sphere
exit with the final point projected onto the sphere along the last step; the
O(sqrt(dt)) discretization bias this carries is accepted and documented.
Walk-on-spheres realizes harmonic measure in a ball minus a thin obstacle,
with an eps-capture shell making the (polar) curve hittable.
"""

from dataclasses import dataclass
from enum import IntEnum
import math

import numpy as np

from . import fastpath
from .geometry import PolylineIndex
from .rng import RngStream

DEFAULT_DT = 1e-4


class BrownianError(ValueError):
    pass


@dataclass(frozen=True)
class Path3D:
    """Time-stamped polyline: points at uniform spacing dt, with the stream
    address that produced it (replays are bit-identical)."""

    points: np.ndarray
    dt: float
    master_seed: int = 0
    stream_id: int = 0

    def __post_init__(self):
        pts = np.ascontiguousarray(np.atleast_2d(self.points), dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 1:
            raise BrownianError("path needs at least one 3D point")
        if not np.all(np.isfinite(pts)):
            raise BrownianError("path coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.dt <= 0:
            raise BrownianError("dt must be positive")

    def __len__(self):
        return len(self.points)

    @property
    def timestamps(self) -> np.ndarray:
        return np.arange(len(self.points)) * self.dt

    def index(self, cell_size: float = None) -> PolylineIndex:
        return PolylineIndex.from_points(self.points, cell_size=cell_size, dt=self.dt)


@dataclass(frozen=True)
class WosConfig:
    capture_eps: float = 1e-3
    outer_radius: float = 1.0
    max_steps: int = 10_000
    inner_radius: float = None  # optional absorbing inner sphere

    def __post_init__(self):
        if self.capture_eps <= 0:
            raise BrownianError("capture_eps must be positive")
        if self.max_steps < 1:
            raise BrownianError("max_steps must be >= 1")
        if self.outer_radius <= 0:
            raise BrownianError("outer radius must be positive")
        if self.inner_radius is not None and not 0 < self.inner_radius < self.outer_radius:
            raise BrownianError("inner radius must sit inside the outer radius")


class WosFlag(IntEnum):
    OUTER_BOUNDARY = 0
    SLIT_CAPTURE = 1
    STEP_CAP = 2
    INNER_BOUNDARY = 3


_CHUNK = 16384


def sample_until_exit(start, R: float, dt: float, rng: RngStream,
                      max_steps: int = 200_000_000) -> Path3D:
    """Gaussian-increment path from start to its first exit of the sphere of
    radius R, final point projected onto the sphere.  Deterministic in
    (start, R, dt, rng)."""
    start = np.asarray(start, dtype=np.float64)
    if dt <= 0:
        raise BrownianError("dt must be positive")
    r0 = float(np.linalg.norm(start))
    if r0 > R:
        raise BrownianError("start lies outside the target sphere")
    if r0 == R:
        return Path3D(start[None, :], dt, rng.master_seed, rng.stream_id)
    chunks = [start[None, :]]
    px, py, pz = start
    step0 = 0
    while step0 < max_steps:
        buf = np.empty((min(_CHUNK, max_steps - step0), 3))
        nfill, done, px, py, pz, _ = fastpath.bm_exit_chunk(
            px, py, pz, float(R), float(dt),
            np.uint64(rng.master_seed), np.uint64(rng.stream_id),
            np.uint64(step0), buf)
        chunks.append(buf[:nfill])
        step0 += nfill
        if done:
            return Path3D(np.vstack(chunks), dt, rng.master_seed, rng.stream_id)
    raise BrownianError(f"no sphere exit within {max_steps} steps")


def annulus_exit_prob(a: float, r: float, b: float) -> float:
    """Probability that a Brownian point started at radius r hits the inner
    sphere (radius a) before the outer sphere (radius b):
    (1/r - 1/b) / (1/a - 1/b)."""
    if not 0 < a <= r <= b:
        raise BrownianError("need 0 < a <= r <= b")
    if a == b:
        raise BrownianError("degenerate annulus")
    return (1.0 / r - 1.0 / b) / (1.0 / a - 1.0 / b)


def chain_down_prob(p: float) -> float:
    """Down-step probability of the concentric-sphere chain with spacing
    exp(1/p): e^{-1/p} / (1 + e^{-1/p}).  Equals annulus_exit_prob at the
    geometric midpoint."""
    if p < 1:
        raise BrownianError("need p >= 1")
    e = math.exp(-1.0 / p)
    return e / (1.0 + e)


def sphere_chain_step_mgf(p: float) -> float:
    """E[exp(-X/(2p))] for one +-1 chain step: 2 e^{-1/(2p)} / (1 + e^{-1/p})."""
    if p < 1:
        raise BrownianError("need p >= 1")
    return 2.0 * math.exp(-0.5 / p) / (1.0 + math.exp(-1.0 / p))


def sphere_chain_mgf_exponent(p: float) -> float:
    """-p^2 log of the step mgf; bounded below by an absolute constant > 0
    over p >= 1 (the minimum sits at p = 1)."""
    return -(p ** 2) * math.log(sphere_chain_step_mgf(p))


SPHERE_CHAIN_MGF_FLOOR = -math.log(2.0 * math.exp(-0.5) / (1.0 + math.exp(-1.0)))


def simulate_sphere_chain(p: float, t0: int, rng: RngStream, steps: int = None,
                          level_exceeds: int = None, max_steps: int = 50_000_000):
    """Exact +-1 level chain with the sphere-crossing law (no path
    discretization).  Either runs a fixed number of steps (returns the level
    sequence including t0) or until the level first exceeds level_exceeds
    (returns the step count)."""
    if p < 1:
        raise BrownianError("need p >= 1")
    pd = chain_down_prob(p)
    if steps is not None:
        if steps < 0:
            raise BrownianError("steps must be >= 0")
        return np.asarray(fastpath.chain_levels(
            float(pd), np.int64(t0), int(steps),
            np.uint64(rng.master_seed), np.uint64(rng.stream_id)))
    if level_exceeds is None:
        raise BrownianError("give either steps or level_exceeds")
    return int(fastpath.chain_count_until(
        float(pd), np.int64(t0), np.int64(level_exceeds), int(max_steps),
        np.uint64(rng.master_seed), np.uint64(rng.stream_id)))


def _grid_args(idx: PolylineIndex):
    return (idx.cell_size, idx._keys, idx._starts, idx._items, idx.A, idx.B)


def walk_on_spheres(start, slit: PolylineIndex, cfg: WosConfig, rng: RngStream):
    """One walk-on-spheres run; returns (exit_point, WosFlag)."""
    exits, flags, _ = walk_on_spheres_many(np.asarray(start, dtype=np.float64)[None, :],
                                           slit, cfg, rng, n=1)
    return exits[0], WosFlag(int(flags[0]))


def walk_on_spheres_many(starts, slit: PolylineIndex, cfg: WosConfig,
                         rng: RngStream, n: int = None):
    """Vector of walk-on-spheres runs.  starts may be a single point repeated
    n times (per-sample substreams) or an (N, 3) batch."""
    starts = np.atleast_2d(np.asarray(starts, dtype=np.float64))
    if n is not None and len(starts) == 1:
        starts = np.repeat(starts, n, axis=0)
    streams = np.array(
        [rng.substream(i).stream_id for i in range(len(starts))], dtype=np.uint64)
    if slit is None:
        slit = PolylineIndex(np.empty((0, 3)), np.empty((0, 3)))
    inner = -1.0 if cfg.inner_radius is None else float(cfg.inner_radius)
    exits, flags, nsteps = fastpath.wos_many(
        np.ascontiguousarray(starts), float(cfg.outer_radius), inner,
        float(cfg.capture_eps), int(cfg.max_steps),
        np.uint64(rng.master_seed), streams,
        *_grid_args(slit), slit._pilots)
    return exits, flags, nsteps


def mc_cylinder_hit(d: float, samples: int, rng: RngStream,
                    start=(0.5, 0.0, math.pi / 2), capture_frac: float = 0.02,
                    max_steps: int = 20_000):
    """Monte Carlo estimate of P(hit the coaxial cylinder of radius d before
    leaving the unit cylinder of height pi), via walk-on-spheres with an
    eps-capture shell on the inner cylinder.  Returns (estimate, stderr)."""
    if not 0 < d < 1:
        raise BrownianError("need 0 < d < 1")
    if samples < 1:
        raise BrownianError("need at least one sample")
    x0, y0, z0 = (float(v) for v in start)
    if math.hypot(x0, y0) <= d:
        return 1.0, 0.0
    eps = min(1e-3, capture_frac * d)
    streams = np.array([rng.substream(i).stream_id for i in range(samples)],
                       dtype=np.uint64)
    flags = fastpath.cyl_hit_wos_many(float(d), x0, y0, z0, float(eps),
                                      int(max_steps),
                                      np.uint64(rng.master_seed), streams)
    hits = float(np.sum(flags == 1))
    est = hits / samples
    return est, math.sqrt(max(est * (1.0 - est), 0.0) / samples)


def cylinder_ode_profile(d: float, grid: int = 64, internal_steps: int = 10_000):
    """Radial profile f on [d, 1] solving (r f')' = r f with f(d) = 1,
    f(1) = 0: fourth-order fixed-step integration in s = log r, shooting from
    r = 1 with slope -1 and normalizing by the value at d.  Returns
    (r_values, f_values) with r decreasing from 1 to d."""
    if not 0 < d < 0.5:
        raise BrownianError("need 0 < d < 1/2")
    if grid < 10:
        raise BrownianError("need grid >= 10")
    # in s = log r: f' = g, g' = e^{2s} f  (g = r df/dr)
    per = max(1, int(math.ceil(internal_steps / (grid - 1))))
    nsteps = per * (grid - 1)
    h = math.log(d) / nsteps  # negative
    f, g = 0.0, -1.0
    s = 0.0
    out_f = np.empty(grid)
    out_r = np.empty(grid)
    out_f[0] = f
    out_r[0] = 1.0
    k = 1

    def deriv(s, f, g):
        return g, math.exp(2.0 * s) * f

    for i in range(nsteps):
        k1f, k1g = deriv(s, f, g)
        k2f, k2g = deriv(s + 0.5 * h, f + 0.5 * h * k1f, g + 0.5 * h * k1g)
        k3f, k3g = deriv(s + 0.5 * h, f + 0.5 * h * k2f, g + 0.5 * h * k2g)
        k4f, k4g = deriv(s + h, f + h * k3f, g + h * k3g)
        f += h / 6.0 * (k1f + 2.0 * k2f + 2.0 * k3f + k4f)
        g += h / 6.0 * (k1g + 2.0 * k2g + 2.0 * k3g + k4g)
        s += h
        if (i + 1) % per == 0:
            out_f[k] = f
            out_r[k] = math.exp(s)
            k += 1
    scale = out_f[-1]
    if scale <= 0:
        raise BrownianError("shooting solution lost positivity")
    out_f = out_f / scale
    out_f[0] = 0.0
    out_f[-1] = 1.0
    out_r[-1] = d
    return out_r, out_f


def mc_sausage_confinement(k: int, R: float, tube: float, samples: int,
                           rng: RngStream, dt: float = None,
                           trace_margin: float = 1.2):
    """Monte Carlo probability that a fresh path stays inside the tube-sausage
    of k freshly frozen traces until exiting the ball of radius R around the
    common start.  Fresh traces per replica (the estimate is over the joint
    law).  Returns (estimate, stderr)."""
    if R <= 0 or tube <= 0:
        raise BrownianError("need positive R and tube")
    if samples < 1:
        raise BrownianError("zero samples")
    if tube >= R:
        return 1.0, 0.0
    if dt is None:
        dt = min(1e-2, (tube / 6.0) ** 2)
    hits = 0
    for s in range(samples):
        traces = [
            sample_until_exit(np.zeros(3), trace_margin * R, dt,
                              rng.labeled(f"confine-trace-{i}").substream(s))
            for i in range(k)
        ]
        idx = PolylineIndex.from_paths(traces, cell_size=tube)
        streams = np.array([rng.labeled("confine-test").substream(s).stream_id],
                           dtype=np.uint64)
        # survival here means: never leaves the sausage before exiting B(0,R);
        # reuse the kill-on-approach kernel with the complement logic inline
        ok = _confined_until_exit(idx, R, dt, tube,
                                  np.uint64(rng.master_seed), streams)
        hits += int(ok)
    est = hits / samples
    return est, math.sqrt(max(est * (1.0 - est), 0.0) / samples)


def _confined_until_exit(idx: PolylineIndex, R: float, dt: float, tube: float,
                         seed, streams) -> bool:
    """True when the walk exits B(0, R) while staying within tube of the
    indexed set at every sampled point."""
    px, py, pz = 0.0, 0.0, 0.0
    step0 = 0
    max_steps = int(40 * R * R / dt) + 1000
    while step0 < max_steps:
        buf = np.empty((min(_CHUNK, max_steps - step0), 3))
        nfill, done, px, py, pz, _ = fastpath.bm_exit_chunk(
            px, py, pz, float(R), float(dt), seed, streams[0],
            np.uint64(step0), buf)
        for i in range(nfill):
            if idx.min_dist(buf[i], cutoff=tube) > tube:
                return False
        step0 += nfill
        if done:
            return True
    return False
