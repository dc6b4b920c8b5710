"""Empirical layer kernels in a ball shell minus a simulated trace, good-layer
statistics, layered chain coupling, conditional-separation experiments, and
the multiscale error-product diagnostic."""

from dataclasses import dataclass, field
import math

import numpy as np

from . import fastpath, kernelfun
from .brownian import WosConfig, walk_on_spheres_many
from .geometry import PolylineIndex, fibonacci_directions
from .kernelfun import DiscreteKernel, switching_constant
from .rng import RngStream


class SlitError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    """Shell layer i: inner/mid/outer radii (e^i, e^{i+0.5}, e^{i+1}) around
    the origin, slit given by an immutable polyline index."""

    index: int
    trace: PolylineIndex

    @property
    def radii(self):
        i = self.index
        return math.exp(i), math.exp(i + 0.5), math.exp(i + 1.0)


def equal_area_band_edges(cells: int) -> np.ndarray:
    """z = cos(theta) edges of `cells` equal-area latitude bands, 1 down to -1."""
    return 1.0 - 2.0 * np.arange(cells + 1) / cells


def band_of(points: np.ndarray, cells: int) -> np.ndarray:
    z = points[:, 2] / np.linalg.norm(points, axis=1)
    k = np.floor((1.0 - z) * cells / 2.0).astype(np.int64)
    return np.clip(k, 0, cells - 1)


@dataclass
class EmpiricalKernel:
    """Counts of outer-sphere exits per (source, latitude cell), conditioned
    on not being absorbed by the inner sphere or the slit; alpha is a
    pseudo-count added at read time so the smoothed kernel has no zeros."""

    sources: np.ndarray
    counts: np.ndarray
    alpha: float
    discarded: np.ndarray
    step_capped: np.ndarray
    skipped_sources: list = field(default_factory=list)

    @property
    def cells(self) -> int:
        return self.counts.shape[1]

    def smoothed(self) -> np.ndarray:
        return self.counts + self.alpha

    def nonzero_rows(self) -> np.ndarray:
        if self.alpha > 0:
            return self.smoothed()
        rows = self.counts[self.counts.sum(axis=1) > 0]
        if len(rows) == 0:
            raise SlitError("all rows empty and no smoothing")
        return rows

    def row_probs(self) -> np.ndarray:
        s = self.smoothed()
        return s / s.sum(axis=1, keepdims=True)


def mid_sphere_sources(layer: LayerSpec, n_sources: int, capture_eps: float):
    """Spiral-lattice source points on the mid sphere, skipping those inside
    the slit capture shell; returns (points, skipped indices)."""
    _, mid, _ = layer.radii
    cand = fibonacci_directions(n_sources) * mid
    keep, skipped = [], []
    for i, p in enumerate(cand):
        if len(layer.trace) and layer.trace.min_dist(p, cutoff=capture_eps) <= capture_eps:
            skipped.append(i)
        else:
            keep.append(p)
    return np.array(keep) if keep else np.empty((0, 3)), skipped


def estimate_layer_kernel(layer: LayerSpec, sources: int, cells: int,
                          samples_per_source: int, alpha: float,
                          rng: RngStream, capture_eps_rel: float = 1e-3,
                          max_steps: int = 20_000) -> EmpiricalKernel:
    """Walk-on-spheres harmonic-measure sampling in
    ball(outer) minus (ball(inner) union slit): outer exits are binned into
    equal-area latitude cells, inner/slit absorptions are discarded as the
    conditioning."""
    if sources < 1 or cells < 1 or samples_per_source < 1:
        raise SlitError("need at least one source, cell and sample")
    inner, mid, outer = layer.radii
    eps = capture_eps_rel * outer
    pts, skipped = mid_sphere_sources(layer, sources, eps)
    if not len(pts):
        raise SlitError("every source sits inside the slit capture shell")
    cfg = WosConfig(capture_eps=eps, outer_radius=outer, max_steps=max_steps,
                    inner_radius=inner)
    counts = np.zeros((len(pts), cells), dtype=np.int64)
    discarded = np.zeros(len(pts), dtype=np.int64)
    capped = np.zeros(len(pts), dtype=np.int64)
    for si, src in enumerate(pts):
        sub = rng.labeled(f"layer{layer.index}-src{si}")
        exits, flags, _ = walk_on_spheres_many(src[None, :], layer.trace, cfg,
                                               sub, n=samples_per_source)
        good = flags == 0
        capped[si] = int(np.sum(flags == 2))
        discarded[si] = int(np.sum(~good)) - capped[si]
        if good.any():
            b = band_of(exits[good], cells)
            np.add.at(counts[si], b, 1)
    return EmpiricalKernel(pts, counts, float(alpha), discarded, capped,
                           skipped_sources=skipped)


def layer_switching_constant(ek: EmpiricalKernel) -> float:
    """Switching constant of the smoothed count matrix (finite when alpha>0;
    zero rows dropped when alpha == 0)."""
    return switching_constant(ek.nonzero_rows())


def good_layer_fraction(trace: PolylineIndex, layer_indices, M: float,
                        rng: RngStream, sources: int = 10, cells: int = 6,
                        samples_per_source: int = 400, alpha: float = 0.5):
    """Fraction of layers whose empirical switching constant is below M;
    returns (fraction, stderr, per-layer K values).

    Note the finite-sample ceiling: with row totals N and pseudo-count alpha
    the empirical K cannot resolve values beyond about (2N/alpha)^2, and even
    the slit-free shell kernel has a large true K (antipodal sources have
    nearly disjoint exit laws), so M only makes sense calibrated against the
    slit-free baseline at the same estimation parameters."""
    ks = []
    for i in layer_indices:
        outer = math.exp(i + 1.0)
        cell = max(outer / 16.0, trace.cell_size)
        layer_idx = PolylineIndex(trace.A, trace.B, cell_size=cell, dt=trace.dt) \
            if len(trace) else trace
        ek = estimate_layer_kernel(LayerSpec(i, layer_idx), sources, cells,
                                   samples_per_source, alpha,
                                   rng.labeled(f"glf-{i}"))
        ks.append(layer_switching_constant(ek))
    ks = np.array(ks)
    good = ks < M
    frac = float(good.mean())
    se = math.sqrt(max(frac * (1 - frac), 0.0) / len(ks))
    return frac, se, ks


def sample_coupled_step(mu: np.ndarray, nu: np.ndarray, u: np.ndarray):
    """Draw a maximally coupled pair of cell indices from two probability
    rows using three uniforms: equality with probability 1 - TV, otherwise
    independent draws from the normalized excesses."""
    mu = mu / mu.sum()
    nu = nu / nu.sum()
    mins = np.minimum(mu, nu)
    match = mins.sum()
    if u[0] < match:
        c = int(np.searchsorted(np.cumsum(mins) / match, u[1], side="right"))
        c = min(c, len(mu) - 1)
        return c, c
    em = np.maximum(mu - nu, 0.0)
    en = np.maximum(nu - mu, 0.0)
    i = int(np.searchsorted(np.cumsum(em) / em.sum(), u[1], side="right"))
    j = int(np.searchsorted(np.cumsum(en) / en.sum(), u[2], side="right"))
    return min(i, len(mu) - 1), min(j, len(mu) - 1)


def layered_coupling_sim(kernels, starts, rng: RngStream):
    """Advance two chains through the layer kernels, maximally coupling the
    two conditional next-cell rows at each layer; once equal they stay glued.
    Returns the first layer after which the chains coincide, or None."""
    a, b = int(starts[0]), int(starts[1])
    if a == b:
        return 0
    mats = [k.values if isinstance(k, DiscreteKernel) else np.asarray(k, dtype=float)
            for k in kernels]
    for l in range(len(mats) - 1):
        if mats[l].shape[1] != mats[l + 1].shape[0]:
            raise SlitError(f"kernels at layers {l},{l + 1} are not composable")
    u = rng.uniforms(3 * len(mats))
    for l, mat in enumerate(mats):
        if a == b:
            return l
        ra = mat[a]
        rb = mat[b]
        if ra.sum() <= 0 or rb.sum() <= 0:
            raise SlitError(f"empty conditional row at layer {l}")
        a, b = sample_coupled_step(ra, rb, u[3 * l:3 * l + 3])
    return len(mats) if a == b else None


def coupling_failure_rate(kernels, starts, replicas: int, rng: RngStream):
    """Empirical probability the two chains are still uncoupled after the
    last layer; returns (rate, stderr)."""
    fail = 0
    for rep in range(replicas):
        out = layered_coupling_sim(kernels, starts, rng.substream(rep))
        fail += out is None
    rate = fail / replicas
    return rate, math.sqrt(max(rate * (1 - rate), 0.0) / replicas)


def csl_start_grid(trace: PolylineIndex, n_starts: int, min_dist: float,
                   ball_radius: float = 0.5, seed: int = 1):
    """Deterministic grid of start points inside ball_radius at distance
    >= min_dist from the trace."""
    dirs = fibonacci_directions(max(4 * n_starts, 64))
    radii = np.linspace(0.15, ball_radius * 0.95, 7)
    out = []
    for r in radii:
        for v in dirs:
            p = r * v
            if not len(trace) or trace.min_dist(p, cutoff=min_dist) > min_dist:
                out.append(p)
                if len(out) == n_starts:
                    return np.array(out)
    raise SlitError("could not place the requested number of starts")


@dataclass
class CslStartResult:
    start: np.ndarray
    attempts: int
    accepted: int
    exit_dists: np.ndarray

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempts if self.attempts else 0.0

    def separation_freq(self, delta: float):
        if self.accepted == 0:
            return np.nan, np.nan
        f = float(np.mean(self.exit_dists > delta))
        return f, math.sqrt(max(f * (1 - f), 0.0) / self.accepted)


def csl_experiment(traces, start_grid, delta_ladder, samples: int,
                   rng: RngStream, subset_fraction: float = 1.0,
                   eps_thick: float = 1e-3, dt: float = 1e-4,
                   min_accept: int = 0, max_attempts: int = None,
                   dist_cutoff: float = None):
    """Conditional-separation sampling: from each start, walks run to the
    unit sphere and are rejected on touching the eps-thickened subset of the
    frozen trace; among accepted walks we record the exit distance to the
    subset.  Frequencies above each delta in the ladder expose the
    conditional separation; acceptance rates expose the conditioning cost.

    subset_fraction < 1 keeps only that leading fraction of each trace's
    segments (a closed subset of the obstacle).  Returns a list of
    CslStartResult per (trace, start) combination.
    """
    deltas = sorted(delta_ladder, reverse=True)
    if any(d <= 0 for d in deltas):
        raise SlitError("delta ladder must be positive")
    if dist_cutoff is None:
        dist_cutoff = 1.05 * max(deltas)
    results = []
    for ti, tr in enumerate(traces):
        idx = _subset_index(tr, subset_fraction)
        for si, start in enumerate(np.atleast_2d(start_grid)):
            sub = rng.labeled(f"csl-t{ti}-s{si}")
            res = _csl_single(idx, start, samples, sub, eps_thick, dt,
                              min_accept, max_attempts, dist_cutoff)
            results.append((ti, si, res))
    return deltas, results


def _subset_index(tr, fraction: float):
    if isinstance(tr, PolylineIndex):
        if fraction >= 1.0:
            return tr
        keep = max(0, int(math.floor(len(tr) * fraction)))
        return PolylineIndex(tr.A[:keep], tr.B[:keep], cell_size=tr.cell_size, dt=tr.dt)
    pts = np.atleast_2d(np.asarray(getattr(tr, "points", tr), dtype=np.float64))
    if fraction < 1.0:
        keep = max(1, int(math.floor(len(pts) * fraction)))
        pts = pts[:keep]
    return PolylineIndex.from_points(pts, dt=getattr(tr, "dt", None))


def _csl_single(idx: PolylineIndex, start, samples: int, rng: RngStream,
                eps_thick: float, dt: float, min_accept: int,
                max_attempts: int, dist_cutoff: float = np.inf) -> CslStartResult:
    start = np.asarray(start, dtype=np.float64)
    if max_attempts is None:
        max_attempts = 50 * samples
    max_steps = int(40.0 / dt)
    dists = []
    attempts = 0
    batch = samples
    while True:
        streams = np.array([rng.substream(attempts + i).stream_id
                            for i in range(batch)], dtype=np.uint64)
        acc, dist = fastpath.csl_many(
            start[0], start[1], start[2], 1.0, float(dt), float(eps_thick),
            np.uint64(rng.master_seed), streams,
            idx.cell_size, idx._keys, idx._starts, idx._items, idx.A, idx.B,
            idx._pilots, max_steps, float(dist_cutoff))
        attempts += batch
        dists.extend(dist[acc == 1].tolist())
        if attempts >= samples and (len(dists) >= min_accept or attempts >= max_attempts):
            break
        batch = min(samples, max_attempts - attempts)
        if batch <= 0:
            break
    return CslStartResult(start, attempts, len(dists), np.array(dists))


def separation_error_product(m0: int, C: float, C1: float, C2: float,
                             mmax: int):
    """Product over m of (1 - C^2 9^m C2^{1.5^{m/2}} / C1^{m 1.1^m}), the
    per-scale retention factors of the multiscale separation recursion,
    evaluated in log space; negative factors clamp to zero.  Returns
    (value, clamped)."""
    if m0 < 1 or mmax < m0:
        raise SlitError("need 1 <= m0 <= mmax")
    if not (0.0 < C1 < 1.0 and 0.0 < C2 < 1.0):
        raise SlitError("C1 and C2 must lie in (0, 1)")
    if C <= 0:
        raise SlitError("C must be positive")
    log_sum = 0.0
    clamped = False
    for m in range(m0, mmax + 1):
        log_term = (2.0 * math.log(C) + m * math.log(9.0)
                    + 1.5 ** (m / 2.0) * math.log(C2)
                    - m * 1.1 ** m * math.log(C1))
        if log_term >= 0.0:
            clamped = True
            return 0.0, True
        term = math.exp(log_term)
        if term >= 1.0:
            clamped = True
            return 0.0, True
        log_sum += math.log1p(-term)
    return math.exp(log_sum), clamped


def annulus_band_probs(a: float, r: float, b: float, cells: int,
                       polar_angle: float = 0.0, n_terms: int = 120) -> np.ndarray:
    """Closed-form (Legendre series) probabilities of exiting the annulus
    a < |x| < b through each equal-area latitude band of the outer sphere,
    never touching the inner sphere, for a start at radius r and polar angle
    polar_angle.  Independent oracle for the sampled layer kernels.

    Radial factors: R_l(r) = (r^l - a^{2l+1} r^{-l-1}) / (b^l - a^{2l+1} b^{-l-1});
    the band integral uses (2l+1) P_l = (P_{l+1} - P_{l-1})', so each band
    contributes R_l P_l(cos t) [P_{l+1} - P_{l-1}] / 2 across its z-interval.
    """
    from numpy.polynomial import legendre as L

    edges = equal_area_band_edges(cells)
    ct = math.cos(polar_angle)
    out = np.zeros(cells)
    for l in range(n_terms):
        num = r ** l - a ** (2 * l + 1) * r ** (-l - 1)
        den = b ** l - a ** (2 * l + 1) * b ** (-l - 1)
        rl = num / den
        pl_t = L.legval(ct, [0.0] * l + [1.0])
        if l == 0:
            seg = (edges[:-1] - edges[1:]) / 2.0
        else:
            cm = [0.0] * (l - 1) + [1.0]
            cp = [0.0] * (l + 1) + [1.0]
            upper = L.legval(edges[:-1], cp) - L.legval(edges[:-1], cm)
            lower = L.legval(edges[1:], cp) - L.legval(edges[1:], cm)
            seg = (upper - lower) / 2.0
        out += rl * pl_t * seg
    return out
