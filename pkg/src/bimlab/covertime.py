"""Cover-time machinery: exact geometric-sum distribution DP, the shift
inequality behind the induction bound, the Chernoff cover bound with its
v-selection rule, exact small-chain domination checks, and the cone-cover
replay driven by simulated traces."""

from dataclasses import dataclass, field
import math
from itertools import product

import numpy as np

from . import fastpath
from .geometry import ConeFamily
from .rng import RngStream


class CoverError(ValueError):
    pass


def transition_bound_f(c5: float = 1.0):
    """F(x) = c5 x log(1/x) + c5 x: the hitting-fraction bound shape for
    grouped-cone transitions; continuous, increasing, with divergent
    integral of 1/F at 0."""
    if c5 <= 0:
        raise CoverError("c5 must be positive")

    def F(x):
        x = np.asarray(x, dtype=np.float64)
        out = c5 * x * np.log(1.0 / np.where(x > 0, x, 1.0)) + c5 * x
        return float(out) if out.ndim == 0 else out

    return F


def integral_inverse_f(F, lo: float = 2.0 ** -30, n: int = 4096) -> float:
    """Numeric integral of 1/F over [lo, 1] on a log-spaced trapezoid grid."""
    xs = np.exp(np.linspace(math.log(lo), 0.0, n))
    vals = 1.0 / np.maximum(np.asarray([float(np.asarray(F(x))) for x in xs]), 1e-300)
    return float(np.trapezoid(vals, xs))


DIVERGENCE_GROWTH_FLOOR = 0.01


def inverse_integral_diverges(F) -> bool:
    """Divergence proxy for the integral of 1/F at 0: compare the integral at
    two dyadic cutoffs and require visible growth.  A convergent integral has
    a vanishing tail below 2^-30, while the admissible shapes (x log(1/x)
    grades and slower) keep accumulating mass; an absolute value threshold
    cannot work here since the admissible integrals grow as slowly as
    log log(1/cutoff)."""
    return (integral_inverse_f(F, lo=2.0 ** -60)
            - integral_inverse_f(F, lo=2.0 ** -30)) >= DIVERGENCE_GROWTH_FLOOR


@dataclass(frozen=True)
class CoverConfig:
    """Grouped cover experiment: n groups of m items, k processes, budget
    coefficient K, and the transition-bound function F on (0, 1]."""

    n: int
    m: int
    k: int
    K: float
    F: object = field(default=None)
    check_divergence: bool = True

    def __post_init__(self):
        if self.n < 1 or self.m < 0 or self.k < 1 or self.K <= 0:
            raise CoverError("need n >= 1, m >= 0, k >= 1, K > 0")
        if self.F is None:
            object.__setattr__(self, "F", transition_bound_f())
        # increasing and positive on a dyadic grid
        xs = 2.0 ** -np.arange(20, -1, -1.0)
        vals = np.array([float(np.asarray(self.F(x))) for x in xs])
        if (vals <= 0).any() or (np.diff(vals) < -1e-15).any():
            raise CoverError("F must be positive and nondecreasing on (0, 1]")
        if self.check_divergence and not inverse_integral_diverges(self.F):
            raise CoverError("integral of 1/F does not diverge (proxy test failed)")


@dataclass(frozen=True)
class GeomSumModel:
    """Success probabilities p_j = min(F(j/m), 1) for independent geometric
    variables on {1, 2, ...}, n groups with m items each."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or len(p) < 1:
            raise CoverError("probs must be a nonempty vector")
        if (p <= 0).any() or (p > 1).any():
            raise CoverError("probs must lie in (0, 1]")
        if (np.diff(p) < -1e-15).any():
            raise CoverError("probs must be nondecreasing")
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_f(cls, F, m: int) -> "GeomSumModel":
        j = np.arange(1, m + 1, dtype=np.float64)
        vals = np.minimum(np.asarray([float(np.asarray(F(x))) for x in j / m]), 1.0)
        return cls(vals)

    @property
    def m(self) -> int:
        return len(self.probs)


def geometric_sum_cdf(model: GeomSumModel, counts, r: int) -> float:
    """Exact P(sum over groups i of the first counts[i] geometric variables
    <= r), by pmf convolution truncated at r.

    Geometric on {1, 2, ...}: adding one variable with success p maps the
    partial pmf via new[s] = (1-p) new[s-1] + p old[s-1].
    """
    counts = [int(c) for c in np.atleast_1d(counts)]
    if any(c < 0 or c > model.m for c in counts):
        raise CoverError("counts must lie in [0, m]")
    if r < 0:
        return 0.0
    pmf = np.zeros(r + 1)
    pmf[0] = 1.0
    for c in counts:
        for j in range(c):
            p = model.probs[j]
            new = np.zeros(r + 1)
            for s in range(1, r + 1):
                new[s] = (1.0 - p) * new[s - 1] + p * pmf[s - 1]
            pmf = new
    return float(pmf.sum())


def check_shift_inequality(model: GeomSumModel, counts, i: int, r: int,
                           tol: float = 1e-12) -> bool:
    """L_r(counts) (1 - p_{k_i}) + L_r(counts with k_i - 1) p_{k_i}
    <= L_{r+1}(counts)."""
    counts = [int(c) for c in np.atleast_1d(counts)]
    ki = counts[i]
    if ki == 0:
        return True
    lowered = list(counts)
    lowered[i] = ki - 1
    p = model.probs[ki - 1]
    lhs = geometric_sum_cdf(model, counts, r) * (1.0 - p) \
        + geometric_sum_cdf(model, lowered, r) * p
    rhs = geometric_sum_cdf(model, counts, r + 1)
    return lhs <= rhs + tol


@dataclass
class ChernoffBound:
    v: float
    q: float
    m_threshold: int


def chernoff_cover_bound(cfg: CoverConfig, v_tol: float = 1e-12,
                         m_cap: int = 100_000) -> ChernoffBound:
    """Pick the tilt v > 0 with integral of 1/(e^v - 1 + F(x)) equal to 3K
    (bisection on the numeric integral), so that for every m past the
    returned threshold, P(sum of all n*m geometric variables <= K m n)
    < q^{mn} with q = e^{-vK}.

    The threshold is the first m where the discrete mean
    (1/m) sum_j 1/(e^v - 1 + F(j/m)) exceeds 2K.
    """
    F = cfg.F
    K = cfg.K
    xs = np.exp(np.linspace(math.log(2.0 ** -40), 0.0, 8192))
    fvals = np.maximum(np.asarray([float(np.asarray(F(x))) for x in xs]), 0.0)

    def integral(v):
        return float(np.trapezoid(1.0 / (math.exp(v) - 1.0 + fvals), xs))

    target = 3.0 * K
    if integral(1e-12) <= target:
        raise CoverError(
            "even a vanishing tilt cannot reach the 3K integral condition; "
            "F is inadmissible for this K")
    lo, hi = 1e-12, 1.0
    while integral(hi) > target:
        hi *= 2.0
        if hi > 1e6:
            raise CoverError("tilt search diverged")
    while hi - lo > v_tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if integral(mid) > target:
            lo = mid
        else:
            hi = mid
    v = lo  # largest tilt still satisfying the strict condition
    q = math.exp(-v * K)
    ev = math.exp(v) - 1.0
    m1 = None
    for m in range(1, m_cap + 1):
        j = np.arange(1, m + 1, dtype=np.float64)
        fv = np.asarray([float(np.asarray(F(x))) for x in j / m])
        if float(np.sum(1.0 / (ev + fv))) / m > 2.0 * K:
            m1 = m
            break
    if m1 is None:
        raise CoverError("no discrete threshold below the cap; K too large for F")
    return ChernoffBound(v=v, q=q, m_threshold=m1)


@dataclass(frozen=True)
class ItemChain:
    """Small Markov chain on n*m items (row-stochastic transitions plus an
    initial distribution) used for exact domination checks."""

    n: int
    m: int
    transition: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.transition, dtype=np.float64)
        p0 = np.asarray(self.initial, dtype=np.float64)
        size = self.n * self.m
        if t.shape != (size, size) or p0.shape != (size,):
            raise CoverError("transition/initial shapes must match n*m items")
        if (t < 0).any() or (p0 < 0).any():
            raise CoverError("probabilities must be nonnegative")
        if not np.allclose(t.sum(axis=1), 1.0, atol=1e-12) or not math.isclose(p0.sum(), 1.0, abs_tol=1e-12):
            raise CoverError("rows and the initial law must sum to 1")

    def group_of(self, item: int) -> int:
        return item // self.m


def chain_satisfies_f_condition(chain: ItemChain, F) -> bool:
    """For every state x and group i, the top-h transition mass into the
    group stays below F(h/m) times the total mass into the group (worst
    subsets are the top-h ones)."""
    m = chain.m
    rows = [chain.initial] + [chain.transition[x] for x in range(chain.n * chain.m)]
    for row in rows:
        for i in range(chain.n):
            seg = np.sort(row[i * m:(i + 1) * m])[::-1]
            tot = seg.sum()
            if tot <= 0:
                continue
            run = 0.0
            for h in range(1, m + 1):
                run += seg[h - 1]
                if run > float(np.asarray(F(h / m))) * tot + 1e-12:
                    return False
    return True


def dp_cover_domination(chain: ItemChain, r: int, F=None, tol: float = 1e-12):
    """Exact check that for every reachable prefix (state, visited set, time t)
    the conditional probability of covering all items by step r is dominated
    by the geometric-sum cdf at horizon r - t with the current unvisited
    counts.  Chain must satisfy the F-condition.  Returns (holds, worst_slack).
    """
    size = chain.n * chain.m
    if size > 12:
        raise CoverError("exact DP limited to at most 12 items")
    if F is None:
        F = transition_bound_f()
    if not chain_satisfies_f_condition(chain, F):
        raise CoverError("chain does not satisfy the F-condition")
    model = GeomSumModel.from_f(F, chain.m)
    full = (1 << size) - 1

    # backward DP: cover[t][x, mask] = P(all visited by step r | X_t = x, mask)
    cover_next = np.zeros((size, 1 << size))
    cover_next[:, full] = 1.0
    layers = [cover_next]
    for _ in range(r, 0, -1):
        prev = np.zeros((size, 1 << size))
        for mask in range(1 << size):
            if mask == full:
                prev[:, mask] = 1.0
                continue
            for x in range(size):
                acc = 0.0
                row = chain.transition[x]
                for y in range(size):
                    if row[y] > 0:
                        acc += row[y] * layers[-1][y, mask | (1 << y)]
                prev[x, mask] = acc
        layers.append(prev)
    layers.reverse()  # layers[t] applies at time t (t = 0 .. r)

    # reachability and the domination check; time t counts visited steps
    worst = np.inf
    reach = {(x, 1 << x) for x in range(size) if chain.initial[x] > 0}
    lr_cache = {}

    def l_bound(mask, horizon):
        key = (mask, horizon)
        if key not in lr_cache:
            counts = []
            for i in range(chain.n):
                unvis = 0
                for j in range(chain.m):
                    if not (mask >> (i * chain.m + j)) & 1:
                        unvis += 1
                counts.append(unvis)
            lr_cache[key] = geometric_sum_cdf(model, counts, horizon)
        return lr_cache[key]

    holds = True
    for t in range(1, r + 1):
        new_reach = set()
        for (x, mask) in reach:
            val = layers[t][x, mask]
            bound = l_bound(mask, r - t)
            slack = bound - val
            if slack < worst:
                worst = slack
            if slack < -tol:
                holds = False
            if t < r:
                row = chain.transition[x]
                for y in range(size):
                    if row[y] > 0:
                        new_reach.add((y, mask | (1 << y)))
        reach = new_reach
    return holds, float(worst)


@dataclass
class CoverOutcome:
    covered: bool
    transitions_used: int
    first_visit: np.ndarray  # hit index per tube, -1 when never visited
    visited_count: int


def simulate_cone_cover(traces, family: ConeFamily, budget: int,
                        rng: RngStream = None) -> CoverOutcome:
    """Replay the successive distinct-tube hit sequence of the sampled traces
    through the family's tubes, spending at most `budget` hits in total;
    reports whether every tube was visited.  The traces must be sampled
    finely enough that tube membership is resolved (see the geometry guard
    conventions)."""
    if budget < 0:
        raise CoverError("budget must be nonnegative")
    nm = family.n * family.m
    first_visit = np.full(nm, -1, dtype=np.int64)
    hits = 0
    if nm == 0:
        return CoverOutcome(True, 0, first_visit, 0)
    tdirs = np.ascontiguousarray(family.tube_dirs.reshape(nm, 3))
    gdirs = np.ascontiguousarray(family.group_dirs)
    for tr in traces:
        pts = np.ascontiguousarray(getattr(tr, "points", tr), dtype=np.float64)
        hits = int(fastpath.cover_replay(
            pts, gdirs, tdirs, family.group_chord, family.tube_chord,
            int(budget), first_visit, int(hits)))
        if hits >= budget:
            break
    visited = int(np.sum(first_visit >= 0))
    return CoverOutcome(visited == nm, hits, first_visit, visited)


def sphere_transition_count(p: float, start_level: int, rng: RngStream,
                            cutoff_level: int = None,
                            max_steps: int = 50_000_000) -> int:
    """Sphere-chain transitions before the level exceeds the far cutoff
    (default: the level of radius e^20, i.e. ceil(20 p)); the genuinely last
    visit of the small ball is not simulable, so a high fixed cutoff stands
    in for it."""
    from .brownian import simulate_sphere_chain
    if cutoff_level is None:
        cutoff_level = int(math.ceil(20.0 * p))
    return simulate_sphere_chain(p, start_level, rng, level_exceeds=cutoff_level,
                                 max_steps=max_steps)


def enumerate_geometric_tail(model: GeomSumModel, counts, r: int) -> float:
    """Brute-force oracle for geometric_sum_cdf: enumerate all outcome tuples
    with sum <= r (each variable on {1, ..., r})."""
    counts = [int(c) for c in np.atleast_1d(counts)]
    probs = []
    for c in counts:
        probs.extend(model.probs[:c])
    if not probs:
        return 1.0 if r >= 0 else 0.0
    total = 0.0
    T = len(probs)

    def rec(idx, remaining, acc):
        nonlocal total
        if idx == T:
            total += acc
            return
        p = probs[idx]
        # remaining budget must cover one unit per leftover variable
        for z in range(1, remaining - (T - idx - 1) + 1):
            rec(idx + 1, remaining - z, acc * (1.0 - p) ** (z - 1) * p)

    rec(0, r, 1.0)
    return total


def exhaustive_shift_check(model: GeomSumModel, n: int, r_max: int) -> bool:
    """check_shift_inequality over every count vector, index and horizon."""
    m = model.m
    for counts in product(range(m + 1), repeat=n):
        for i in range(n):
            for r in range(r_max + 1):
                if not check_shift_inequality(model, list(counts), i, r):
                    return False
    return True
