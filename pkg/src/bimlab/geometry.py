"""Geometric primitives: cones, cylinders, sausages, spatial-hash polyline
index, the grouped cone family construction, uncovered-cone search, and the
multi-scale escape polyline.

Cone radii are chordal throughout: C(v, r) = {x != 0 : |x/|x| - v| <= r},
optionally translated to a vertex and capped at |x - vertex| <= length.  The
chordal radius r corresponds to half-aperture angle 2*arcsin(r/2).
"""

from dataclasses import dataclass, field
import math

import numpy as np

from . import fastpath
from ._backend import HAVE_NUMBA


class GeometryError(ValueError):
    pass


class ConeFamilyError(GeometryError):
    """Requested constants cannot be realized at this n."""


class EscapeError(GeometryError):
    """No certified uncovered cone at some construction level."""


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n <= 0:
        raise GeometryError("cannot normalize the zero vector")
    return v / n


def chord_from_angle(theta: float) -> float:
    return 2.0 * math.sin(0.5 * theta)


def angle_from_chord(c: float) -> float:
    return 2.0 * math.asin(0.5 * min(c, 2.0))


@dataclass(frozen=True)
class Cone:
    """Chordal cone with vertex; excludes the vertex itself."""

    vertex: np.ndarray
    direction: np.ndarray
    radius: float
    length: float = None

    def __post_init__(self):
        object.__setattr__(self, "vertex", np.asarray(self.vertex, dtype=np.float64))
        object.__setattr__(self, "direction", unit(self.direction))
        if not 0.0 < self.radius <= 2.0:
            raise GeometryError("cone radius must lie in (0, 2]")
        if self.length is not None and self.length <= 0:
            raise GeometryError("length cap must be positive")

    def contains(self, x) -> bool:
        return cone_contains(self, x)


@dataclass(frozen=True)
class Cylinder:
    """Infinite cylinder around the line through the origin along direction."""

    direction: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "direction", unit(self.direction))
        if self.radius <= 0:
            raise GeometryError("cylinder radius must be positive")

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=np.float64)
        perp = x - (x @ self.direction) * self.direction
        return float(perp @ perp) <= self.radius ** 2


def cone_contains(c: Cone, x) -> bool:
    z = np.asarray(x, dtype=np.float64) - c.vertex
    zn = np.linalg.norm(z)
    if zn == 0.0:
        return False
    if c.length is not None and zn > c.length:
        return False
    return float(np.linalg.norm(z / zn - c.direction)) <= c.radius


def cone_set_distance(points, direction, chord, ball_R=np.inf, vertex=None) -> np.ndarray:
    """Exact distance from each point to C(direction, chord) intersected with
    the ball of radius ball_R about the vertex (vertex defaults to origin)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if vertex is not None:
        pts = pts - np.asarray(vertex, dtype=np.float64)[None, :]
    v = unit(direction)
    zn = np.linalg.norm(pts, axis=1)
    alpha = angle_from_chord(chord)
    with np.errstate(invalid="ignore"):
        ct = np.clip(pts @ v / np.where(zn > 0, zn, 1.0), -1.0, 1.0)
    theta = np.arccos(ct)
    beta = theta - alpha
    inside = beta <= 0.0
    far = beta >= 0.5 * np.pi
    lateral = zn * np.sin(np.clip(beta, 0.0, 0.5 * np.pi))
    if np.isinf(ball_R):
        d = np.where(inside, 0.0, np.where(far, zn, lateral))
    else:
        tstar = zn * np.cos(np.clip(beta, 0.0, 0.5 * np.pi))
        rim = np.sqrt(np.maximum(
            zn ** 2 + ball_R ** 2 - 2.0 * ball_R * zn * np.cos(np.clip(beta, 0.0, np.pi)), 0.0))
        d = np.where(
            inside,
            np.maximum(zn - ball_R, 0.0),
            np.where(far, zn, np.where(tstar <= ball_R, lateral, rim)),
        )
    d = np.where(zn == 0.0, 0.0, d)
    return d if d.shape != (1,) else d


def local_ball(z, n: int, r0: float):
    """Ball around z of radius r0 |z| / sqrt(n); requires n > 4 r0^2 so the
    radius stays below |z|/2."""
    z = np.asarray(z, dtype=np.float64)
    zn = np.linalg.norm(z)
    if zn <= 0:
        raise GeometryError("local ball needs |z| > 0")
    if n < 1 or r0 <= 0 or n <= 4 * r0 * r0:
        raise GeometryError("need n >= 1, r0 > 0 and n > 4 r0^2")
    return z.copy(), r0 * zn / math.sqrt(n)


def fibonacci_directions(n: int) -> np.ndarray:
    """n near-uniform unit vectors (golden-angle spiral lattice)."""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    phi = i * (math.pi * (3.0 - math.sqrt(5.0)))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


# ---------------------------------------------------------------------------
# polyline index


def _empty_grid():
    return (np.empty(0, dtype=np.uint64), np.zeros(1, dtype=np.int64),
            np.empty(0, dtype=np.int64))


_H1 = np.uint64(0x8DA6B343)
_H2 = np.uint64(0xD8163841)
_H3 = np.uint64(0xCB1AB31F)


def _build_coarse_field(A: np.ndarray, B: np.ndarray, max_dim: int = None):
    """Chebyshev distance transform over a coarse dense voxelization of the
    segments.  (D[cell] - 1) * cell_size is a certified lower bound on the
    Euclidean distance from any point in the cell to the segment set; used to
    skip far-field hash searches."""
    if max_dim is None:
        max_dim = int(np.clip(4.0 * len(A) ** (1.0 / 3.0), 32, 128))
    lo = np.minimum(A, B).min(axis=0)
    hi = np.maximum(A, B).max(axis=0)
    span = float((hi - lo).max())
    if span <= 0:
        span = 1.0
    cell = span / max_dim
    dims = np.maximum(np.ceil((hi - lo) / cell).astype(np.int64) + 1, 1)
    occ = np.zeros(tuple(dims), dtype=bool)
    s_lo = np.floor((np.minimum(A, B) - lo) / cell).astype(np.int64)
    s_hi = np.floor((np.maximum(A, B) - lo) / cell).astype(np.int64)
    spans = s_hi - s_lo + 1
    for dx in range(int(spans[:, 0].max())):
        mx = spans[:, 0] > dx
        for dy in range(int(spans[mx, 1].max())):
            mxy = mx & (spans[:, 1] > dy)
            for dz in range(int(spans[mxy, 2].max())):
                m = mxy & (spans[:, 2] > dz)
                if m.any():
                    occ[s_lo[m, 0] + dx, s_lo[m, 1] + dy, s_lo[m, 2] + dz] = True
    cap = int(dims.sum()) + 3
    D = np.where(occ, 0, cap).astype(np.int32)
    from .fastpath import chamfer_chebyshev

    chamfer_chebyshev(D)
    return (np.ascontiguousarray(D.reshape(-1)), dims.astype(np.int64),
            lo.astype(np.float64), float(cell))


def _hash_cells(ix, iy, iz):
    return ((ix.astype(np.uint64) * _H1) ^ (iy.astype(np.uint64) * _H2)
            ^ (iz.astype(np.uint64) * _H3))


def _build_grid(A: np.ndarray, B: np.ndarray, cell: float):
    """Hashed cell table: each segment stamped into every cell its bbox
    touches (hash collisions only ever add candidates, never lose them).
    Segments spanning a single cell (the common case for fine polylines on a
    coarse grid) take a fully vectorized path."""
    lo = np.floor(np.minimum(A, B) / cell).astype(np.int64)
    hi = np.floor(np.maximum(A, B) / cell).astype(np.int64)
    spans = hi - lo + 1
    key_parts, seg_parts = [], []
    all_idx = np.arange(len(A), dtype=np.int64)
    for dx in range(int(spans[:, 0].max())):
        mx = spans[:, 0] > dx
        for dy in range(int(spans[mx, 1].max())):
            mxy = mx & (spans[:, 1] > dy)
            for dz in range(int(spans[mxy, 2].max())):
                m = mxy & (spans[:, 2] > dz)
                if not m.any():
                    continue
                key_parts.append(_hash_cells(lo[m, 0] + dx, lo[m, 1] + dy,
                                             lo[m, 2] + dz))
                seg_parts.append(all_idx[m])
    keys = np.concatenate(key_parts)
    segs = np.concatenate(seg_parts)
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    segs = segs[order]
    uniq, starts = np.unique(keys, return_index=True)
    starts = np.append(starts, len(keys)).astype(np.int64)
    return uniq, starts, segs


class PolylineIndex:
    """Spatial hash over a frozen set of 3D segments with exact distance
    queries (the grid accelerates; it never approximates).  Immutable after
    construction; all queries are read-only."""

    def __init__(self, A, B, cell_size: float = None, dt: float = None):
        A = np.ascontiguousarray(np.atleast_2d(A), dtype=np.float64)
        B = np.ascontiguousarray(np.atleast_2d(B), dtype=np.float64)
        if A.shape != B.shape or A.ndim != 2 or A.shape[1] != 3:
            raise GeometryError("segment endpoint arrays must be matching (M, 3)")
        self.A = A
        self.B = B
        self.dt = dt
        if cell_size is None:
            if len(A):
                lens = np.linalg.norm(B - A, axis=1)
                cell_size = float(np.median(lens[lens > 0])) if (lens > 0).any() else 1.0
            else:
                cell_size = 1.0
        if cell_size <= 0:
            raise GeometryError("cell size must be positive")
        self.cell_size = float(cell_size)
        if HAVE_NUMBA and len(A):
            self._keys, self._starts, self._items = _build_grid(A, B, self.cell_size)
        else:
            self._keys, self._starts, self._items = _empty_grid()
        if len(A) > 256:
            self._cD, self._cdims, self._corigin, self._ccell = _build_coarse_field(A, B)
        else:
            self._cD = np.empty(0, dtype=np.int32)
            self._cdims = np.ones(3, dtype=np.int64)
            self._corigin = np.zeros(3)
            self._ccell = 1.0
        if len(A):
            self._pilots = np.unique(np.linspace(0, len(A) - 1, num=min(8, len(A)), dtype=np.int64))
            self.max_segment_length = float(np.linalg.norm(B - A, axis=1).max())
        else:
            self._pilots = np.empty(0, dtype=np.int64)
            self.max_segment_length = 0.0

    @classmethod
    def from_points(cls, points, cell_size: float = None, dt: float = None):
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if len(pts) == 1:
            return cls(pts, pts, cell_size=cell_size, dt=dt)
        return cls(pts[:-1], pts[1:], cell_size=cell_size, dt=dt)

    @classmethod
    def from_paths(cls, paths, cell_size: float = None, dt: float = None):
        As, Bs = [], []
        for p in paths:
            pts = np.atleast_2d(np.asarray(getattr(p, "points", p), dtype=np.float64))
            if len(pts) == 1:
                As.append(pts)
                Bs.append(pts)
            else:
                As.append(pts[:-1])
                Bs.append(pts[1:])
            if dt is None:
                dt = getattr(p, "dt", None)
        return cls(np.vstack(As), np.vstack(Bs), cell_size=cell_size, dt=dt)

    def __len__(self):
        return len(self.A)

    @property
    def points(self) -> np.ndarray:
        """Segment endpoints (used as the sample set by direction searches)."""
        if not len(self.A):
            return np.empty((0, 3))
        return np.vstack([self.A, self.B[-1:]])

    @property
    def delta_guard(self) -> float:
        """Sampling-compensation margin 3 sqrt(dt log(1/dt)); 0 for exact
        (synthetic) polylines."""
        if self.dt is None or self.dt <= 0:
            return 0.0
        return 3.0 * math.sqrt(self.dt * math.log(1.0 / self.dt))

    def _grid_args(self):
        return (self.cell_size, self._keys, self._starts, self._items, self.A, self.B)

    def min_dist(self, x, cutoff: float = np.inf) -> float:
        """Exact min distance from x to the segments whenever the result is
        <= cutoff; any value > cutoff only certifies distance > cutoff."""
        if not len(self.A):
            return np.inf
        x = np.asarray(x, dtype=np.float64)
        if not np.isfinite(cutoff) and not len(self._pilots):
            raise GeometryError("unbounded query on an empty index")
        return float(fastpath.grid_min_dist_point(
            x[0], x[1], x[2], *self._grid_args(), self._pilots, cutoff))

    def segment_min_dist(self, p, q, rmax: float) -> float:
        """Min distance from segment [p, q] to the set, exact when <= rmax."""
        if not len(self.A):
            return np.inf
        p = np.asarray(p, dtype=np.float64)
        q = np.asarray(q, dtype=np.float64)
        return float(fastpath.grid_seg_min_dist(
            p[0], p[1], p[2], q[0], q[1], q[2], *self._grid_args(), rmax))

    def within(self, x, r: float) -> bool:
        return self.min_dist(x, cutoff=r) <= r

    def brute_min_dist(self, x) -> float:
        """Reference scan over every segment (no grid)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return fastpath.brute_min_dist_points(x, self.A, self.B)


def sausage_contains(idx: PolylineIndex, r: float, x) -> bool:
    """x lies in the r-sausage of the indexed segments."""
    if r < 0:
        raise GeometryError("sausage radius must be nonnegative")
    return idx.within(x, r)


# ---------------------------------------------------------------------------
# cone family


@dataclass(frozen=True)
class ConeFamily:
    """n groups of m tube cones: group cones S_i = C(v_i, d0/sqrt(n)), tube
    cones T_ij = C(v_ij, u1^-n), guard cones V_ij = C(v_ij, c0/(m sqrt n))."""

    n: int
    m: int
    u1: float
    d0: float
    c0: float
    c1: float
    c3: float
    group_dirs: np.ndarray = field(repr=False)
    tube_dirs: np.ndarray = field(repr=False)

    @property
    def group_chord(self) -> float:
        return self.d0 / math.sqrt(self.n)

    @property
    def tube_chord(self) -> float:
        return self.u1 ** (-self.n)

    @property
    def guard_chord(self) -> float:
        if self.m == 0:
            return 0.0
        return self.c0 / (self.m * math.sqrt(self.n))

    def group_cone(self, i: int) -> Cone:
        return Cone(np.zeros(3), self.group_dirs[i], self.group_chord)

    def tube_cone(self, i: int, j: int) -> Cone:
        return Cone(np.zeros(3), self.tube_dirs[i, j], self.tube_chord)

    def guard_cone(self, i: int, j: int) -> Cone:
        return Cone(np.zeros(3), self.tube_dirs[i, j], self.guard_chord)

    def check_invariants(self) -> list:
        """Exhaustive pairwise verification; returns human-readable
        violations (empty list = all hold)."""
        out = []
        n, m = self.n, self.m
        sep = 12.0 * self.d0 / math.sqrt(n)
        alpha_s = angle_from_chord(self.group_chord)
        alpha_v = angle_from_chord(self.guard_chord) if m else 0.0
        alpha_t = angle_from_chord(self.tube_chord)
        g = self.group_dirs
        for i in range(n):
            for i2 in range(i + 1, n):
                if np.linalg.norm(g[i] - g[i2]) <= sep:
                    out.append(f"groups {i},{i2} closer than 12 d0/sqrt(n)")
        if m == 0:
            return out
        if self.tube_chord > self.guard_chord:
            out.append("tube radius exceeds guard radius")
        for i in range(n):
            for j in range(m):
                ang = math.acos(min(1.0, max(-1.0, float(self.tube_dirs[i, j] @ g[i]))))
                if ang + alpha_v > alpha_s + 1e-15:
                    out.append(f"guard cone ({i},{j}) not inside its group cone")
                margin = 2.0 * math.sin(0.5 * max(alpha_s - ang, 0.0))
                if margin < self.c1 / math.sqrt(n) - 1e-15:
                    out.append(f"tube ({i},{j}) too close to the group boundary")
            for j in range(m):
                for l in range(j + 1, m):
                    ang = math.acos(min(1.0, max(-1.0, float(self.tube_dirs[i, j] @ self.tube_dirs[i, l]))))
                    if ang <= 2.0 * alpha_v:
                        out.append(f"guard cones ({i},{j}) and ({i},{l}) overlap")
                    worst = 2.0 * math.sin(0.5 * max(ang - alpha_v, 0.0))
                    if worst < self.c1 * abs(j - l) / (m * math.sqrt(n)) - 1e-15:
                        out.append(f"tubes ({i},{j})->({i},{l}) violate the graded separation")
        _ = alpha_t
        return out


DEFAULT_FAMILY_CONSTS = {"d0": 0.05, "c0": 0.01, "c1": 0.005, "c3": 0.25}


def build_cone_family(n: int, u1: float, consts: dict = None) -> ConeFamily:
    """Construct the grouped cone system: group directions from a spherical
    spiral lattice greedily filtered to the 12 d0/sqrt(n) spacing, tube
    directions equally spaced on a great-circle arc through each group center.
    Raises ConeFamilyError when the constants cannot be realized."""
    if n < 1:
        raise ConeFamilyError("need n >= 1")
    if u1 <= 1.0:
        raise ConeFamilyError("need u1 > 1")
    c = dict(DEFAULT_FAMILY_CONSTS)
    if consts:
        c.update(consts)
    d0, c0, c1, c3 = c["d0"], c["c0"], c["c1"], c["c3"]
    if min(d0, c0, c1, c3) <= 0:
        raise ConeFamilyError("construction constants must be positive")
    m = int(math.floor(c3 * n))
    sep = 12.0 * d0 / math.sqrt(n)
    if sep >= 2.0:
        raise ConeFamilyError(f"group spacing {sep:.3g} exceeds the sphere diameter")

    # group directions: greedy filter of a spiral lattice
    cand_n = max(8 * n, 256)
    dirs = None
    while cand_n <= 2 ** 22:
        cand = fibonacci_directions(cand_n)
        chosen = []
        sep2 = sep * sep
        for v in cand:
            ok = True
            for w in chosen:
                d = v - w
                if d @ d <= sep2:
                    ok = False
                    break
            if ok:
                chosen.append(v)
                if len(chosen) == n:
                    break
        if len(chosen) == n:
            dirs = np.array(chosen)
            break
        cand_n *= 4
    if dirs is None:
        raise ConeFamilyError(
            f"cannot place {n} group directions at spacing {sep:.3g}")

    if m == 0:
        tube_dirs = np.empty((n, 0, 3))
        return ConeFamily(n, m, u1, d0, c0, c1, c3, dirs, tube_dirs)

    alpha_s = angle_from_chord(d0 / math.sqrt(n))
    guard_chord = c0 / (m * math.sqrt(n))
    alpha_v = angle_from_chord(guard_chord)
    pitch_chord = (c1 + 2.0 * c0) / (m * math.sqrt(n))
    pitch_ang = angle_from_chord(pitch_chord)
    margin_ang = angle_from_chord(c1 / math.sqrt(n))
    half_extent = 0.5 * (m - 1) * pitch_ang
    if half_extent + max(alpha_v, margin_ang) >= alpha_s:
        raise ConeFamilyError(
            "tube arc does not fit inside the group cone; reduce c0/c1/c3 or d0")
    if u1 ** (-n) > guard_chord:
        raise ConeFamilyError(
            f"tube radius u1^-n = {u1 ** (-n):.3g} exceeds the guard radius "
            f"{guard_chord:.3g}; increase n or u1")

    tube_dirs = np.empty((n, m, 3))
    for i in range(n):
        v = dirs[i]
        # any tangent direction at v
        a = np.array([1.0, 0.0, 0.0]) if abs(v[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        t = unit(np.cross(v, a))
        for j in range(m):
            ang = (j - 0.5 * (m - 1)) * pitch_ang
            tube_dirs[i, j] = math.cos(ang) * v + math.sin(ang) * t
    fam = ConeFamily(n, m, u1, d0, c0, c1, c3, dirs, tube_dirs)
    bad = fam.check_invariants()
    if bad:
        raise ConeFamilyError("constructed family violates invariants: " + "; ".join(bad[:5]))
    return fam


def sandwich_check(f: ConeFamily, z, i: int, j: int, n_samples: int = 100_000,
                   seed: int = 7) -> bool:
    """Sampled containment check inside the local ball around z: the inner
    cylinder slice sits inside the tube cone, which sits inside the outer
    cylinder slice.  Cylinder radii u1^-n |z|/2 and 2 u1^-n |z|."""
    z = np.asarray(z, dtype=np.float64)
    center, rad = local_ball(z, f.n, 4.0 * f.d0)
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n_samples, 3))
    pts /= np.linalg.norm(pts, axis=1)[:, None]
    pts *= rad * rng.uniform(size=n_samples)[:, None] ** (1.0 / 3.0)
    pts += center
    zn = np.linalg.norm(z)
    v = f.tube_dirs[i, j]
    axial = pts @ v
    perp2 = np.einsum("ij,ij->i", pts, pts) - axial ** 2
    r_in = f.tube_chord * zn / 2.0
    r_out = 2.0 * f.tube_chord * zn
    in_inner = perp2 <= r_in ** 2
    pn = np.linalg.norm(pts, axis=1)
    ok = pn > 0
    chordal2 = 2.0 - 2.0 * (pts @ v) / np.where(ok, pn, 1.0)
    in_tube = ok & (chordal2 <= f.tube_chord ** 2)
    in_outer = perp2 <= r_out ** 2
    inner_ok = np.all(~in_inner | in_tube)
    outer_ok = np.all(~in_tube | in_outer)
    return bool(inner_ok and outer_ok)


# ---------------------------------------------------------------------------
# uncovered-cone search


def uncovered_cone_distance(idx: PolylineIndex, direction, chord: float,
                            vertex=None, ball_radius: float = 2.0) -> float:
    """Min distance from every indexed sample point to the capped cone; > 0
    certifies that no sample lies in the cone."""
    pts = idx.points
    if vertex is not None:
        pts = pts - np.asarray(vertex, dtype=np.float64)[None, :]
    if not len(pts):
        return np.inf
    d = cone_set_distance(pts, direction, chord, ball_R=ball_radius)
    return float(np.min(d))


def verify_cone_clear_of_segments(idx: PolylineIndex, direction, chord: float,
                                  vertex=None, ball_radius: float = 2.0,
                                  max_depth: int = 40):
    """Certify that no indexed segment meets the capped cone, by adaptive
    bisection: a piece with endpoint clearances d1, d2 and length L is clear
    when min(d1, d2) > L/2; inconclusive pieces split.  Returns
    (certified, min_endpoint_distance)."""
    if not len(idx):
        return True, np.inf
    off = np.zeros(3) if vertex is None else np.asarray(vertex, dtype=np.float64)
    A = idx.A - off
    B = idx.B - off
    dA = cone_set_distance(A, direction, chord, ball_R=ball_radius)
    dB = cone_set_distance(B, direction, chord, ball_R=ball_radius)
    seen_min = float(min(dA.min(), dB.min()))
    if seen_min <= 0.0:
        return False, seen_min
    for _ in range(max_depth):
        lens = np.linalg.norm(B - A, axis=1)
        hot = np.minimum(dA, dB) <= lens / 2.0
        if not hot.any():
            return True, seen_min
        A, B, dA, dB = A[hot], B[hot], dA[hot], dB[hot]
        mid = 0.5 * (A + B)
        dM = cone_set_distance(mid, direction, chord, ball_R=ball_radius)
        if (dM <= 0.0).any():
            return False, 0.0
        A = np.vstack([A, mid])
        B = np.vstack([mid, B])
        dA = np.concatenate([dA, dM])
        dB = np.concatenate([dM, dB])
    return False, seen_min  # ran out of depth: refuse to certify


def find_uncovered_cone(idx: PolylineIndex, n: int, u1: float, preferred=None,
                        vertex=None, ball_radius: float = 2.0,
                        guard: float = None, guard_frac: float = 0.25):
    """Search for a direction v whose cone C(v, u1^-n), capped at ball_radius
    around the vertex (default origin), keeps a guard margin from every
    indexed sample point.

    The guard for a sample at distance s from the vertex is
    min(guard, guard_frac * s): the absolute term is the sampling-modulus
    margin carried by the index, the proportional cap keeps the margin
    meaningful at scales below it (a sample can never block more than an
    O(guard_frac) cap of directions).  Returns a unit vector or None.

    Candidate directions come from a spiral lattice with pitch about half the
    cone radius, so any uncovered cap of radius u1^-n has a lattice witness.
    The winning candidate is re-verified with exact cone distances.
    """
    if u1 <= 1.0:
        raise GeometryError("need u1 > 1")
    chord = u1 ** (-float(n))
    if guard is None:
        guard = idx.delta_guard
    pts = idx.points
    if vertex is not None:
        pts = pts - np.asarray(vertex, dtype=np.float64)[None, :]
    n_cand = int(min(max(64, math.ceil(49.0 / chord ** 2)), 300_000))
    cand = fibonacci_directions(n_cand)
    if preferred is not None:
        pdir, thresh = preferred
        pdir = unit(pdir)
        keep = cand @ pdir > thresh
        if not keep.any():
            cand = pdir[None, :]
        else:
            order = np.argsort(-(cand[keep] @ pdir), kind="stable")
            cand = cand[keep][order]
            cand = np.vstack([pdir[None, :], cand])
    if not len(pts):
        return unit(cand[0])
    blocked = fastpath.cone_block_mask(
        np.ascontiguousarray(pts), np.ascontiguousarray(cand),
        chord, float(guard), float(guard_frac), float(ball_radius))
    free = np.nonzero(blocked == 0)[0]
    eff = np.minimum(guard, guard_frac * np.linalg.norm(pts, axis=1))
    for ci in free:
        v = cand[ci]
        d = cone_set_distance(pts, v, chord, ball_R=ball_radius)
        if np.all(d > eff) and np.all(d > 0.0):
            return unit(v)
    return None


# ---------------------------------------------------------------------------
# escape polyline


@dataclass
class EscapePolyline:
    """Dyadic escape path: vertices, per-vertex construction level (negative
    for the terminal straight run), and the scale parameters used."""

    vertices: np.ndarray
    levels: np.ndarray
    u1: float
    n_start: int
    n_floor: int

    def cumulative_length(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])


def default_escape_floor(u1: float) -> int:
    """Smallest level whose step 10 (u1/2)^m fits comfortably in the unit
    ball (10 (u1/2)^m <= 1/4)."""
    m = 3
    while 10.0 * (u1 / 2.0) ** m > 0.25:
        m += 1
    return m


def _snap_to_lattice(z, spacing, idx, max_radius=1.0):
    """Nearest lattice point of spacing*Z^3 within spacing of z, inside the
    unit ball and off the indexed set; None when no corner qualifies."""
    base = np.floor(z / spacing)
    best = None
    best_d = np.inf
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                y = (base + np.array([dx, dy, dz])) * spacing
                dist = np.linalg.norm(y - z)
                if dist >= spacing:
                    continue
                if np.linalg.norm(y) >= max_radius:
                    continue
                if idx.min_dist(y, cutoff=spacing) <= 0.0:
                    continue
                if dist < best_d:
                    best, best_d = y, dist
    return best


def build_escape_polyline(x, idx: PolylineIndex, u1: float, x0,
                          n_floor: int = None, guard_frac: float = 0.25) -> EscapePolyline:
    """Multi-scale polyline from x to x0 through uncovered cones.

    Level count n = 1 + max(n_floor, floor(-log2 dist(x, complement))) where
    the complement is the indexed set together with the unit-sphere exterior.
    At each level m the next waypoint is y_m + 10 (u1/2)^m v with v an
    uncovered direction at vertex y_m (preferring to point away from the
    nearest obstacle), then snapped to the 2^-(m-1) lattice.  Raises
    EscapeError when no certified cone exists at some level."""
    x = np.asarray(x, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if np.linalg.norm(x) >= 1.0:
        raise GeometryError("start must lie inside the unit ball")
    if not 1.0 < u1 < 1.5:
        raise GeometryError("need 1 < u1 < 1.5")
    d_here = min(idx.min_dist(x, cutoff=2.0), 1.0 - float(np.linalg.norm(x)))
    if d_here <= 0.0:
        raise GeometryError("start touches the indexed set")
    if n_floor is None:
        n_floor = default_escape_floor(u1)
    n_start = 1 + max(n_floor, int(math.floor(-math.log2(d_here))))

    verts = [x.copy()]
    levels = [n_start]
    y = _snap_to_lattice(x, 2.0 ** (-n_start), idx)
    if y is None:
        raise EscapeError(f"no admissible lattice point near the start at level {n_start}")
    verts.append(y)
    levels.append(n_start)
    for m in range(n_start, n_floor, -1):
        # keep the jump (and its snap ball) inside the unit ball: when the
        # vertex sits near the boundary, only inward-pointing directions with
        # |y + s v| < 1 for s up to the jump length are admissible
        reach = 10.0 * (u1 / 2.0) ** m + 2.0 ** (-m + 2)
        yn = float(np.linalg.norm(y))
        t_in = (yn * yn + reach * reach - 1.0) / (2.0 * reach * yn) if yn > 0 else -1.0
        if t_in >= 0.98:
            raise EscapeError(
                f"level-{m} jump cannot stay inside the unit ball from |y|={yn:.3f}")
        if t_in > -0.98:
            preferred = (-y / yn, max(t_in, -0.98))
        elif len(idx):
            # otherwise prefer pointing away from the nearest obstacle point
            pts = idx.points - y[None, :]
            nrm = np.linalg.norm(pts, axis=1)
            k = int(np.argmin(nrm))
            preferred = (-pts[k] / nrm[k], 0.0) if nrm[k] > 0 else None
        else:
            preferred = None
        v = find_uncovered_cone(idx, m, u1, preferred=preferred, vertex=y,
                                ball_radius=1.0, guard_frac=guard_frac)
        if v is None:
            raise EscapeError(f"no uncovered cone at level {m} (vertex {y})")
        z = y + 10.0 * (u1 / 2.0) ** m * v
        verts.append(z)
        levels.append(m - 1)
        y = _snap_to_lattice(z, 2.0 ** (-(m - 1)), idx)
        if y is None:
            raise EscapeError(f"no admissible lattice point near level {m - 1}")
        verts.append(y)
        levels.append(m - 1)
    verts.append(x0.copy())
    levels.append(-1)
    poly = EscapePolyline(np.array(verts), np.array(levels, dtype=np.int64),
                          u1, n_start, n_floor)
    for p in poly.vertices:
        if len(idx) and idx.min_dist(p, cutoff=1.0) <= 0.0:
            raise EscapeError("constructed vertex touches the indexed set")
    return poly


def holder_profile(poly: EscapePolyline, idx: PolylineIndex, beta: float = 0.9):
    """Per-vertex ratio of traversed length to dist(vertex, complement)^beta;
    the max is the smallest constant making the length bound hold on this
    polyline.  The complement includes the unit-sphere exterior."""
    lens = poly.cumulative_length()
    ds = np.empty(len(poly.vertices))
    for i, p in enumerate(poly.vertices):
        d_set = idx.min_dist(p, cutoff=4.0) if len(idx) else np.inf
        ds[i] = min(d_set, max(1.0 - float(np.linalg.norm(p)), 1e-300))
    ratios = lens / np.maximum(ds, 1e-300) ** beta
    return ratios, lens, ds
