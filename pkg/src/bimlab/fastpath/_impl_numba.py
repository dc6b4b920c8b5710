"""numba implementations of the hot kernels.

Counter-based Philox 4x32-10 is inlined in scalar form; it must stay
bit-compatible with bimlab.rng.philox4x32 (tested).  All kernels are pure
functions of their arguments, so replays are exact and prange scheduling
cannot change results.
"""

import numpy as np
from numba import njit, prange

U64 = np.uint64
MASK32 = U64(0xFFFFFFFF)
_M0 = U64(0xD2511F53)
_M1 = U64(0xCD9E8D57)
_W0 = U64(0x9E3779B9)
_W1 = U64(0xBB67AE85)

PARALLEL = True


@njit(cache=True, inline="always")
def _philox(c0, c1, c2, c3, k0, k1):
    # all args uint64 holding 32-bit values
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> U64(32)
        lo0 = p0 & MASK32
        hi1 = p1 >> U64(32)
        lo1 = p1 & MASK32
        n0 = hi1 ^ c1 ^ k0
        n2 = hi0 ^ c3 ^ k1
        c0, c1, c2, c3 = n0, lo1, n2, lo0
        k0 = (k0 + _W0) & MASK32
        k1 = (k1 + _W1) & MASK32
    return c0, c1, c2, c3


@njit(cache=True, inline="always")
def _draw4(step, s_lo, s_hi, k_lo, k_hi):
    c0 = step & MASK32
    c1 = (step >> U64(32)) & MASK32
    x0, x1, x2, x3 = _philox(c0, c1, s_lo, s_hi, k_lo, k_hi)
    u0 = (np.float64(x0) + 0.5) * 2.0 ** -32
    u1 = (np.float64(x1) + 0.5) * 2.0 ** -32
    u2 = (np.float64(x2) + 0.5) * 2.0 ** -32
    u3 = (np.float64(x3) + 0.5) * 2.0 ** -32
    return u0, u1, u2, u3


@njit(cache=True, inline="always")
def _gauss3(step, s_lo, s_hi, k_lo, k_hi):
    # one counter -> two Box-Muller pairs; fourth normal discarded
    u0, u1, u2, u3 = _draw4(step, s_lo, s_hi, k_lo, k_hi)
    r0 = np.sqrt(-2.0 * np.log(u0))
    r1 = np.sqrt(-2.0 * np.log(u2))
    g0 = r0 * np.cos(2.0 * np.pi * u1)
    g1 = r0 * np.sin(2.0 * np.pi * u1)
    g2 = r1 * np.cos(2.0 * np.pi * u3)
    return g0, g1, g2


@njit(cache=True)
def philox_block(n_calls, start_ctr, stream, seed):
    """(n_calls, 4) uint32-valued uint64 words; parity check vs numpy path."""
    s_lo = stream & MASK32
    s_hi = (stream >> U64(32)) & MASK32
    k_lo = seed & MASK32
    k_hi = (seed >> U64(32)) & MASK32
    out = np.empty((n_calls, 4), dtype=np.uint64)
    for i in range(n_calls):
        step = start_ctr + U64(i)
        c0 = step & MASK32
        c1 = (step >> U64(32)) & MASK32
        x0, x1, x2, x3 = _philox(c0, c1, s_lo, s_hi, k_lo, k_hi)
        out[i, 0] = x0
        out[i, 1] = x1
        out[i, 2] = x2
        out[i, 3] = x3
    return out


# ---------------------------------------------------------------------------
# segment distances


@njit(cache=True, inline="always")
def _pt_seg_d2(px, py, pz, ax, ay, az, bx, by, bz):
    dx = bx - ax
    dy = by - ay
    dz = bz - az
    wx = px - ax
    wy = py - ay
    wz = pz - az
    ee = dx * dx + dy * dy + dz * dz
    t = 0.0
    if ee > 0.0:
        t = (wx * dx + wy * dy + wz * dz) / ee
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    cx = wx - t * dx
    cy = wy - t * dy
    cz = wz - t * dz
    return cx * cx + cy * cy + cz * cz


@njit(cache=True, inline="always")
def _clamp01(x):
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


@njit(cache=True, inline="always")
def _seg_seg_d2(px, py, pz, qx, qy, qz, ax, ay, az, bx, by, bz):
    d1x = qx - px
    d1y = qy - py
    d1z = qz - pz
    d2x = bx - ax
    d2y = by - ay
    d2z = bz - az
    rx = px - ax
    ry = py - ay
    rz = pz - az
    a = d1x * d1x + d1y * d1y + d1z * d1z
    e = d2x * d2x + d2y * d2y + d2z * d2z
    f = d2x * rx + d2y * ry + d2z * rz
    if a <= 1e-300 and e <= 1e-300:
        return rx * rx + ry * ry + rz * rz
    if a <= 1e-300:
        t = _clamp01(f / e)
        s = 0.0
    else:
        c = d1x * rx + d1y * ry + d1z * rz
        if e <= 1e-300:
            t = 0.0
            s = _clamp01(-c / a)
        else:
            b = d1x * d2x + d1y * d2y + d1z * d2z
            denom = a * e - b * b
            if denom > 0.0:
                s = _clamp01((b * f - c * e) / denom)
            else:
                s = 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = _clamp01(-c / a)
            elif t > 1.0:
                t = 1.0
                s = _clamp01((b - c) / a)
    gx = px + s * d1x - (ax + t * d2x)
    gy = py + s * d1y - (ay + t * d2y)
    gz = pz + s * d1z - (az + t * d2z)
    return gx * gx + gy * gy + gz * gz


@njit(cache=True, parallel=PARALLEL)
def brute_min_dist_points(pts, A, B):
    n = pts.shape[0]
    m = A.shape[0]
    out = np.empty(n)
    for i in prange(n):
        best = np.inf
        for j in range(m):
            d2 = _pt_seg_d2(
                pts[i, 0], pts[i, 1], pts[i, 2],
                A[j, 0], A[j, 1], A[j, 2], B[j, 0], B[j, 1], B[j, 2],
            )
            if d2 < best:
                best = d2
        out[i] = np.sqrt(best)
    return out


@njit(cache=True)
def chamfer_chebyshev(D):
    """In-place two-pass chessboard (L-inf) distance transform on a dense
    3D int32 grid seeded with 0 at occupied cells and a large cap elsewhere."""
    nx, ny, nz = D.shape
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                best = D[x, y, z]
                for dx in (-1, 0):
                    if x + dx < 0:
                        continue
                    for dy in (-1, 0, 1):
                        yy = y + dy
                        if yy < 0 or yy >= ny:
                            continue
                        for dz in (-1, 0, 1):
                            zz = z + dz
                            if zz < 0 or zz >= nz:
                                continue
                            if dx == 0 and (dy > 0 or (dy == 0 and dz >= 0)):
                                continue
                            v = D[x + dx, yy, zz] + 1
                            if v < best:
                                best = v
                D[x, y, z] = best
    for x in range(nx - 1, -1, -1):
        for y in range(ny - 1, -1, -1):
            for z in range(nz - 1, -1, -1):
                best = D[x, y, z]
                for dx in (0, 1):
                    if x + dx >= nx:
                        continue
                    for dy in (-1, 0, 1):
                        yy = y + dy
                        if yy < 0 or yy >= ny:
                            continue
                        for dz in (-1, 0, 1):
                            zz = z + dz
                            if zz < 0 or zz >= nz:
                                continue
                            if dx == 0 and (dy < 0 or (dy == 0 and dz <= 0)):
                                continue
                            v = D[x + dx, yy, zz] + 1
                            if v < best:
                                best = v
                D[x, y, z] = best


@njit(cache=True, inline="always")
def coarse_lower_bound(px, py, pz, cD, cdims, corigin, ccell):
    """Certified lower bound on the distance from p to the segment set, from
    the coarse chessboard field; 0 when no field is attached."""
    if cD.shape[0] == 0:
        return 0.0
    ix = np.int64(np.floor((px - corigin[0]) / ccell))
    iy = np.int64(np.floor((py - corigin[1]) / ccell))
    iz = np.int64(np.floor((pz - corigin[2]) / ccell))
    out = 0.0
    if ix < 0:
        out = max(out, (np.float64(-ix) - 1.0) * ccell)
        ix = 0
    elif ix >= cdims[0]:
        out = max(out, np.float64(ix - cdims[0]) * ccell)
        ix = cdims[0] - 1
    if iy < 0:
        out = max(out, (np.float64(-iy) - 1.0) * ccell)
        iy = 0
    elif iy >= cdims[1]:
        out = max(out, np.float64(iy - cdims[1]) * ccell)
        iy = cdims[1] - 1
    if iz < 0:
        out = max(out, (np.float64(-iz) - 1.0) * ccell)
        iz = 0
    elif iz >= cdims[2]:
        out = max(out, np.float64(iz - cdims[2]) * ccell)
        iz = cdims[2] - 1
    d = cD[(ix * cdims[1] + iy) * cdims[2] + iz]
    inner = (np.float64(d) - 1.0) * ccell
    if inner > out:
        out = inner
    return out


# ---------------------------------------------------------------------------
# spatial hash: sorted hashed cell keys + CSR item lists

_H1 = U64(0x8DA6B343)
_H2 = U64(0xD8163841)
_H3 = U64(0xCB1AB31F)


@njit(cache=True, inline="always")
def _cell_key(ix, iy, iz):
    return (U64(ix) * _H1) ^ (U64(iy) * _H2) ^ (U64(iz) * _H3)


@njit(cache=True, inline="always")
def _key_range(key, keys):
    # binary search for [lo, hi) of key in sorted array
    lo = 0
    hi = keys.shape[0]
    while lo < hi:
        mid = (lo + hi) // 2
        if keys[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    if lo >= keys.shape[0] or keys[lo] != key:
        return -1, -1
    first = lo
    hi = keys.shape[0]
    while lo < hi:
        mid = (lo + hi) // 2
        if keys[mid] <= key:
            lo = mid + 1
        else:
            hi = mid
    return first, lo


@njit(cache=True, inline="always")
def _cell_best(px, py, pz, ix, iy, iz, keys, starts, items, A, B, best):
    k = _cell_key(ix, iy, iz)
    lo, hi = _key_range(k, keys)
    if lo < 0:
        return best
    for s in range(lo, hi):
        for t in range(starts[s], starts[s + 1]):
            j = items[t]
            d2 = _pt_seg_d2(
                px, py, pz,
                A[j, 0], A[j, 1], A[j, 2], B[j, 0], B[j, 1], B[j, 2],
            )
            if d2 < best:
                best = d2
    return best


@njit(cache=True)
def grid_min_dist_point(px, py, pz, cell, keys, starts, items, A, B, pilots, cutoff):
    """Exact min distance to the segment set, searched in expanding cell
    shells.  Exact whenever the result is <= cutoff; any returned value
    > cutoff only certifies dist > cutoff.  Small sets scan directly."""
    if A.shape[0] <= 256:
        best = np.inf
        for j in range(A.shape[0]):
            d2 = _pt_seg_d2(px, py, pz, A[j, 0], A[j, 1], A[j, 2],
                            B[j, 0], B[j, 1], B[j, 2])
            if d2 < best:
                best = d2
        return np.sqrt(best)
    best = np.inf
    for pi in range(pilots.shape[0]):
        j = pilots[pi]
        d2 = _pt_seg_d2(px, py, pz, A[j, 0], A[j, 1], A[j, 2], B[j, 0], B[j, 1], B[j, 2])
        if d2 < best:
            best = d2
    ix = np.int64(np.floor(px / cell))
    iy = np.int64(np.floor(py / cell))
    iz = np.int64(np.floor(pz / cell))
    s = 0
    while True:
        lb = (s - 1) * cell
        if lb > 0.0 and lb * lb >= best:
            break
        if lb > cutoff:
            break
        if s == 0:
            best = _cell_best(px, py, pz, ix, iy, iz, keys, starts, items, A, B, best)
        else:
            for dx in range(-s, s + 1):
                for dy in range(-s, s + 1):
                    # faces dz = +-s plus rim
                    if abs(dx) == s or abs(dy) == s:
                        for dz in range(-s, s + 1):
                            best = _cell_best(px, py, pz, ix + dx, iy + dy, iz + dz,
                                              keys, starts, items, A, B, best)
                    else:
                        best = _cell_best(px, py, pz, ix + dx, iy + dy, iz - s,
                                          keys, starts, items, A, B, best)
                        best = _cell_best(px, py, pz, ix + dx, iy + dy, iz + s,
                                          keys, starts, items, A, B, best)
        s += 1
    return np.sqrt(best)


@njit(cache=True)
def grid_seg_min_dist(px, py, pz, qx, qy, qz, cell, keys, starts, items, A, B, rmax):
    """Min distance from segment [p,q] to the set, exact when <= rmax.
    Small sets scan directly (then the result is exact unconditionally)."""
    if A.shape[0] <= 256:
        best = np.inf
        for j in range(A.shape[0]):
            d2 = _seg_seg_d2(px, py, pz, qx, qy, qz,
                             A[j, 0], A[j, 1], A[j, 2], B[j, 0], B[j, 1], B[j, 2])
            if d2 < best:
                best = d2
        return np.sqrt(best)
    x0 = min(px, qx) - rmax
    x1 = max(px, qx) + rmax
    y0 = min(py, qy) - rmax
    y1 = max(py, qy) + rmax
    z0 = min(pz, qz) - rmax
    z1 = max(pz, qz) + rmax
    ix0 = np.int64(np.floor(x0 / cell))
    ix1 = np.int64(np.floor(x1 / cell))
    iy0 = np.int64(np.floor(y0 / cell))
    iy1 = np.int64(np.floor(y1 / cell))
    iz0 = np.int64(np.floor(z0 / cell))
    iz1 = np.int64(np.floor(z1 / cell))
    best = np.inf
    for ix in range(ix0, ix1 + 1):
        for iy in range(iy0, iy1 + 1):
            for iz in range(iz0, iz1 + 1):
                k = _cell_key(ix, iy, iz)
                lo, hi = _key_range(k, keys)
                if lo < 0:
                    continue
                for s in range(lo, hi):
                    for t in range(starts[s], starts[s + 1]):
                        j = items[t]
                        d2 = _seg_seg_d2(
                            px, py, pz, qx, qy, qz,
                            A[j, 0], A[j, 1], A[j, 2], B[j, 0], B[j, 1], B[j, 2],
                        )
                        if d2 < best:
                            best = d2
    return np.sqrt(best)


# ---------------------------------------------------------------------------
# Brownian path kernels


@njit(cache=True)
def bm_exit_chunk(px, py, pz, R, dt, seed, stream, step0, buf):
    """Advance a Gaussian walk from p, filling buf until sphere exit or buffer
    end.  Returns (filled, done, x, y, z, steps_used); the last stored point is
    projected onto the sphere when done."""
    sq = np.sqrt(dt)
    s_lo = stream & MASK32
    s_hi = (stream >> U64(32)) & MASK32
    k_lo = seed & MASK32
    k_hi = (seed >> U64(32)) & MASK32
    r2 = R * R
    n = buf.shape[0]
    for i in range(n):
        g0, g1, g2 = _gauss3(step0 + U64(i), s_lo, s_hi, k_lo, k_hi)
        qx = px + sq * g0
        qy = py + sq * g1
        qz = pz + sq * g2
        if qx * qx + qy * qy + qz * qz >= r2:
            dx = qx - px
            dy = qy - py
            dz = qz - pz
            a = dx * dx + dy * dy + dz * dz
            b = 2.0 * (px * dx + py * dy + pz * dz)
            c = px * px + py * py + pz * pz - r2
            t = (-b + np.sqrt(b * b - 4.0 * a * c)) / (2.0 * a)
            buf[i, 0] = px + t * dx
            buf[i, 1] = py + t * dy
            buf[i, 2] = pz + t * dz
            return i + 1, True, buf[i, 0], buf[i, 1], buf[i, 2], i + 1
        buf[i, 0] = qx
        buf[i, 1] = qy
        buf[i, 2] = qz
        px, py, pz = qx, qy, qz
    return n, False, px, py, pz, n


@njit(cache=True, parallel=PARALLEL)
def bm_survival_many(sx, sy, sz, R, dt, seed, streams, tube, tube_half,
                     cell, keys, starts, items, A, B, max_steps):
    """Walks from s until sphere exit, killed on approaching the segment set.

    class 0: exited, min path distance > tube
    class 1: exited, min distance in (tube/2, tube]
    class 2: came within tube/2 (killed)
    class 3: step cap reached
    """
    nw = streams.shape[0]
    cls = np.empty(nw, dtype=np.int8)
    nsteps = np.zeros(nw, dtype=np.int64)
    sq = np.sqrt(dt)
    r2 = R * R
    k_lo = seed & MASK32
    k_hi = (seed >> U64(32)) & MASK32
    for w in prange(nw):
        stream = streams[w]
        s_lo = stream & MASK32
        s_hi = (stream >> U64(32)) & MASK32
        px, py, pz = sx, sy, sz
        half_dead = False
        # distance at the start point
        d0 = grid_min_dist_point(px, py, pz, cell, keys, starts, items, A, B,
                                 np.empty(0, dtype=np.int64), tube)
        if d0 <= tube_half:
            cls[w] = 2
            continue
        if d0 <= tube:
            half_dead = True
        out = np.int8(3)
        used = max_steps
        for i in range(max_steps):
            g0, g1, g2 = _gauss3(U64(i), s_lo, s_hi, k_lo, k_hi)
            qx = px + sq * g0
            qy = py + sq * g1
            qz = pz + sq * g2
            d = grid_seg_min_dist(px, py, pz, qx, qy, qz,
                                  cell, keys, starts, items, A, B, tube)
            if d <= tube_half:
                out = np.int8(2)
                used = i + 1
                break
            if d <= tube:
                half_dead = True
            if qx * qx + qy * qy + qz * qz >= r2:
                out = np.int8(1) if half_dead else np.int8(0)
                used = i + 1
                break
            px, py, pz = qx, qy, qz
        nsteps[w] = used
        cls[w] = out
    return cls, nsteps


@njit(cache=True, parallel=PARALLEL)
def wos_many(starts, outer_R, inner_R, eps, max_steps, seed, streams,
             cell, keys, starts_arr, items, A, B, pilots):
    """Walk-on-spheres in ball(outer_R) minus (optional ball(inner_R) and the
    indexed slit).  flags: 0 outer, 1 slit, 2 step cap, 3 inner."""
    nw = streams.shape[0]
    exits = np.empty((nw, 3))
    flags = np.empty(nw, dtype=np.int8)
    nsteps = np.zeros(nw, dtype=np.int64)
    k_lo = seed & MASK32
    k_hi = (seed >> U64(32)) & MASK32
    has_slit = A.shape[0] > 0
    for w in prange(nw):
        stream = streams[w]
        s_lo = stream & MASK32
        s_hi = (stream >> U64(32)) & MASK32
        px = starts[w, 0]
        py = starts[w, 1]
        pz = starts[w, 2]
        flag = np.int8(2)
        used = max_steps
        for i in range(max_steps):
            rr = np.sqrt(px * px + py * py + pz * pz)
            d_out = outer_R - rr
            d_in = rr - inner_R if inner_R > 0.0 else np.inf
            qcut = min(d_out, d_in)
            if qcut < eps:
                qcut = eps
            if has_slit:
                d_slit = grid_min_dist_point(px, py, pz, cell, keys, starts_arr,
                                             items, A, B, pilots, qcut)
            else:
                d_slit = np.inf
            if d_slit <= eps:
                flag = np.int8(1)
                used = i
                break
            if d_out <= eps:
                sc = outer_R / rr
                px *= sc
                py *= sc
                pz *= sc
                flag = np.int8(0)
                used = i
                break
            if d_in <= eps:
                flag = np.int8(3)
                used = i
                break
            rho = min(d_out, min(d_in, d_slit))
            g0, g1, g2 = _gauss3(U64(i), s_lo, s_hi, k_lo, k_hi)
            nrm = np.sqrt(g0 * g0 + g1 * g1 + g2 * g2)
            if nrm < 1e-14:
                g0, g1, g2 = 1.0, 0.0, 0.0
                nrm = 1.0
            px += rho * g0 / nrm
            py += rho * g1 / nrm
            pz += rho * g2 / nrm
        nsteps[w] = used
        exits[w, 0] = px
        exits[w, 1] = py
        exits[w, 2] = pz
        flags[w] = flag
    return exits, flags, nsteps


@njit(cache=True, parallel=PARALLEL)
def zn_wos_many(sx, sy, sz, R, tube, eps, max_steps, seed, streams,
                cell, keys, starts_arr, items, A, B,
                cD, cdims, corigin, ccell):
    """Walk-on-spheres survival for the sausage-avoidance event: walks from s
    absorb on the sphere of radius R (flag 0, survived) or on the tube-sausage
    of the indexed segments within an eps capture shell (flag 1); flag 2 =
    step cap.

    Far from the sausage the coarse chessboard field supplies a certified
    clearance (smaller spheres keep the walk exact in law); the fine hash is
    only consulted near the tube, where its ring search is shallow."""
    nw = streams.shape[0]
    flags = np.full(nw, np.int8(2))
    k_lo = seed & MASK32
    k_hi = (seed >> U64(32)) & MASK32
    empty_pilots = np.empty(0, dtype=np.int64)
    for w in prange(nw):
        stream = streams[w]
        s_lo = stream & MASK32
        s_hi = (stream >> U64(32)) & MASK32
        px, py, pz = sx, sy, sz
        carried = 0.0  # certified clearance left over from the last query
        for i in range(max_steps):
            rr = np.sqrt(px * px + py * py + pz * pz)
            d_out = R - rr
            clearance = carried
            if clearance <= eps:
                lb = coarse_lower_bound(px, py, pz, cD, cdims, corigin, ccell)
                if lb - tube > clearance:
                    clearance = lb - tube
            if clearance <= eps:
                qc = min(d_out, 6.0 * ccell) + tube + eps
                d_slit = grid_min_dist_point(px, py, pz, cell, keys, starts_arr,
                                             items, A, B, empty_pilots, qc)
                if d_slit <= tube + eps:
                    flags[w] = 1
                    break
                clearance = min(d_slit, qc) - tube
            if d_out <= eps:
                flags[w] = 0
                break
            rho = min(d_out, clearance)
            carried = clearance - rho
            g0, g1, g2 = _gauss3(U64(i), s_lo, s_hi, k_lo, k_hi)
            nrm = np.sqrt(g0 * g0 + g1 * g1 + g2 * g2)
            if nrm < 1e-14:
                g0, g1, g2 = 1.0, 0.0, 0.0
                nrm = 1.0
            px += rho * g0 / nrm
            py += rho * g1 / nrm
            pz += rho * g2 / nrm
    return flags


@njit(cache=True, parallel=PARALLEL)
def cyl_hit_wos_many(d, x0, y0, z0, eps, max_steps, seed, streams):
    """WoS in the unit cylinder (radius 1, height pi), absorbing on the inner
    cylinder of radius d (hit) or the walls/caps (miss).  flag 1 = hit."""
    nw = streams.shape[0]
    flags = np.zeros(nw, dtype=np.int8)
    k_lo = seed & MASK32
    k_hi = (seed >> U64(32)) & MASK32
    for w in prange(nw):
        stream = streams[w]
        s_lo = stream & MASK32
        s_hi = (stream >> U64(32)) & MASK32
        px, py, pz = x0, y0, z0
        for i in range(max_steps):
            rad = np.sqrt(px * px + py * py)
            d_hit = rad - d
            d_wall = 1.0 - rad
            d_cap = min(pz, np.pi - pz)
            if d_hit <= eps:
                flags[w] = 1
                break
            if d_wall <= eps or d_cap <= eps:
                flags[w] = 0
                break
            rho = min(d_hit, min(d_wall, d_cap))
            g0, g1, g2 = _gauss3(U64(i), s_lo, s_hi, k_lo, k_hi)
            nrm = np.sqrt(g0 * g0 + g1 * g1 + g2 * g2)
            if nrm < 1e-14:
                g0, g1, g2 = 1.0, 0.0, 0.0
                nrm = 1.0
            px += rho * g0 / nrm
            py += rho * g1 / nrm
            pz += rho * g2 / nrm
    return flags


@njit(cache=True)
def chain_levels(p_down, t0, nsteps, seed, stream):
    """Sphere-index chain: one uniform per step, -1 with probability p_down."""
    s_lo = stream & MASK32
    s_hi = (stream >> U64(32)) & MASK32
    k_lo = seed & MASK32
    k_hi = (seed >> U64(32)) & MASK32
    out = np.empty(nsteps + 1, dtype=np.int64)
    out[0] = t0
    lvl = t0
    for i in range(nsteps):
        u0, u1, u2, u3 = _draw4(U64(i), s_lo, s_hi, k_lo, k_hi)
        if u0 < p_down:
            lvl -= 1
        else:
            lvl += 1
        out[i + 1] = lvl
    return out


@njit(cache=True)
def chain_count_until(p_down, t0, cutoff, max_steps, seed, stream):
    """Steps taken before the chain level first exceeds cutoff."""
    if t0 > cutoff:
        return np.int64(0)
    s_lo = stream & MASK32
    s_hi = (stream >> U64(32)) & MASK32
    k_lo = seed & MASK32
    k_hi = (seed >> U64(32)) & MASK32
    lvl = t0
    for i in range(max_steps):
        u0, u1, u2, u3 = _draw4(U64(i), s_lo, s_hi, k_lo, k_hi)
        if u0 < p_down:
            lvl -= 1
        else:
            lvl += 1
        if lvl > cutoff:
            return np.int64(i + 1)
    return np.int64(max_steps)


@njit(cache=True, parallel=PARALLEL)
def csl_many(sx, sy, sz, R, dt, eps_thick, seed, streams,
             cell, keys, starts, items, A, B, pilots, max_steps, dist_cutoff):
    """Gaussian walks from s to the sphere of radius R, rejected on touching
    the eps-thickened segment set.  Returns acceptance flags and, for accepted
    walks, the distance from the exit point to the set (exact whenever it is
    <= dist_cutoff; larger returns only certify dist > dist_cutoff)."""
    nw = streams.shape[0]
    acc = np.zeros(nw, dtype=np.int8)
    dist = np.full(nw, np.nan)
    sq = np.sqrt(dt)
    r2 = R * R
    k_lo = seed & MASK32
    k_hi = (seed >> U64(32)) & MASK32
    for w in prange(nw):
        stream = streams[w]
        s_lo = stream & MASK32
        s_hi = (stream >> U64(32)) & MASK32
        px, py, pz = sx, sy, sz
        d0 = grid_min_dist_point(px, py, pz, cell, keys, starts, items, A, B,
                                 np.empty(0, dtype=np.int64), eps_thick)
        if d0 <= eps_thick:
            continue
        for i in range(max_steps):
            g0, g1, g2 = _gauss3(U64(i), s_lo, s_hi, k_lo, k_hi)
            qx = px + sq * g0
            qy = py + sq * g1
            qz = pz + sq * g2
            d = grid_seg_min_dist(px, py, pz, qx, qy, qz,
                                  cell, keys, starts, items, A, B, eps_thick)
            if d <= eps_thick:
                break
            if qx * qx + qy * qy + qz * qz >= r2:
                dx = qx - px
                dy = qy - py
                dz = qz - pz
                a = dx * dx + dy * dy + dz * dz
                b = 2.0 * (px * dx + py * dy + pz * dz)
                c = px * px + py * py + pz * pz - r2
                t = (-b + np.sqrt(b * b - 4.0 * a * c)) / (2.0 * a)
                ex = px + t * dx
                ey = py + t * dy
                ez = pz + t * dz
                acc[w] = 1
                dist[w] = grid_min_dist_point(ex, ey, ez, cell, keys, starts,
                                              items, A, B, pilots, dist_cutoff)
                break
            px, py, pz = qx, qy, qz
    return acc, dist


@njit(cache=True, parallel=PARALLEL)
def conestay_many(sx, sy, sz, vx, vy, vz, dx, dy, dz, chord, rball, R_exit,
                  dt, seed, streams, max_steps):
    """Fraction-style survival: walk stays in cone(vertex, dir, chord) union
    ball(vertex, rball) until exiting the sphere of radius R_exit."""
    nw = streams.shape[0]
    ok = np.zeros(nw, dtype=np.int8)
    sq = np.sqrt(dt)
    r2 = R_exit * R_exit
    c2half = 1.0 - 0.5 * chord * chord
    k_lo = seed & MASK32
    k_hi = (seed >> U64(32)) & MASK32
    for w in prange(nw):
        stream = streams[w]
        s_lo = stream & MASK32
        s_hi = (stream >> U64(32)) & MASK32
        px, py, pz = sx, sy, sz
        for i in range(max_steps):
            g0, g1, g2 = _gauss3(U64(i), s_lo, s_hi, k_lo, k_hi)
            qx = px + sq * g0
            qy = py + sq * g1
            qz = pz + sq * g2
            if qx * qx + qy * qy + qz * qz >= r2:
                ok[w] = 1
                break
            zx = qx - vx
            zy = qy - vy
            zz = qz - vz
            zn = np.sqrt(zx * zx + zy * zy + zz * zz)
            if zn > rball:
                # chordal condition |z/|z| - v| <= chord
                if zx * dx + zy * dy + zz * dz < zn * c2half:
                    break
            px, py, pz = qx, qy, qz
    return ok


@njit(cache=True)
def cover_replay(pts, gdirs, tdirs, s_chord, t_chord, budget, first_visit, start_hits):
    """Replay successive distinct-tube hits along a sampled path.

    gdirs: (n,3) group directions, tdirs: (n*m,3) tube directions.  A sample
    belongs to tube (i,j) when its direction is within chordal t_chord of
    tdirs[i*m+j] (tubes are disjoint).  first_visit is updated in place with
    the hit index (stopping-time order); returns hits used so far."""
    n = gdirs.shape[0]
    nm = tdirs.shape[0]
    m = nm // n if n > 0 else 0
    sc = 1.0 - 0.5 * s_chord * s_chord
    tc = 1.0 - 0.5 * t_chord * t_chord
    current = np.int64(-1)
    hits = start_hits
    for t in range(pts.shape[0]):
        if hits >= budget:
            break
        x = pts[t, 0]
        y = pts[t, 1]
        z = pts[t, 2]
        rn = np.sqrt(x * x + y * y + z * z)
        if rn <= 0.0:
            continue
        gi = -1
        for i in range(n):
            if x * gdirs[i, 0] + y * gdirs[i, 1] + z * gdirs[i, 2] >= rn * sc:
                gi = i
                break
        if gi < 0:
            continue
        tj = -1
        for j in range(m):
            f = gi * m + j
            if x * tdirs[f, 0] + y * tdirs[f, 1] + z * tdirs[f, 2] >= rn * tc:
                tj = f
                break
        if tj < 0:
            continue
        if tj != current:
            if first_visit[tj] < 0:
                first_visit[tj] = hits
            hits += 1
            current = tj
    return hits


@njit(cache=True)
def _cone_block_thresholds(samples, cone_chord, guard_abs, guard_frac, ball_R):
    """Per-sample dot threshold: the sample blocks direction v exactly when
    v . z >= thr (the capped-cone distance is monotone in the angle between
    v and z).  thr = +inf means the sample never blocks, -inf blocks all."""
    ns = samples.shape[0]
    thr = np.empty(ns)
    alpha = 2.0 * np.arcsin(0.5 * min(cone_chord, 2.0))
    for s in range(ns):
        zx = samples[s, 0]
        zy = samples[s, 1]
        zz = samples[s, 2]
        zn = np.sqrt(zx * zx + zy * zy + zz * zz)
        g = guard_abs
        gf = guard_frac * zn
        if gf < g:
            g = gf
        if zn <= 0.0:
            thr[s] = -np.inf
            continue
        if zn > ball_R + g:
            thr[s] = np.inf
            continue
        if zn <= ball_R:
            if g >= zn:
                thr[s] = -np.inf
                continue
            beta_max = np.arcsin(g / zn)
        else:
            # beyond the cap: inside-direction distance is zn - ball_R <= g;
            # rim case solves zn^2 + R^2 - 2 R zn cos(beta) = g^2
            beta_lat = np.arcsin(min(g / zn, 1.0))
            if zn * np.cos(beta_lat) <= ball_R:
                beta_max = beta_lat
            else:
                cb = (zn * zn + ball_R * ball_R - g * g) / (2.0 * ball_R * zn)
                if cb > 1.0:
                    cb = 1.0
                elif cb < -1.0:
                    cb = -1.0
                beta_max = np.arccos(cb)
        theta_max = alpha + beta_max
        if theta_max >= np.pi:
            thr[s] = -np.inf
        else:
            thr[s] = zn * np.cos(theta_max)
    return thr


@njit(cache=True, parallel=PARALLEL)
def cone_block_mask(samples, cand, cone_chord, guard_abs, guard_frac, ball_R):
    """Mark candidate directions whose cone (radius cone_chord, capped at
    ball_R around the origin) passes within the per-sample guard
    min(guard_abs, guard_frac |z|) of some sample.  uint8 mask, 1 = blocked."""
    nc = cand.shape[0]
    ns = samples.shape[0]
    thr = _cone_block_thresholds(samples, cone_chord, guard_abs, guard_frac, ball_R)
    blocked = np.zeros(nc, dtype=np.uint8)
    for c in prange(nc):
        vx = cand[c, 0]
        vy = cand[c, 1]
        vz = cand[c, 2]
        for s in range(ns):
            if samples[s, 0] * vx + samples[s, 1] * vy + samples[s, 2] * vz >= thr[s]:
                blocked[c] = 1
                break
    return blocked
