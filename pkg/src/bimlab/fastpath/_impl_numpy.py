"""Pure numpy fallback for the hot kernels.

Same function surface and the same Philox counter consumption as the numba
implementation; grid arguments are accepted but queries run as vectorized
brute-force scans over all segments (exactness is trivial, speed is not the
point of this path).  Where the numba path runs one walk per thread, this one
loops walks in Python and vectorizes inside a walk.
"""

import numpy as np

from .. import rng as _rng

PARALLEL = False


def philox_block(n_calls, start_ctr, stream, seed):
    blk = _rng.raw_block(int(seed), int(stream), int(start_ctr), int(n_calls))
    return blk.astype(np.uint64)


def _uniform_block(seed, stream, start_ctr, n_calls):
    blk = _rng.raw_block(int(seed), int(stream), int(start_ctr), int(n_calls))
    return (blk.astype(np.float64) + 0.5) * 2.0 ** -32


def _gauss3_block(seed, stream, start_ctr, n_calls):
    """(n_calls, 3) Gaussian triples, one Philox call each (4th normal unused)."""
    u = _uniform_block(seed, stream, start_ctr, n_calls)
    r0 = np.sqrt(-2.0 * np.log(u[:, 0]))
    r1 = np.sqrt(-2.0 * np.log(u[:, 2]))
    g = np.empty((n_calls, 3))
    g[:, 0] = r0 * np.cos(2.0 * np.pi * u[:, 1])
    g[:, 1] = r0 * np.sin(2.0 * np.pi * u[:, 1])
    g[:, 2] = r1 * np.cos(2.0 * np.pi * u[:, 3])
    return g


# ---------------------------------------------------------------------------
# distances (vectorized over segments)


def _pt_segs_d2(p, A, B):
    d = B - A
    w = p[None, :] - A
    ee = np.einsum("ij,ij->i", d, d)
    t = np.zeros(len(A))
    nz = ee > 0.0
    t[nz] = np.einsum("ij,ij->i", w[nz], d[nz]) / ee[nz]
    np.clip(t, 0.0, 1.0, out=t)
    c = w - t[:, None] * d
    return np.einsum("ij,ij->i", c, c)


def _seg_segs_d2(p, q, A, B):
    """Squared distance from segment [p, q] to each segment [A_j, B_j]."""
    d1 = q - p
    d2 = B - A
    r = p[None, :] - A
    a = float(d1 @ d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    if a <= 1e-300:
        t = np.where(e > 1e-300, np.clip(f / np.where(e > 0, e, 1.0), 0.0, 1.0), 0.0)
        s = np.zeros_like(t)
    else:
        c = r @ d1
        b = d2 @ d1
        denom = a * e - b * b
        s = np.where(denom > 0.0, np.clip((b * f - c * e) / np.where(denom > 0, denom, 1.0), 0.0, 1.0), 0.0)
        t_raw = np.where(e > 1e-300, (b * s + f) / np.where(e > 0, e, 1.0), 0.0)
        t = np.clip(t_raw, 0.0, 1.0)
        s = np.where(t_raw < 0.0, np.clip(-c / a, 0.0, 1.0), s)
        s = np.where(t_raw > 1.0, np.clip((b - c) / a, 0.0, 1.0), s)
        # degenerate target segments
        s = np.where(e > 1e-300, s, np.clip(-c / a, 0.0, 1.0))
        t = np.where(e > 1e-300, t, 0.0)
    g = (p[None, :] + s[:, None] * d1[None, :]) - (A + t[:, None] * d2)
    return np.einsum("ij,ij->i", g, g)


def brute_min_dist_points(pts, A, B):
    out = np.empty(len(pts))
    for i, p in enumerate(pts):
        out[i] = np.sqrt(_pt_segs_d2(p, A, B).min()) if len(A) else np.inf
    return out


def grid_min_dist_point(px, py, pz, cell, keys, starts, items, A, B, pilots, cutoff):
    if len(A) == 0:
        return np.inf
    return float(np.sqrt(_pt_segs_d2(np.array([px, py, pz]), A, B).min()))


def grid_seg_min_dist(px, py, pz, qx, qy, qz, cell, keys, starts, items, A, B, rmax):
    if len(A) == 0:
        return np.inf
    return float(np.sqrt(_seg_segs_d2(np.array([px, py, pz]), np.array([qx, qy, qz]), A, B).min()))


# ---------------------------------------------------------------------------
# Brownian path kernels


def bm_exit_chunk(px, py, pz, R, dt, seed, stream, step0, buf):
    n = buf.shape[0]
    g = _gauss3_block(seed, stream, step0, n)
    pos = np.array([px, py, pz]) + np.cumsum(np.sqrt(dt) * g, axis=0)
    rad2 = np.einsum("ij,ij->i", pos, pos)
    hit = np.nonzero(rad2 >= R * R)[0]
    if len(hit) == 0:
        buf[:] = pos
        last = pos[-1]
        return n, False, last[0], last[1], last[2], n
    i = int(hit[0])
    buf[: i + 1] = pos[: i + 1]
    prev = pos[i - 1] if i > 0 else np.array([px, py, pz])
    delta = pos[i] - prev
    a = float(delta @ delta)
    b = 2.0 * float(prev @ delta)
    c = float(prev @ prev) - R * R
    t = (-b + np.sqrt(b * b - 4.0 * a * c)) / (2.0 * a)
    buf[i] = prev + t * delta
    return i + 1, True, buf[i, 0], buf[i, 1], buf[i, 2], i + 1


def bm_survival_many(sx, sy, sz, R, dt, seed, streams, tube, tube_half,
                     cell, keys, starts, items, A, B, max_steps):
    nw = len(streams)
    cls = np.empty(nw, dtype=np.int8)
    nsteps = np.zeros(nw, dtype=np.int64)
    start = np.array([sx, sy, sz])
    sq = np.sqrt(dt)
    for w in range(nw):
        stream = int(streams[w])
        p = start.copy()
        half_dead = False
        d0 = np.sqrt(_pt_segs_d2(p, A, B).min()) if len(A) else np.inf
        if d0 <= tube_half:
            cls[w] = 2
            continue
        if d0 <= tube:
            half_dead = True
        out = 3
        used = max_steps
        step = 0
        chunk = 512
        done = False
        while step < max_steps and not done:
            nblk = min(chunk, max_steps - step)
            g = _gauss3_block(seed, stream, step, nblk)
            pos = p + np.cumsum(sq * g, axis=0)
            prev = np.vstack([p, pos[:-1]])
            for i in range(nblk):
                d = (np.sqrt(_seg_segs_d2(prev[i], pos[i], A, B).min())
                     if len(A) else np.inf)
                if d <= tube_half:
                    out = 2
                    used = step + i + 1
                    done = True
                    break
                if d <= tube:
                    half_dead = True
                if pos[i] @ pos[i] >= R * R:
                    out = 1 if half_dead else 0
                    used = step + i + 1
                    done = True
                    break
            if not done:
                p = pos[-1]
                step += nblk
        cls[w] = out
        nsteps[w] = used
    return cls, nsteps


def wos_many(starts, outer_R, inner_R, eps, max_steps, seed, streams,
             cell, keys, starts_arr, items, A, B, pilots):
    nw = len(streams)
    exits = np.empty((nw, 3))
    flags = np.empty(nw, dtype=np.int8)
    nsteps = np.zeros(nw, dtype=np.int64)
    has_slit = len(A) > 0
    for w in range(nw):
        stream = int(streams[w])
        p = starts[w].copy()
        flag = 2
        used = max_steps
        for i in range(max_steps):
            rr = np.sqrt(p @ p)
            d_out = outer_R - rr
            d_in = rr - inner_R if inner_R > 0.0 else np.inf
            d_slit = np.sqrt(_pt_segs_d2(p, A, B).min()) if has_slit else np.inf
            if d_slit <= eps:
                flag = 1
                used = i
                break
            if d_out <= eps:
                p = p * (outer_R / rr)
                flag = 0
                used = i
                break
            if d_in <= eps:
                flag = 3
                used = i
                break
            rho = min(d_out, d_in, d_slit)
            g = _gauss3_block(seed, stream, i, 1)[0]
            nrm = np.sqrt(g @ g)
            if nrm < 1e-14:
                g = np.array([1.0, 0.0, 0.0])
                nrm = 1.0
            p = p + rho * g / nrm
        exits[w] = p
        flags[w] = flag
        nsteps[w] = used
    return exits, flags, nsteps


def chamfer_chebyshev(D):
    from scipy.ndimage import distance_transform_cdt

    dt = distance_transform_cdt(D != 0, metric="chessboard")
    np.copyto(D, dt.astype(D.dtype))


def coarse_lower_bound(px, py, pz, cD, cdims, corigin, ccell):
    if len(cD) == 0:
        return 0.0
    idx = np.floor((np.array([px, py, pz]) - corigin) / ccell).astype(np.int64)
    out = 0.0
    for a in range(3):
        if idx[a] < 0:
            out = max(out, (float(-idx[a]) - 1.0) * ccell)
            idx[a] = 0
        elif idx[a] >= cdims[a]:
            out = max(out, float(idx[a] - cdims[a]) * ccell)
            idx[a] = cdims[a] - 1
    d = cD[(idx[0] * cdims[1] + idx[1]) * cdims[2] + idx[2]]
    return max(out, (float(d) - 1.0) * ccell)


def zn_wos_many(sx, sy, sz, R, tube, eps, max_steps, seed, streams,
                cell, keys, starts_arr, items, A, B,
                cD, cdims, corigin, ccell):
    # mirrors the numba clearance bookkeeping so trajectories match across
    # backends up to floating-point library differences
    nw = len(streams)
    flags = np.full(nw, np.int8(2))
    for w in range(nw):
        stream = int(streams[w])
        p = np.array([sx, sy, sz])
        carried = 0.0
        for i in range(max_steps):
            rr = np.sqrt(p @ p)
            d_out = R - rr
            clearance = carried
            if clearance <= eps:
                lb = coarse_lower_bound(p[0], p[1], p[2], cD, cdims, corigin, ccell)
                if lb - tube > clearance:
                    clearance = lb - tube
            if clearance <= eps:
                qc = min(d_out, 6.0 * ccell) + tube + eps
                d_slit = np.sqrt(_pt_segs_d2(p, A, B).min()) if len(A) else np.inf
                if d_slit <= tube + eps:
                    flags[w] = 1
                    break
                clearance = min(d_slit, qc) - tube
            if d_out <= eps:
                flags[w] = 0
                break
            rho = min(d_out, clearance)
            carried = clearance - rho
            g = _gauss3_block(seed, stream, i, 1)[0]
            nrm = np.sqrt(g @ g)
            if nrm < 1e-14:
                g = np.array([1.0, 0.0, 0.0])
                nrm = 1.0
            p = p + rho * g / nrm
    return flags


def cyl_hit_wos_many(d, x0, y0, z0, eps, max_steps, seed, streams):
    nw = len(streams)
    flags = np.zeros(nw, dtype=np.int8)
    for w in range(nw):
        stream = int(streams[w])
        p = np.array([x0, y0, z0])
        for i in range(max_steps):
            rad = np.hypot(p[0], p[1])
            d_hit = rad - d
            d_wall = 1.0 - rad
            d_cap = min(p[2], np.pi - p[2])
            if d_hit <= eps:
                flags[w] = 1
                break
            if d_wall <= eps or d_cap <= eps:
                break
            rho = min(d_hit, d_wall, d_cap)
            g = _gauss3_block(seed, stream, i, 1)[0]
            nrm = np.sqrt(g @ g)
            if nrm < 1e-14:
                g = np.array([1.0, 0.0, 0.0])
                nrm = 1.0
            p = p + rho * g / nrm
    return flags


def chain_levels(p_down, t0, nsteps, seed, stream):
    u = _uniform_block(seed, stream, 0, nsteps)[:, 0] if nsteps else np.empty(0)
    steps = np.where(u < p_down, -1, 1)
    out = np.empty(nsteps + 1, dtype=np.int64)
    out[0] = t0
    if nsteps:
        out[1:] = t0 + np.cumsum(steps)
    return out


def chain_count_until(p_down, t0, cutoff, max_steps, seed, stream):
    if t0 > cutoff:
        return np.int64(0)
    lvl = t0
    step = 0
    chunk = 4096
    while step < max_steps:
        nblk = min(chunk, max_steps - step)
        u = _uniform_block(seed, stream, step, nblk)[:, 0]
        moves = np.where(u < p_down, -1, 1)
        levels = lvl + np.cumsum(moves)
        over = np.nonzero(levels > cutoff)[0]
        if len(over):
            return np.int64(step + int(over[0]) + 1)
        lvl = int(levels[-1])
        step += nblk
    return np.int64(max_steps)


def csl_many(sx, sy, sz, R, dt, eps_thick, seed, streams,
             cell, keys, starts, items, A, B, pilots, max_steps, dist_cutoff):
    nw = len(streams)
    acc = np.zeros(nw, dtype=np.int8)
    dist = np.full(nw, np.nan)
    start = np.array([sx, sy, sz])
    sq = np.sqrt(dt)
    for w in range(nw):
        stream = int(streams[w])
        p = start.copy()
        if len(A) and np.sqrt(_pt_segs_d2(p, A, B).min()) <= eps_thick:
            continue
        step = 0
        chunk = 512
        alive = True
        while step < max_steps and alive:
            nblk = min(chunk, max_steps - step)
            g = _gauss3_block(seed, stream, step, nblk)
            pos = p + np.cumsum(sq * g, axis=0)
            prev = np.vstack([p, pos[:-1]])
            for i in range(nblk):
                d = (np.sqrt(_seg_segs_d2(prev[i], pos[i], A, B).min())
                     if len(A) else np.inf)
                if d <= eps_thick:
                    alive = False
                    break
                if pos[i] @ pos[i] >= R * R:
                    delta = pos[i] - prev[i]
                    a = float(delta @ delta)
                    b = 2.0 * float(prev[i] @ delta)
                    c = float(prev[i] @ prev[i]) - R * R
                    t = (-b + np.sqrt(b * b - 4.0 * a * c)) / (2.0 * a)
                    e = prev[i] + t * delta
                    acc[w] = 1
                    dist[w] = (np.sqrt(_pt_segs_d2(e, A, B).min())
                               if len(A) else np.inf)
                    alive = False
                    break
            if alive:
                p = pos[-1]
                step += nblk
    return acc, dist


def conestay_many(sx, sy, sz, vx, vy, vz, dx, dy, dz, chord, rball, R_exit,
                  dt, seed, streams, max_steps):
    nw = len(streams)
    ok = np.zeros(nw, dtype=np.int8)
    sq = np.sqrt(dt)
    v = np.array([vx, vy, vz])
    axis = np.array([dx, dy, dz])
    c2half = 1.0 - 0.5 * chord * chord
    for w in range(nw):
        stream = int(streams[w])
        p = np.array([sx, sy, sz])
        step = 0
        chunk = 512
        alive = True
        while step < max_steps and alive:
            nblk = min(chunk, max_steps - step)
            g = _gauss3_block(seed, stream, step, nblk)
            pos = p + np.cumsum(sq * g, axis=0)
            for i in range(nblk):
                q = pos[i]
                if q @ q >= R_exit * R_exit:
                    ok[w] = 1
                    alive = False
                    break
                z = q - v
                zn = np.sqrt(z @ z)
                if zn > rball and z @ axis < zn * c2half:
                    alive = False
                    break
            if alive:
                p = pos[-1]
                step += nblk
    return ok


def cover_replay(pts, gdirs, tdirs, s_chord, t_chord, budget, first_visit, start_hits):
    n = len(gdirs)
    nm = len(tdirs)
    m = nm // n if n > 0 else 0
    sc = 1.0 - 0.5 * s_chord * s_chord
    tc = 1.0 - 0.5 * t_chord * t_chord
    current = -1
    hits = start_hits
    rn = np.sqrt(np.einsum("ij,ij->i", pts, pts))
    valid = rn > 0.0
    gdot = pts @ gdirs.T  # (T, n)
    tdot = pts @ tdirs.T  # (T, nm)
    in_group = gdot >= rn[:, None] * sc
    in_tube = tdot >= rn[:, None] * tc
    for t in range(len(pts)):
        if hits >= budget:
            break
        if not valid[t]:
            continue
        gs = np.nonzero(in_group[t])[0]
        if len(gs) == 0:
            continue
        gi = int(gs[0])
        tj = -1
        for j in range(m):
            if in_tube[t, gi * m + j]:
                tj = gi * m + j
                break
        if tj < 0:
            continue
        if tj != current:
            if first_visit[tj] < 0:
                first_visit[tj] = hits
            hits += 1
            current = tj
    return hits


def _cone_block_thresholds(samples, cone_chord, guard_abs, guard_frac, ball_R):
    zn = np.sqrt(np.einsum("ij,ij->i", samples, samples))
    guard = np.minimum(guard_abs, guard_frac * zn)
    alpha = 2.0 * np.arcsin(0.5 * min(cone_chord, 2.0))
    safe_zn = np.where(zn > 0, zn, 1.0)
    beta_lat = np.arcsin(np.clip(guard / safe_zn, 0.0, 1.0))
    cb = np.clip((zn ** 2 + ball_R ** 2 - guard ** 2)
                 / (2.0 * ball_R * safe_zn), -1.0, 1.0)
    beta_rim = np.arccos(cb)
    use_lat = (zn <= ball_R) | (safe_zn * np.cos(beta_lat) <= ball_R)
    beta_max = np.where(use_lat, beta_lat, beta_rim)
    theta_max = alpha + beta_max
    thr = zn * np.cos(theta_max)
    thr = np.where(theta_max >= np.pi, -np.inf, thr)
    thr = np.where(zn <= 0.0, -np.inf, thr)
    thr = np.where((zn <= ball_R) & (guard >= zn), -np.inf, thr)
    thr = np.where(zn > ball_R + guard, np.inf, thr)
    return thr


def cone_block_mask(samples, cand, cone_chord, guard_abs, guard_frac, ball_R):
    nc = len(cand)
    if len(samples) == 0:
        return np.zeros(nc, dtype=np.uint8)
    thr = _cone_block_thresholds(samples, cone_chord, guard_abs, guard_frac, ball_R)
    finite = np.isfinite(thr)
    if (thr == -np.inf).any():
        return np.ones(nc, dtype=np.uint8)
    dots = samples[finite] @ cand.T  # (S, C)
    return (dots >= thr[finite][:, None]).any(axis=0).astype(np.uint8)
